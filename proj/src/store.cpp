#include "ardm/store.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <ctime>
#include <utility>

#include <nlohmann/json.hpp>

#include "ardm/errors.hpp"

namespace ardm {

namespace {

std::string format_double(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

[[noreturn]] void throw_db_error(sqlite3* db, const std::string& context) {
  std::string msg = context;
  if (db != nullptr) {
    msg += ": ";
    msg += sqlite3_errmsg(db);
  }
  throw StoreError(msg);
}

}  // namespace

Store::Store(Store&& other) noexcept
    : db_(std::exchange(other.db_, nullptr)), path_(std::move(other.path_)) {}

Store& Store::operator=(Store&& other) noexcept {
  if (this != &other) {
    if (db_ != nullptr) sqlite3_close_v2(db_);
    db_ = std::exchange(other.db_, nullptr);
    path_ = std::move(other.path_);
  }
  return *this;
}

Store::~Store() {
  if (db_ != nullptr) sqlite3_close_v2(db_);
}

Store Store::open(const std::filesystem::path& path, bool create,
                  bool read_only) {
  int flags = read_only ? SQLITE_OPEN_READONLY : SQLITE_OPEN_READWRITE;
  if (create && !read_only) flags |= SQLITE_OPEN_CREATE;

  Store store;
  store.path_ = path;
  int rc = sqlite3_open_v2(path.string().c_str(), &store.db_, flags, nullptr);
  if (rc != SQLITE_OK) {
    std::string msg = store.db_ != nullptr ? sqlite3_errmsg(store.db_)
                                           : sqlite3_errstr(rc);
    if (store.db_ != nullptr) {
      sqlite3_close_v2(store.db_);
      store.db_ = nullptr;
    }
    throw StoreError("cannot open store at " + path.string() + ": " + msg);
  }
  sqlite3_busy_timeout(store.db_, 0);
  sqlite3_extended_result_codes(store.db_, 0);
  return store;
}

int Store::schema_version() const {
  if (!table_exists("schema_version")) return 0;
  Statement stmt(db_, "SELECT version FROM schema_version");
  if (!stmt.step()) return 0;
  return static_cast<int>(stmt.int64(0));
}

Store::Statement::Statement(sqlite3* db, const std::string& sql) : db_(db) {
  if (db_ == nullptr) throw StoreError("store is not open");
  int rc = sqlite3_prepare_v2(db_, sql.c_str(), -1, &stmt_, nullptr);
  if (rc != SQLITE_OK) throw_db_error(db_, "prepare failed for: " + sql);
}

Store::Statement::Statement(Statement&& other) noexcept
    : db_(std::exchange(other.db_, nullptr)),
      stmt_(std::exchange(other.stmt_, nullptr)) {}

Store::Statement::~Statement() {
  if (stmt_ != nullptr) sqlite3_finalize(stmt_);
}

Store::Statement& Store::Statement::bind_int64(int idx, std::int64_t v) {
  if (sqlite3_bind_int64(stmt_, idx, v) != SQLITE_OK) {
    throw_db_error(db_, "bind failed");
  }
  return *this;
}

Store::Statement& Store::Statement::bind_double(int idx, double v) {
  if (sqlite3_bind_double(stmt_, idx, v) != SQLITE_OK) {
    throw_db_error(db_, "bind failed");
  }
  return *this;
}

Store::Statement& Store::Statement::bind_text(int idx, const std::string& v) {
  if (sqlite3_bind_text(stmt_, idx, v.c_str(), static_cast<int>(v.size()),
                        SQLITE_TRANSIENT) != SQLITE_OK) {
    throw_db_error(db_, "bind failed");
  }
  return *this;
}

Store::Statement& Store::Statement::bind_null(int idx) {
  if (sqlite3_bind_null(stmt_, idx) != SQLITE_OK) {
    throw_db_error(db_, "bind failed");
  }
  return *this;
}

Store::Statement& Store::Statement::bind(int idx,
                                         const std::optional<double>& v) {
  return v ? bind_double(idx, *v) : bind_null(idx);
}

Store::Statement& Store::Statement::bind(int idx,
                                         const std::optional<std::string>& v) {
  return v ? bind_text(idx, *v) : bind_null(idx);
}

bool Store::Statement::step() {
  int rc = sqlite3_step(stmt_);
  if (rc == SQLITE_ROW) return true;
  if (rc == SQLITE_DONE) return false;
  throw_db_error(db_, "step failed");
}

void Store::Statement::reset() {
  sqlite3_reset(stmt_);
  sqlite3_clear_bindings(stmt_);
}

bool Store::Statement::is_null(int col) const {
  return sqlite3_column_type(stmt_, col) == SQLITE_NULL;
}

std::int64_t Store::Statement::int64(int col) const {
  return sqlite3_column_int64(stmt_, col);
}

double Store::Statement::real(int col) const {
  return sqlite3_column_double(stmt_, col);
}

std::string Store::Statement::text(int col) const {
  const unsigned char* data = sqlite3_column_text(stmt_, col);
  if (data == nullptr) return {};
  int size = sqlite3_column_bytes(stmt_, col);
  return std::string(reinterpret_cast<const char*>(data),
                     static_cast<std::size_t>(size));
}

void Store::exec(const std::string& sql) {
  if (db_ == nullptr) throw StoreError("store is not open");
  char* err = nullptr;
  int rc = sqlite3_exec(db_, sql.c_str(), nullptr, nullptr, &err);
  if (rc != SQLITE_OK) {
    std::string msg = err != nullptr ? err : "exec failed";
    sqlite3_free(err);
    throw StoreError(msg + " in: " + sql);
  }
}

Store::Statement Store::prepare(const std::string& sql) const {
  return Statement(db_, sql);
}

std::int64_t Store::last_insert_rowid() const {
  return sqlite3_last_insert_rowid(db_);
}

bool Store::table_exists(const std::string& name) const {
  Statement stmt(db_,
                 "SELECT 1 FROM sqlite_master WHERE type='table' AND name=?1");
  stmt.bind_text(1, name);
  return stmt.step();
}

void Store::begin_write() {
  if (db_ == nullptr) throw StoreError("store is not open");
  char* err = nullptr;
  int rc = sqlite3_exec(db_, "BEGIN IMMEDIATE", nullptr, nullptr, &err);
  if (rc == SQLITE_BUSY || rc == SQLITE_LOCKED) {
    sqlite3_free(err);
    throw LockError("another writer holds the store at " + path_.string() +
                    "; retry when it finishes");
  }
  if (rc != SQLITE_OK) {
    std::string msg = err != nullptr ? err : "begin failed";
    sqlite3_free(err);
    throw StoreError(msg);
  }
}

void Store::commit() { exec("COMMIT"); }

void Store::rollback() noexcept {
  if (db_ != nullptr) {
    sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
}

Store open_store(const std::filesystem::path& path, bool create,
                 bool read_only) {
  return Store::open(path, create, read_only);
}

std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec);
  return buf;
}

std::string group_keys_canonical(
    const std::vector<std::pair<std::string, std::string>>& keys) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& [name, value] : keys) {
    doc.push_back(nlohmann::json::array({name, value}));
  }
  return doc.dump();
}

std::vector<std::pair<std::string, std::string>> group_keys_from_canonical(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> keys;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(std::string("malformed group keys: ") + e.what());
  }
  if (!doc.is_array()) throw StoreError("malformed group keys: " + text);
  for (const auto& pair : doc) {
    if (!pair.is_array() || pair.size() != 2) {
      throw StoreError("malformed group keys: " + text);
    }
    keys.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
  }
  return keys;
}

std::string to_string(RunStatus status) {
  switch (status) {
    case RunStatus::Completed: return "completed";
    case RunStatus::Failed: return "failed";
    case RunStatus::SkippedDuplicate: return "skipped_duplicate";
  }
  return "failed";
}

RunStatus run_status_from_string(std::string_view text) {
  if (text == "completed") return RunStatus::Completed;
  if (text == "failed") return RunStatus::Failed;
  if (text == "skipped_duplicate") return RunStatus::SkippedDuplicate;
  throw StoreError("unknown run status: " + std::string(text));
}

namespace {

std::string dataset_ids_json(const std::vector<std::int64_t>& ids) {
  nlohmann::json doc = nlohmann::json::array();
  for (std::int64_t id : ids) doc.push_back(id);
  return doc.dump();
}

std::vector<std::int64_t> dataset_ids_from_json(const std::string& text) {
  std::vector<std::int64_t> ids;
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_array()) {
    for (const auto& id : doc) ids.push_back(id.get<std::int64_t>());
  }
  return ids;
}

std::string record_key_text(const ResultRecord& record) {
  std::string key = "run=" + std::to_string(record.run_id) +
                    ", group_keys=" + group_keys_canonical(record.group_keys) +
                    ", variable=" + record.variable +
                    ", statistic=" + record.statistic_name;
  if (record.time) key += ", time=" + format_double(*record.time);
  return key;
}

bool message_is_unique_violation(const std::string& msg) {
  return msg.find("UNIQUE constraint failed") != std::string::npos;
}

}  // namespace

std::int64_t insert_results(Store& store, AnalysisRun& run,
                            const std::vector<ResultRecord>& records,
                            std::optional<std::size_t> fail_after_records) {
  if (run.status == RunStatus::Completed && records.empty()) {
    throw StoreError("completed run requires at least one result record");
  }
  for (const auto& record : records) {
    if (!record.value && !record.value_text) {
      throw ArgumentError("result record has neither value nor value_text (" +
                          record.variable + "/" + record.statistic_name + ")");
    }
  }

  WriteTransaction txn(store);
  {
    auto stmt = store.prepare(
        "INSERT INTO runs (standard_name, standard_version, canonical_params,"
        " identity, dataset_ids, started_utc, finished_utc, status)"
        " VALUES (?1,?2,?3,?4,?5,?6,?7,?8)");
    stmt.bind_text(1, run.standard_name)
        .bind_text(2, run.standard_version)
        .bind_text(3, run.canonical_params)
        .bind_text(4, run.identity)
        .bind_text(5, dataset_ids_json(run.dataset_ids))
        .bind_text(6, run.started_utc)
        .bind_text(7, run.finished_utc)
        .bind_text(8, to_string(run.status));
    try {
      stmt.step();
    } catch (const StoreError& e) {
      if (message_is_unique_violation(e.what())) {
        throw StoreError("a completed run with identity " + run.identity +
                         " already exists");
      }
      throw;
    }
  }
  run.run_id = store.last_insert_rowid();

  auto numeric_stmt = store.prepare(
      "INSERT INTO results_numeric (run_id, group_keys, variable,"
      " statistic_name, value, value_text, unit) VALUES (?1,?2,?3,?4,?5,?6,?7)");
  auto km_stmt = store.prepare(
      "INSERT INTO results_km (run_id, group_keys, variable, statistic_name,"
      " time, value, value_text, unit) VALUES (?1,?2,?3,?4,?5,?6,?7,?8)");

  std::size_t staged = 0;
  for (const auto& record : records) {
    if (fail_after_records && staged == *fail_after_records) {
      throw StoreError("injected fault after " + std::to_string(staged) +
                       " records");
    }
    try {
      if (record.time) {
        km_stmt.reset();
        km_stmt.bind_int64(1, run.run_id)
            .bind_text(2, group_keys_canonical(record.group_keys))
            .bind_text(3, record.variable)
            .bind_text(4, record.statistic_name)
            .bind_double(5, *record.time)
            .bind(6, record.value)
            .bind(7, record.value_text);
        if (record.unit.empty()) {
          km_stmt.bind_null(8);
        } else {
          km_stmt.bind_text(8, record.unit);
        }
        km_stmt.step();
      } else {
        numeric_stmt.reset();
        numeric_stmt.bind_int64(1, run.run_id)
            .bind_text(2, group_keys_canonical(record.group_keys))
            .bind_text(3, record.variable)
            .bind_text(4, record.statistic_name)
            .bind(5, record.value)
            .bind(6, record.value_text);
        if (record.unit.empty()) {
          numeric_stmt.bind_null(7);
        } else {
          numeric_stmt.bind_text(7, record.unit);
        }
        numeric_stmt.step();
      }
    } catch (const StoreError& e) {
      if (message_is_unique_violation(e.what())) {
        ResultRecord keyed = record;
        keyed.run_id = run.run_id;
        throw StoreError("duplicate result record (" + record_key_text(keyed) +
                         ")");
      }
      throw;
    }
    ++staged;
  }
  txn.commit();
  return static_cast<std::int64_t>(records.size());
}

namespace {

struct RawRow {
  AnnotatedResult annotated;
  std::string group_keys_text;
  std::string dataset_ids_text;
};

void fetch_table(const Store& store, const std::string& table, bool has_time,
                 std::vector<RawRow>& out) {
  std::string sql =
      "SELECT r.result_id, r.run_id, r.group_keys, r.variable,"
      " r.statistic_name, r.value, r.value_text, r.unit, " +
      std::string(has_time ? "r.time" : "NULL") +
      ", runs.standard_name, runs.standard_version, runs.dataset_ids FROM " +
      table + " r JOIN runs ON runs.run_id = r.run_id";
  auto stmt = store.prepare(sql);
  while (stmt.step()) {
    RawRow row;
    ResultRecord& record = row.annotated.record;
    record.result_id = stmt.int64(0);
    record.run_id = stmt.int64(1);
    row.group_keys_text = stmt.text(2);
    record.group_keys = group_keys_from_canonical(row.group_keys_text);
    record.variable = stmt.text(3);
    record.statistic_name = stmt.text(4);
    if (!stmt.is_null(5)) record.value = stmt.real(5);
    if (!stmt.is_null(6)) record.value_text = stmt.text(6);
    if (!stmt.is_null(7)) record.unit = stmt.text(7);
    if (!stmt.is_null(8)) record.time = stmt.real(8);
    row.annotated.standard_name = stmt.text(9);
    row.annotated.standard_version = stmt.text(10);
    row.dataset_ids_text = stmt.text(11);
    out.push_back(std::move(row));
  }
}

}  // namespace

std::vector<AnnotatedResult> query_results(const Store& store,
                                           const ResultFilter& filter,
                                           std::vector<std::string>* warnings) {
  std::vector<RawRow> rows;
  fetch_table(store, "results_numeric", false, rows);
  fetch_table(store, "results_km", true, rows);

  if (!filter.statistic_names.empty() && warnings != nullptr) {
    std::set<std::string> known;
    for (const auto& row : rows) known.insert(row.annotated.record.statistic_name);
    for (const auto& name : filter.statistic_names) {
      if (!known.contains(name)) {
        warnings->push_back("unknown statistic name: " + name);
      }
    }
  }

  std::vector<RawRow> kept;
  for (auto& row : rows) {
    const ResultRecord& record = row.annotated.record;
    if (filter.run_id && record.run_id != *filter.run_id) continue;
    if (filter.standard_name &&
        row.annotated.standard_name != *filter.standard_name) {
      continue;
    }
    if (filter.variable && record.variable != *filter.variable) continue;
    if (!filter.statistic_names.empty() &&
        !filter.statistic_names.contains(record.statistic_name)) {
      continue;
    }
    if (!filter.group_equals.empty()) {
      bool all_match = true;
      for (const auto& want : filter.group_equals) {
        if (std::find(record.group_keys.begin(), record.group_keys.end(),
                      want) == record.group_keys.end()) {
          all_match = false;
          break;
        }
      }
      if (!all_match) continue;
    }
    if (filter.time_min && (!record.time || *record.time < *filter.time_min)) {
      continue;
    }
    if (filter.time_max && (!record.time || *record.time > *filter.time_max)) {
      continue;
    }
    if (filter.dataset_id) {
      auto ids = dataset_ids_from_json(row.dataset_ids_text);
      if (std::find(ids.begin(), ids.end(), *filter.dataset_id) == ids.end()) {
        continue;
      }
    }
    kept.push_back(std::move(row));
  }

  std::sort(kept.begin(), kept.end(), [](const RawRow& a, const RawRow& b) {
    const ResultRecord& ra = a.annotated.record;
    const ResultRecord& rb = b.annotated.record;
    if (ra.run_id != rb.run_id) return ra.run_id < rb.run_id;
    if (a.group_keys_text != b.group_keys_text) {
      return a.group_keys_text < b.group_keys_text;
    }
    if (ra.variable != rb.variable) return ra.variable < rb.variable;
    if (ra.time.has_value() != rb.time.has_value()) {
      return !ra.time.has_value();  // null times first
    }
    if (ra.time && rb.time && *ra.time != *rb.time) return *ra.time < *rb.time;
    return ra.statistic_name < rb.statistic_name;
  });

  std::vector<AnnotatedResult> results;
  results.reserve(kept.size());
  for (auto& row : kept) results.push_back(std::move(row.annotated));
  return results;
}

std::vector<RunSummary> list_runs(const Store& store) {
  std::vector<RunSummary> summaries;
  auto stmt = store.prepare(
      "SELECT run_id, standard_name, standard_version, identity, status"
      " FROM runs ORDER BY run_id");
  while (stmt.step()) {
    RunSummary summary;
    summary.run_id = stmt.int64(0);
    summary.standard_name = stmt.text(1);
    summary.standard_version = stmt.text(2);
    summary.identity = stmt.text(3);
    summary.status = run_status_from_string(stmt.text(4));
    summaries.push_back(std::move(summary));
  }
  auto count_stmt = store.prepare(
      "SELECT (SELECT COUNT(*) FROM results_numeric WHERE run_id=?1)"
      " + (SELECT COUNT(*) FROM results_km WHERE run_id=?1)");
  for (auto& summary : summaries) {
    count_stmt.reset();
    count_stmt.bind_int64(1, summary.run_id);
    count_stmt.step();
    summary.n_records = count_stmt.int64(0);
  }
  return summaries;
}

AnalysisRun get_run(const Store& store, std::int64_t run_id) {
  auto stmt = store.prepare(
      "SELECT run_id, standard_name, standard_version, canonical_params,"
      " identity, dataset_ids, started_utc, finished_utc, status"
      " FROM runs WHERE run_id=?1");
  stmt.bind_int64(1, run_id);
  if (!stmt.step()) {
    throw NotFoundError("run " + std::to_string(run_id) + " not found");
  }
  AnalysisRun run;
  run.run_id = stmt.int64(0);
  run.standard_name = stmt.text(1);
  run.standard_version = stmt.text(2);
  run.canonical_params = stmt.text(3);
  run.identity = stmt.text(4);
  run.dataset_ids = dataset_ids_from_json(stmt.text(5));
  run.started_utc = stmt.text(6);
  run.finished_utc = stmt.text(7);
  run.status = run_status_from_string(stmt.text(8));
  return run;
}

std::string results_to_csv(const std::vector<AnnotatedResult>& results) {
  std::string out =
      "result_id,run_id,group_keys,variable,statistic_name,value,value_text,"
      "unit,time,standard_name,standard_version\n";
  auto quote = [](const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string quoted = "\"";
    for (char c : field) {
      if (c == '"') quoted.push_back('"');
      quoted.push_back(c);
    }
    quoted.push_back('"');
    return quoted;
  };
  for (const auto& result : results) {
    const ResultRecord& r = result.record;
    out += std::to_string(r.result_id);
    out += ',' + std::to_string(r.run_id);
    out += ',' + quote(group_keys_canonical(r.group_keys));
    out += ',' + quote(r.variable);
    out += ',' + quote(r.statistic_name);
    out += ',' + (r.value ? format_double(*r.value) : std::string());
    out += ',' + quote(r.value_text.value_or(""));
    out += ',' + quote(r.unit);
    out += ',' + (r.time ? format_double(*r.time) : std::string());
    out += ',' + quote(result.standard_name);
    out += ',' + quote(result.standard_version);
    out += '\n';
  }
  return out;
}

std::string results_to_json(const std::vector<AnnotatedResult>& results) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& result : results) {
    const ResultRecord& r = result.record;
    nlohmann::ordered_json row;
    row["result_id"] = r.result_id;
    row["run_id"] = r.run_id;
    nlohmann::ordered_json keys = nlohmann::ordered_json::array();
    for (const auto& [name, value] : r.group_keys) {
      keys.push_back(nlohmann::ordered_json::array({name, value}));
    }
    row["group_keys"] = std::move(keys);
    row["variable"] = r.variable;
    row["statistic_name"] = r.statistic_name;
    row["value"] = r.value ? nlohmann::ordered_json(*r.value)
                           : nlohmann::ordered_json(nullptr);
    row["value_text"] = r.value_text
                            ? nlohmann::ordered_json(*r.value_text)
                            : nlohmann::ordered_json(nullptr);
    row["unit"] = r.unit.empty() ? nlohmann::ordered_json(nullptr)
                                 : nlohmann::ordered_json(r.unit);
    row["time"] = r.time ? nlohmann::ordered_json(*r.time)
                         : nlohmann::ordered_json(nullptr);
    row["standard_name"] = result.standard_name;
    row["standard_version"] = result.standard_version;
    doc.push_back(std::move(row));
  }
  return doc.dump(2);
}

}  // namespace ardm
