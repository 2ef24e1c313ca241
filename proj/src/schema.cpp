#include "ardm/schema.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "ardm/errors.hpp"

namespace ardm {

namespace {

std::string sql_type(const std::string& kind) {
  if (kind == "integer") return "INTEGER";
  if (kind == "real") return "REAL";
  return "TEXT";
}

std::string create_table_sql(const TableDef& table) {
  std::string sql = "CREATE TABLE IF NOT EXISTS \"" + table.name + "\" (";
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    const ColumnDef& col = table.columns[i];
    if (i) sql += ", ";
    sql += "\"" + col.name + "\" " + sql_type(col.kind);
    bool is_rowid_key = (i == 0 && col.name.ends_with("_id") &&
                         (table.name == "dataset_meta" ||
                          table.name == "runs" ||
                          table.name == "results_numeric" ||
                          table.name == "results_km"));
    if (is_rowid_key) {
      sql += " PRIMARY KEY";
    } else if (!col.nullable) {
      sql += " NOT NULL";
    }
  }
  sql += ")";
  return sql;
}

}  // namespace

const SchemaDescriptor& schema_descriptor() {
  static const SchemaDescriptor descriptor = [] {
    SchemaDescriptor d;
    d.version = kSchemaVersion;
    d.tables = {
        {"metadata",
         "dataset_meta",
         {{"dataset_id", "integer", false},
          {"domain", "text", false},
          {"source_name", "text", true},
          {"checksum", "text", false},
          {"n_rows", "integer", false},
          {"ingest_time_utc", "text", false},
          {"content", "text", true}}},
        {"metadata",
         "column_meta",
         {{"dataset_id", "integer", false},
          {"position", "integer", false},
          {"name", "text", false},
          {"kind", "text", false},
          {"unit", "text", true},
          {"label", "text", true}}},
        {"metadata",
         "standards_registry",
         {{"name", "text", false},
          {"version", "text", false},
          {"definition", "text", false}}},
        {"metadata",
         "runs",
         {{"run_id", "integer", false},
          {"standard_name", "text", false},
          {"standard_version", "text", false},
          {"canonical_params", "text", false},
          {"identity", "text", false},
          {"dataset_ids", "text", false},
          {"started_utc", "text", false},
          {"finished_utc", "text", false},
          {"status", "text", false}}},
        {"intermediate",
         "subject_level",
         {{"dataset_id", "integer", false},
          {"usubjid", "text", false},
          {"group_label", "text", true},
          {"derived_flags", "text", false},
          {"derived_values", "text", false}}},
        {"results",
         "results_numeric",
         {{"result_id", "integer", false},
          {"run_id", "integer", false},
          {"group_keys", "text", false},
          {"variable", "text", false},
          {"statistic_name", "text", false},
          {"value", "real", true},
          {"value_text", "text", true},
          {"unit", "text", true}}},
        {"results",
         "results_km",
         {{"result_id", "integer", false},
          {"run_id", "integer", false},
          {"group_keys", "text", false},
          {"variable", "text", false},
          {"statistic_name", "text", false},
          {"time", "real", false},
          {"value", "real", true},
          {"value_text", "text", true},
          {"unit", "text", true}}},
    };
    return d;
  }();
  return descriptor;
}

SchemaDescriptor init_schema(Store& store) {
  const int current = store.schema_version();
  if (current > kSchemaVersion) {
    throw SchemaError("store schema version " + std::to_string(current) +
                      " is newer than this build supports (" +
                      std::to_string(kSchemaVersion) + ")");
  }
  WriteTransaction txn(store);
  store.exec(
      "CREATE TABLE IF NOT EXISTS schema_version (version INTEGER NOT NULL)");
  for (const auto& table : schema_descriptor().tables) {
    store.exec(create_table_sql(table));
  }
  store.exec(
      "CREATE UNIQUE INDEX IF NOT EXISTS idx_dataset_checksum"
      " ON dataset_meta (checksum)");
  store.exec(
      "CREATE UNIQUE INDEX IF NOT EXISTS idx_standard_name_version"
      " ON standards_registry (name, version)");
  store.exec(
      "CREATE UNIQUE INDEX IF NOT EXISTS idx_run_identity"
      " ON runs (identity) WHERE status = 'completed'");
  store.exec(
      "CREATE UNIQUE INDEX IF NOT EXISTS idx_subject_level_key"
      " ON subject_level (dataset_id, usubjid)");
  store.exec(
      "CREATE UNIQUE INDEX IF NOT EXISTS idx_results_numeric_key"
      " ON results_numeric (run_id, group_keys, variable, statistic_name)");
  store.exec(
      "CREATE UNIQUE INDEX IF NOT EXISTS idx_results_km_key"
      " ON results_km (run_id, group_keys, variable, statistic_name, time)");
  if (current == 0) {
    store.exec("INSERT INTO schema_version (version) VALUES (" +
               std::to_string(kSchemaVersion) + ")");
  }
  txn.commit();
  return schema_descriptor();
}

namespace {

DatasetRegistration read_registration(Store::Statement& stmt) {
  DatasetRegistration reg;
  reg.dataset_id = stmt.int64(0);
  reg.domain = domain_from_string(stmt.text(1));
  reg.source_name = stmt.text(2);
  reg.checksum = stmt.text(3);
  reg.n_rows = stmt.int64(4);
  reg.ingest_time_utc = stmt.text(5);
  return reg;
}

constexpr const char* kRegistrationColumns =
    "dataset_id, domain, source_name, checksum, n_rows, ingest_time_utc";

}  // namespace

DatasetRegistration register_dataset(Store& store,
                                     const AnalysisDataset& dataset) {
  ValidationReport report = validate_domain(dataset);
  if (!report.passed) {
    throw DomainError("dataset rejected: " + report.to_text());
  }

  {
    auto stmt = store.prepare("SELECT " + std::string(kRegistrationColumns) +
                              " FROM dataset_meta WHERE checksum=?1");
    stmt.bind_text(1, dataset.checksum);
    if (stmt.step()) return read_registration(stmt);
  }

  WriteTransaction txn(store);
  auto insert = store.prepare(
      "INSERT INTO dataset_meta (domain, source_name, checksum, n_rows,"
      " ingest_time_utc, content) VALUES (?1,?2,?3,?4,?5,?6)");
  insert.bind_text(1, to_string(dataset.domain))
      .bind_text(2, dataset.source_name)
      .bind_text(3, dataset.checksum)
      .bind_int64(4, static_cast<std::int64_t>(dataset.rows.size()))
      .bind_text(5, utc_timestamp())
      .bind_text(6, serialize_dataset_csv(dataset));
  insert.step();
  const std::int64_t dataset_id = store.last_insert_rowid();

  auto column_insert = store.prepare(
      "INSERT INTO column_meta (dataset_id, position, name, kind, unit,"
      " label) VALUES (?1,?2,?3,?4,?5,?6)");
  for (std::size_t i = 0; i < dataset.columns.size(); ++i) {
    const ColumnMeta& column = dataset.columns[i];
    column_insert.reset();
    column_insert.bind_int64(1, dataset_id)
        .bind_int64(2, static_cast<std::int64_t>(i))
        .bind_text(3, column.name)
        .bind_text(4, to_string(column.kind));
    if (column.unit.empty()) {
      column_insert.bind_null(5);
    } else {
      column_insert.bind_text(5, column.unit);
    }
    if (column.label.empty()) {
      column_insert.bind_null(6);
    } else {
      column_insert.bind_text(6, column.label);
    }
    column_insert.step();
  }
  txn.commit();

  return get_registration(store, dataset_id);
}

std::vector<DatasetRegistration> list_datasets(const Store& store) {
  std::vector<DatasetRegistration> registrations;
  auto stmt = store.prepare("SELECT " + std::string(kRegistrationColumns) +
                            " FROM dataset_meta ORDER BY dataset_id");
  while (stmt.step()) registrations.push_back(read_registration(stmt));
  return registrations;
}

DatasetRegistration get_registration(const Store& store,
                                     std::int64_t dataset_id) {
  auto stmt = store.prepare("SELECT " + std::string(kRegistrationColumns) +
                            " FROM dataset_meta WHERE dataset_id=?1");
  stmt.bind_int64(1, dataset_id);
  if (!stmt.step()) {
    throw NotFoundError("dataset " + std::to_string(dataset_id) +
                        " not found");
  }
  return read_registration(stmt);
}

AnalysisDataset load_dataset(const Store& store, std::int64_t dataset_id) {
  DatasetRegistration reg = get_registration(store, dataset_id);

  std::optional<std::string> content;
  {
    auto stmt =
        store.prepare("SELECT content FROM dataset_meta WHERE dataset_id=?1");
    stmt.bind_int64(1, dataset_id);
    stmt.step();
    if (!stmt.is_null(0)) content = stmt.text(0);
  }
  if (!content) {
    throw StoreError("dataset " + std::to_string(dataset_id) +
                     " has no stored content");
  }

  std::vector<ColumnMeta> columns;
  {
    auto stmt = store.prepare(
        "SELECT name, kind, unit, label FROM column_meta"
        " WHERE dataset_id=?1 ORDER BY position");
    stmt.bind_int64(1, dataset_id);
    while (stmt.step()) {
      ColumnMeta column;
      column.name = stmt.text(0);
      column.kind = column_kind_from_string(stmt.text(1));
      if (!stmt.is_null(2)) column.unit = stmt.text(2);
      if (!stmt.is_null(3)) column.label = stmt.text(3);
      columns.push_back(std::move(column));
    }
  }

  AnalysisDataset dataset =
      parse_dataset(*content, reg.domain, &columns, reg.source_name);
  if (dataset.checksum != reg.checksum) {
    throw StoreError("dataset " + std::to_string(dataset_id) +
                     " content does not match its registered checksum");
  }
  return dataset;
}

std::int64_t build_subject_level(Store& store, std::int64_t adsl_id,
                                 std::optional<std::int64_t> adae_id,
                                 std::vector<std::string>* warnings) {
  AnalysisDataset adsl = load_dataset(store, adsl_id);
  if (adsl.domain != Domain::Adsl) {
    throw DomainError("dataset " + std::to_string(adsl_id) + " is not ADSL");
  }
  const int subj = adsl.column_index("USUBJID");
  const int arm = adsl.column_index("TRT01P");

  std::set<std::string> adsl_subjects;
  for (const auto& row : adsl.rows) {
    adsl_subjects.insert(cell_to_string(row[static_cast<std::size_t>(subj)]));
  }

  std::set<std::string> ae_subjects;
  if (adae_id) {
    AnalysisDataset adae = load_dataset(store, *adae_id);
    if (adae.domain != Domain::Adae) {
      throw DomainError("dataset " + std::to_string(*adae_id) +
                        " is not ADAE");
    }
    const int ae_subj = adae.column_index("USUBJID");
    for (const auto& row : adae.rows) {
      std::string id = cell_to_string(row[static_cast<std::size_t>(ae_subj)]);
      if (!adsl_subjects.contains(id)) {
        if (warnings != nullptr) {
          warnings->push_back("ADAE subject " + id +
                              " absent from ADSL; skipped");
        }
        continue;
      }
      ae_subjects.insert(id);
    }
  }

  WriteTransaction txn(store);
  {
    auto del =
        store.prepare("DELETE FROM subject_level WHERE dataset_id=?1");
    del.bind_int64(1, adsl_id);
    del.step();
  }
  auto insert = store.prepare(
      "INSERT INTO subject_level (dataset_id, usubjid, group_label,"
      " derived_flags, derived_values) VALUES (?1,?2,?3,?4,?5)");
  std::int64_t count = 0;
  std::set<std::string> written;
  for (const auto& row : adsl.rows) {
    std::string id = cell_to_string(row[static_cast<std::size_t>(subj)]);
    if (!written.insert(id).second) continue;  // one row per distinct subject
    nlohmann::json flags = {{"ANY_AE", ae_subjects.contains(id) ? 1 : 0}};
    insert.reset();
    insert.bind_int64(1, adsl_id).bind_text(2, id);
    if (arm < 0 || cell_is_null(row[static_cast<std::size_t>(arm)])) {
      insert.bind_null(3);
    } else {
      insert.bind_text(3, cell_to_string(row[static_cast<std::size_t>(arm)]));
    }
    insert.bind_text(4, flags.dump())
        .bind_text(5, nlohmann::json::object().dump());
    insert.step();
    ++count;
  }
  txn.commit();
  return count;
}

std::vector<SubjectLevelRow> read_subject_level(const Store& store,
                                                std::int64_t adsl_id) {
  std::vector<SubjectLevelRow> rows;
  auto stmt = store.prepare(
      "SELECT dataset_id, usubjid, group_label, derived_flags, derived_values"
      " FROM subject_level WHERE dataset_id=?1 ORDER BY usubjid");
  stmt.bind_int64(1, adsl_id);
  while (stmt.step()) {
    SubjectLevelRow row;
    row.dataset_id = stmt.int64(0);
    row.usubjid = stmt.text(1);
    if (!stmt.is_null(2)) row.group = stmt.text(2);
    nlohmann::json flags = nlohmann::json::parse(stmt.text(3));
    for (auto it = flags.begin(); it != flags.end(); ++it) {
      row.flags[it.key()] = it.value().get<int>();
    }
    nlohmann::json values = nlohmann::json::parse(stmt.text(4));
    for (auto it = values.begin(); it != values.end(); ++it) {
      row.values[it.key()] = it.value().get<double>();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ardm
