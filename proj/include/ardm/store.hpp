#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

struct sqlite3;
struct sqlite3_stmt;

namespace ardm {

// Handle to a single-file embedded relational store. Transactions are
// atomic and durable; one writer at a time, unlimited readers. The handle
// may be moved between threads but must not be used concurrently.
class Store {
 public:
  Store() = default;
  Store(Store&& other) noexcept;
  Store& operator=(Store&& other) noexcept;
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;
  ~Store();

  static Store open(const std::filesystem::path& path, bool create,
                    bool read_only = false);

  bool is_open() const noexcept { return db_ != nullptr; }
  const std::filesystem::path& path() const noexcept { return path_; }

  // 0 on a fresh store pending init_schema.
  int schema_version() const;

  class Statement {
   public:
    Statement(sqlite3* db, const std::string& sql);
    Statement(Statement&& other) noexcept;
    Statement(const Statement&) = delete;
    ~Statement();

    Statement& bind_int64(int idx, std::int64_t v);
    Statement& bind_double(int idx, double v);
    Statement& bind_text(int idx, const std::string& v);
    Statement& bind_null(int idx);
    Statement& bind(int idx, const std::optional<double>& v);
    Statement& bind(int idx, const std::optional<std::string>& v);

    // True while a row is available.
    bool step();
    void reset();

    bool is_null(int col) const;
    std::int64_t int64(int col) const;
    double real(int col) const;
    std::string text(int col) const;

   private:
    sqlite3* db_ = nullptr;
    sqlite3_stmt* stmt_ = nullptr;
  };

  void exec(const std::string& sql);
  Statement prepare(const std::string& sql) const;
  std::int64_t last_insert_rowid() const;
  bool table_exists(const std::string& name) const;

  // BEGIN IMMEDIATE; throws LockError without waiting when another writer
  // holds the store.
  void begin_write();
  void commit();
  void rollback() noexcept;

 private:
  sqlite3* db_ = nullptr;
  std::filesystem::path path_;
};

// Rolls back on scope exit unless commit() was called.
class WriteTransaction {
 public:
  explicit WriteTransaction(Store& store) : store_(store) {
    store_.begin_write();
  }
  ~WriteTransaction() {
    if (!done_) store_.rollback();
  }
  void commit() {
    store_.commit();
    done_ = true;
  }

 private:
  Store& store_;
  bool done_ = false;
};

Store open_store(const std::filesystem::path& path, bool create,
                 bool read_only = false);

// Current time as ISO-8601 UTC, e.g. 2026-08-14T09:30:00Z.
std::string utc_timestamp();

// One stored statistic. group_keys are ordered (name, value) pairs; their
// canonical JSON form carries uniqueness together with (run_id, variable,
// statistic_name, time).
struct ResultRecord {
  std::int64_t result_id = 0;  // assigned on insert
  std::int64_t run_id = 0;
  std::vector<std::pair<std::string, std::string>> group_keys;
  std::string variable;
  std::string statistic_name;
  std::optional<double> value;
  std::optional<std::string> value_text;
  std::string unit;
  std::optional<double> time;  // set for KM point rows only
};

// Canonical JSON array-of-pairs text for group keys, e.g.
// [["TRTP","Placebo"]]. Order-preserving.
std::string group_keys_canonical(
    const std::vector<std::pair<std::string, std::string>>& keys);
std::vector<std::pair<std::string, std::string>> group_keys_from_canonical(
    const std::string& text);

enum class RunStatus { Completed, Failed, SkippedDuplicate };
std::string to_string(RunStatus status);
RunStatus run_status_from_string(std::string_view text);

struct AnalysisRun {
  std::int64_t run_id = 0;
  std::string standard_name;
  std::string standard_version;
  std::string canonical_params;  // key-sorted JSON text
  std::string identity;          // hex digest over standard+params+inputs
  std::vector<std::int64_t> dataset_ids;
  std::string started_utc;
  std::string finished_utc;
  RunStatus status = RunStatus::Completed;
};

struct ResultFilter {
  std::optional<std::string> standard_name;
  std::optional<std::int64_t> run_id;
  std::optional<std::int64_t> dataset_id;
  std::vector<std::pair<std::string, std::string>> group_equals;
  std::optional<std::string> variable;
  std::set<std::string> statistic_names;  // empty selects all
  std::optional<double> time_min, time_max;
};

struct AnnotatedResult {
  ResultRecord record;
  std::string standard_name;
  std::string standard_version;
};

struct RunSummary {
  std::int64_t run_id = 0;
  std::string standard_name;
  std::string standard_version;
  std::string identity;
  RunStatus status = RunStatus::Completed;
  std::int64_t n_records = 0;
};

// Commits the run row plus all records in one transaction and returns the
// record count. On a uniqueness violation the whole batch is rolled back.
// fail_after_records is a test hook that aborts the transaction once that
// many records have been staged.
std::int64_t insert_results(
    Store& store, AnalysisRun& run, const std::vector<ResultRecord>& records,
    std::optional<std::size_t> fail_after_records = std::nullopt);

// Read-only filtered query over both results tables, ordered by
// (run_id, group_keys, variable, time, statistic_name) with null times
// first. Unknown statistic names in the filter yield an empty match plus a
// note on the warning channel.
std::vector<AnnotatedResult> query_results(
    const Store& store, const ResultFilter& filter,
    std::vector<std::string>* warnings = nullptr);

std::vector<RunSummary> list_runs(const Store& store);
AnalysisRun get_run(const Store& store, std::int64_t run_id);

// Exact ResultRecord field order, then standard annotations.
std::string results_to_csv(const std::vector<AnnotatedResult>& results);
std::string results_to_json(const std::vector<AnnotatedResult>& results);

}  // namespace ardm
