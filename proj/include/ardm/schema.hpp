#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ardm/dataset.hpp"
#include "ardm/store.hpp"

namespace ardm {

inline constexpr int kSchemaVersion = 1;

struct ColumnDef {
  std::string name;
  std::string kind;  // integer | real | text
  bool nullable = false;
};

struct TableDef {
  std::string group;  // metadata | intermediate | results
  std::string name;
  std::vector<ColumnDef> columns;
};

struct SchemaDescriptor {
  int version = 0;
  std::vector<TableDef> tables;
};

// The seven ARDM tables (metadata, intermediate, results groups).
const SchemaDescriptor& schema_descriptor();

// Creates the ARDM tables idempotently and returns the descriptor in
// effect. Throws SchemaError when the store is at a newer version than
// this build supports.
SchemaDescriptor init_schema(Store& store);

struct DatasetRegistration {
  std::int64_t dataset_id = 0;
  Domain domain = Domain::Other;
  std::string source_name;
  std::string checksum;
  std::int64_t n_rows = 0;
  std::string ingest_time_utc;
};

// Persists dataset metadata, per-column metadata, and the row payload.
// Validates first and rejects with DomainError when validation fails.
// Re-registering content with a known checksum returns the existing
// registration without writing.
DatasetRegistration register_dataset(Store& store,
                                     const AnalysisDataset& dataset);

std::vector<DatasetRegistration> list_datasets(const Store& store);
DatasetRegistration get_registration(const Store& store,
                                     std::int64_t dataset_id);

// Rebuilds the typed dataset from the stored payload and column metadata.
// Throws NotFoundError for unknown ids and StoreError when the payload was
// removed.
AnalysisDataset load_dataset(const Store& store, std::int64_t dataset_id);

struct SubjectLevelRow {
  std::int64_t dataset_id = 0;  // the ADSL source
  std::string usubjid;
  std::optional<std::string> group;  // treatment-arm label
  std::map<std::string, int> flags;  // e.g. ANY_AE
  std::map<std::string, double> values;
};

// One row per ADSL subject; ANY_AE is 1 iff the subject appears in the ADAE
// dataset (0 when absent or no ADAE given). Rebuilding replaces all prior
// rows for the ADSL dataset. ADAE subjects missing from ADSL are skipped
// with a warning. Returns the number of rows written.
std::int64_t build_subject_level(Store& store, std::int64_t adsl_id,
                                 std::optional<std::int64_t> adae_id,
                                 std::vector<std::string>* warnings = nullptr);

std::vector<SubjectLevelRow> read_subject_level(const Store& store,
                                                std::int64_t adsl_id);

}  // namespace ardm
