#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ardm {

enum class ColumnKind { Continuous, Categorical, Date, Flag, Identifier };
enum class Domain { Adsl, Adtte, Adae, Other };

std::string to_string(ColumnKind kind);
ColumnKind column_kind_from_string(std::string_view text);
std::string to_string(Domain domain);
Domain domain_from_string(std::string_view text);

// A cell is null, a finite number, or text. Date cells keep their ISO-8601
// text form; flag cells are normalized to the numbers 0/1.
using Cell = std::variant<std::monostate, double, std::string>;

bool cell_is_null(const Cell& cell);
std::optional<double> cell_number(const Cell& cell);
std::optional<std::string> cell_text(const Cell& cell);
// Canonical text form: "" for null, shortest round-trip decimal for numbers.
std::string cell_to_string(const Cell& cell);

struct ColumnMeta {
  std::string name;  // uppercase token, unique within a dataset
  ColumnKind kind = ColumnKind::Categorical;
  std::string unit;   // optional, empty means none
  std::string label;  // optional
};

struct AnalysisDataset {
  Domain domain = Domain::Other;
  std::vector<ColumnMeta> columns;
  std::vector<std::vector<Cell>> rows;
  std::string source_name;
  std::string checksum;  // hex digest of canonical content

  int column_index(std::string_view name) const;  // -1 when absent
  const ColumnMeta* column(std::string_view name) const;
};

bool operator==(const ColumnMeta& a, const ColumnMeta& b);
bool operator==(const AnalysisDataset& a, const AnalysisDataset& b);

struct ValidationIssue {
  enum class Severity { Error, Warning };
  Severity severity = Severity::Error;
  std::string where;  // column name or "dataset"
  std::string message;
};

struct ValidationReport {
  std::string dataset_ref;
  std::vector<ValidationIssue> issues;
  bool passed = true;

  std::string to_text() const;
};

// Kind inference over raw text cells. Precedence:
// identifier > flag > continuous > date > categorical.
//  - identifier: column name ends in "ID"
//  - flag: every non-null cell in {"0","1","Y","N"}
//  - continuous: every non-null cell parses as a finite decimal number
//  - date: every non-null cell matches YYYY-MM-DD
// All-null columns fall back to categorical; the downstream validation
// report carries the warning.
std::vector<ColumnMeta> infer_column_types(
    const std::vector<std::string>& header,
    const std::vector<std::vector<std::string>>& rows);

// Sidecar metadata: JSON array of {name, kind, unit?, label?}. Entries
// override inference for the named columns.
std::vector<ColumnMeta> parse_column_meta_json(std::string_view json_text);

// Parses delimited text into a typed dataset. Column names are uppercased;
// empty cells become null. When meta is supplied its entries override
// inference for the named columns. Throws ParseError for malformed CSV or
// cells that contradict a column kind, DomainError when USUBJID is missing.
AnalysisDataset parse_dataset(std::string_view csv_text, Domain domain,
                              const std::vector<ColumnMeta>* meta = nullptr,
                              std::string source_name = {});

// Required columns per domain. The defaults follow common ADaM usage and
// can be overridden for nonstandard studies.
const std::map<Domain, std::vector<std::string>>& default_required_columns();

// Checks domain expectations and returns a report; never throws for data
// findings. passed is true iff no issue has Error severity.
ValidationReport validate_domain(const AnalysisDataset& dataset);
ValidationReport validate_domain(
    const AnalysisDataset& dataset,
    const std::map<Domain, std::vector<std::string>>& required);

// Canonical serialization: header line, then rows in order, fields joined
// by the unit-separator byte 0x1F, one line per row, nulls empty.
std::string canonical_content(const AnalysisDataset& dataset);

// SHA-256 hex digest of canonical_content.
std::string checksum_dataset(const AnalysisDataset& dataset);

// RFC 4180 form that parses back to an identical dataset.
std::string serialize_dataset_csv(const AnalysisDataset& dataset);

}  // namespace ardm
