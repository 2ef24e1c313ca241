#include "ardm/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>
#include <utility>

#include <nlohmann/json.hpp>

#include "ardm/csv.hpp"
#include "ardm/errors.hpp"
#include "ardm/sha256.hpp"

namespace ardm {

namespace {

std::string upper(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::toupper(c));
  });
  return out;
}

std::optional<double> parse_number(std::string_view text) {
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (*first == '+') ++first;  // from_chars rejects a leading plus
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

bool is_flag_token(std::string_view text) {
  return text == "0" || text == "1" || text == "Y" || text == "N";
}

bool is_iso_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) return false;
  }
  int month = (text[5] - '0') * 10 + (text[6] - '0');
  int day = (text[8] - '0') * 10 + (text[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

}  // namespace

std::string to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::Continuous: return "continuous";
    case ColumnKind::Categorical: return "categorical";
    case ColumnKind::Date: return "date";
    case ColumnKind::Flag: return "flag";
    case ColumnKind::Identifier: return "identifier";
  }
  return "categorical";
}

ColumnKind column_kind_from_string(std::string_view text) {
  if (text == "continuous") return ColumnKind::Continuous;
  if (text == "categorical") return ColumnKind::Categorical;
  if (text == "date") return ColumnKind::Date;
  if (text == "flag") return ColumnKind::Flag;
  if (text == "identifier") return ColumnKind::Identifier;
  throw ParseError("unknown column kind: " + std::string(text));
}

std::string to_string(Domain domain) {
  switch (domain) {
    case Domain::Adsl: return "ADSL";
    case Domain::Adtte: return "ADTTE";
    case Domain::Adae: return "ADAE";
    case Domain::Other: return "OTHER";
  }
  return "OTHER";
}

Domain domain_from_string(std::string_view text) {
  std::string u = upper(text);
  if (u == "ADSL") return Domain::Adsl;
  if (u == "ADTTE") return Domain::Adtte;
  if (u == "ADAE") return Domain::Adae;
  if (u == "OTHER") return Domain::Other;
  throw ArgumentError("unknown domain: " + std::string(text));
}

bool cell_is_null(const Cell& cell) {
  return std::holds_alternative<std::monostate>(cell);
}

std::optional<double> cell_number(const Cell& cell) {
  if (const double* v = std::get_if<double>(&cell)) return *v;
  return std::nullopt;
}

std::optional<std::string> cell_text(const Cell& cell) {
  if (const std::string* v = std::get_if<std::string>(&cell)) return *v;
  return std::nullopt;
}

std::string cell_to_string(const Cell& cell) {
  if (cell_is_null(cell)) return {};
  if (const double* v = std::get_if<double>(&cell)) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), *v);
    return std::string(buf, ptr);
  }
  return std::get<std::string>(cell);
}

int AnalysisDataset::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

const ColumnMeta* AnalysisDataset::column(std::string_view name) const {
  int idx = column_index(name);
  return idx < 0 ? nullptr : &columns[static_cast<std::size_t>(idx)];
}

bool operator==(const ColumnMeta& a, const ColumnMeta& b) {
  return a.name == b.name && a.kind == b.kind && a.unit == b.unit &&
         a.label == b.label;
}

bool operator==(const AnalysisDataset& a, const AnalysisDataset& b) {
  // Content identity; source_name is provenance, not content.
  return a.domain == b.domain && a.columns == b.columns && a.rows == b.rows &&
         a.checksum == b.checksum;
}

std::string ValidationReport::to_text() const {
  std::string out = dataset_ref.empty() ? "dataset" : dataset_ref;
  out += passed ? ": validation passed" : ": validation failed";
  for (const auto& issue : issues) {
    out += "\n  ";
    out += issue.severity == ValidationIssue::Severity::Error ? "error"
                                                              : "warning";
    out += " [" + issue.where + "]: " + issue.message;
  }
  out += "\n";
  return out;
}

std::vector<ColumnMeta> infer_column_types(
    const std::vector<std::string>& header,
    const std::vector<std::vector<std::string>>& rows) {
  std::vector<ColumnMeta> metas;
  metas.reserve(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    ColumnMeta meta;
    meta.name = header[c];
    bool all_flag = true, all_number = true, all_date = true, any_value = false;
    for (const auto& row : rows) {
      const std::string& cell = row[c];
      if (cell.empty()) continue;
      any_value = true;
      if (!is_flag_token(cell)) all_flag = false;
      if (!parse_number(cell)) all_number = false;
      if (!is_iso_date(cell)) all_date = false;
    }
    if (meta.name.size() >= 2 && meta.name.ends_with("ID")) {
      meta.kind = ColumnKind::Identifier;
    } else if (!any_value) {
      meta.kind = ColumnKind::Categorical;
    } else if (all_flag) {
      meta.kind = ColumnKind::Flag;
    } else if (all_number) {
      meta.kind = ColumnKind::Continuous;
    } else if (all_date) {
      meta.kind = ColumnKind::Date;
    } else {
      meta.kind = ColumnKind::Categorical;
    }
    metas.push_back(std::move(meta));
  }
  return metas;
}

std::vector<ColumnMeta> parse_column_meta_json(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed column metadata: ") + e.what());
  }
  if (!doc.is_array()) {
    throw ParseError("column metadata must be a JSON array");
  }
  std::vector<ColumnMeta> metas;
  for (const auto& entry : doc) {
    if (!entry.is_object() || !entry.contains("name") ||
        !entry.contains("kind")) {
      throw ParseError("column metadata entries need name and kind");
    }
    ColumnMeta meta;
    meta.name = upper(entry.at("name").get<std::string>());
    meta.kind = column_kind_from_string(entry.at("kind").get<std::string>());
    if (entry.contains("unit")) meta.unit = entry.at("unit").get<std::string>();
    if (entry.contains("label")) {
      meta.label = entry.at("label").get<std::string>();
    }
    metas.push_back(std::move(meta));
  }
  return metas;
}

AnalysisDataset parse_dataset(std::string_view csv_text, Domain domain,
                              const std::vector<ColumnMeta>* meta,
                              std::string source_name) {
  csv::Table table = csv::read(csv_text);

  AnalysisDataset dataset;
  dataset.domain = domain;
  dataset.source_name = std::move(source_name);

  std::vector<std::string> names;
  names.reserve(table.header.size());
  std::set<std::string> seen;
  for (const auto& raw : table.header) {
    std::string name = upper(raw);
    if (name.empty()) throw ParseError("empty column name in header", 1);
    if (!seen.insert(name).second) {
      throw ParseError("duplicate column name: " + name, 1);
    }
    names.push_back(std::move(name));
  }

  dataset.columns = infer_column_types(names, table.rows);
  if (meta != nullptr) {
    for (const auto& override_meta : *meta) {
      int idx = -1;
      for (std::size_t i = 0; i < dataset.columns.size(); ++i) {
        if (dataset.columns[i].name == override_meta.name) {
          idx = static_cast<int>(i);
          break;
        }
      }
      if (idx < 0) {
        throw ParseError("metadata names unknown column: " +
                         override_meta.name);
      }
      dataset.columns[static_cast<std::size_t>(idx)] = override_meta;
    }
  }

  if (dataset.column_index("USUBJID") < 0) {
    throw DomainError("missing subject identifier column USUBJID");
  }

  dataset.rows.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const long line = table.row_lines[r];
    std::vector<Cell> cells;
    cells.reserve(names.size());
    for (std::size_t c = 0; c < names.size(); ++c) {
      const std::string& raw = table.rows[r][c];
      const ColumnMeta& column = dataset.columns[c];
      if (raw.empty()) {
        cells.emplace_back(std::monostate{});
        continue;
      }
      switch (column.kind) {
        case ColumnKind::Continuous: {
          auto value = parse_number(raw);
          if (!value) {
            throw ParseError("column " + column.name +
                                 ": not a number: " + raw,
                             line);
          }
          cells.emplace_back(*value);
          break;
        }
        case ColumnKind::Flag: {
          if (!is_flag_token(raw)) {
            throw ParseError("column " + column.name +
                                 ": not a flag value: " + raw,
                             line);
          }
          cells.emplace_back((raw == "1" || raw == "Y") ? 1.0 : 0.0);
          break;
        }
        case ColumnKind::Date: {
          if (!is_iso_date(raw)) {
            throw ParseError("column " + column.name +
                                 ": not a YYYY-MM-DD date: " + raw,
                             line);
          }
          cells.emplace_back(raw);
          break;
        }
        case ColumnKind::Identifier:
        case ColumnKind::Categorical:
          cells.emplace_back(raw);
          break;
      }
    }
    dataset.rows.push_back(std::move(cells));
  }

  const int subj = dataset.column_index("USUBJID");
  for (std::size_t r = 0; r < dataset.rows.size(); ++r) {
    if (cell_is_null(dataset.rows[r][static_cast<std::size_t>(subj)])) {
      throw DomainError("null USUBJID (line " +
                        std::to_string(table.row_lines[r]) + ")");
    }
  }

  dataset.checksum = checksum_dataset(dataset);
  return dataset;
}

const std::map<Domain, std::vector<std::string>>& default_required_columns() {
  static const std::map<Domain, std::vector<std::string>> required = {
      {Domain::Adsl, {"USUBJID", "TRT01P"}},
      {Domain::Adtte, {"USUBJID", "PARAMCD", "AVAL", "CNSR", "TRTP"}},
      {Domain::Adae, {"USUBJID", "AEDECOD", "AEBODSYS", "TRTA"}},
  };
  return required;
}

ValidationReport validate_domain(const AnalysisDataset& dataset) {
  return validate_domain(dataset, default_required_columns());
}

ValidationReport validate_domain(
    const AnalysisDataset& dataset,
    const std::map<Domain, std::vector<std::string>>& required) {
  ValidationReport report;
  report.dataset_ref = dataset.source_name;
  auto error = [&](std::string where, std::string message) {
    report.issues.push_back({ValidationIssue::Severity::Error,
                             std::move(where), std::move(message)});
  };
  auto warning = [&](std::string where, std::string message) {
    report.issues.push_back({ValidationIssue::Severity::Warning,
                             std::move(where), std::move(message)});
  };

  if (auto it = required.find(dataset.domain); it != required.end()) {
    for (const auto& name : it->second) {
      if (dataset.column_index(name) < 0) {
        error(name, "missing required column " + name);
      }
    }
  }

  for (std::size_t c = 0; c < dataset.columns.size(); ++c) {
    bool any_value = false;
    for (const auto& row : dataset.rows) {
      if (!cell_is_null(row[c])) {
        any_value = true;
        break;
      }
    }
    if (!any_value && !dataset.rows.empty()) {
      warning(dataset.columns[c].name, "column has no non-missing values");
    }
  }

  const int subj = dataset.column_index("USUBJID");
  if (subj >= 0) {
    for (const auto& row : dataset.rows) {
      if (cell_is_null(row[static_cast<std::size_t>(subj)])) {
        error("USUBJID", "null subject identifier");
        break;
      }
    }
  }

  if (dataset.domain == Domain::Adtte) {
    const int aval = dataset.column_index("AVAL");
    const int cnsr = dataset.column_index("CNSR");
    const int paramcd = dataset.column_index("PARAMCD");
    if (aval >= 0) {
      for (const auto& row : dataset.rows) {
        auto value = cell_number(row[static_cast<std::size_t>(aval)]);
        if (!value) {
          error("AVAL", "missing analysis value");
          break;
        }
        if (*value < 0) {
          error("AVAL", "negative analysis value");
          break;
        }
      }
    }
    if (cnsr >= 0) {
      for (const auto& row : dataset.rows) {
        auto value = cell_number(row[static_cast<std::size_t>(cnsr)]);
        if (!value || (*value != 0.0 && *value != 1.0)) {
          error("CNSR", "CNSR must be 0 or 1");
          break;
        }
      }
    }
    if (subj >= 0 && paramcd >= 0) {
      std::set<std::pair<std::string, std::string>> keys;
      for (const auto& row : dataset.rows) {
        auto key = std::make_pair(
            cell_to_string(row[static_cast<std::size_t>(subj)]),
            cell_to_string(row[static_cast<std::size_t>(paramcd)]));
        if (!keys.insert(key).second) {
          error("USUBJID", "duplicate (USUBJID, PARAMCD): " + key.first +
                               ", " + key.second);
          break;
        }
      }
    }
  }

  report.passed =
      std::none_of(report.issues.begin(), report.issues.end(),
                   [](const ValidationIssue& issue) {
                     return issue.severity == ValidationIssue::Severity::Error;
                   });
  return report;
}

std::string canonical_content(const AnalysisDataset& dataset) {
  constexpr char kUnitSep = '\x1f';
  std::string out;
  for (std::size_t c = 0; c < dataset.columns.size(); ++c) {
    if (c) out.push_back(kUnitSep);
    out += dataset.columns[c].name;
  }
  out.push_back('\n');
  for (const auto& row : dataset.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out.push_back(kUnitSep);
      out += cell_to_string(row[c]);
    }
    out.push_back('\n');
  }
  return out;
}

std::string checksum_dataset(const AnalysisDataset& dataset) {
  return sha256_hex(canonical_content(dataset));
}

std::string serialize_dataset_csv(const AnalysisDataset& dataset) {
  csv::Table table;
  for (const auto& column : dataset.columns) table.header.push_back(column.name);
  for (const auto& row : dataset.rows) {
    std::vector<std::string> fields;
    fields.reserve(row.size());
    for (const auto& cell : row) fields.push_back(cell_to_string(cell));
    table.rows.push_back(std::move(fields));
  }
  return csv::write(table);
}

}  // namespace ardm
