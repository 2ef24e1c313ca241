#include "ardm/standards.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "ardm/dataset.hpp"
#include "ardm/errors.hpp"
#include "ardm/schema.hpp"
#include "ardm/sha256.hpp"
#include "ardm/stats.hpp"

namespace ardm {

namespace {

int kind_rank(StepKind kind) {
  switch (kind) {
    case StepKind::Select: return 0;
    case StepKind::Transform: return 1;
    case StepKind::ApplyFormula: return 2;
    case StepKind::Store: return 3;
  }
  return 3;
}

const std::map<StepKind, std::set<std::string>>& step_vocabulary() {
  static const std::map<StepKind, std::set<std::string>> vocab = {
      {StepKind::Select, {"select_dataset", "filter_equals"}},
      {StepKind::Transform,
       {"derive_event", "attach_group", "subject_denominators"}},
      {StepKind::ApplyFormula,
       {"describe_continuous", "describe_categorical", "ae_incidence",
        "km_estimate"}},
      {StepKind::Store, {"store_results"}},
  };
  return vocab;
}

std::vector<long> version_segments(const std::string& version) {
  std::vector<long> segments;
  std::size_t pos = 0;
  while (pos <= version.size()) {
    std::size_t dot = version.find('.', pos);
    std::string part = version.substr(
        pos, dot == std::string::npos ? std::string::npos : dot - pos);
    long value = 0;
    const char* first = part.data();
    const char* last = first + part.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (part.empty() || ec != std::errc{} || ptr != last || value < 0) {
      throw SchemaError("version must be dot-separated numeric segments: " +
                        version);
    }
    segments.push_back(value);
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return segments;
}

}  // namespace

std::string to_string(StepKind kind) {
  switch (kind) {
    case StepKind::Select: return "select";
    case StepKind::Transform: return "transform";
    case StepKind::ApplyFormula: return "apply_formula";
    case StepKind::Store: return "store";
  }
  return "store";
}

StepKind step_kind_from_string(std::string_view text) {
  if (text == "select") return StepKind::Select;
  if (text == "transform") return StepKind::Transform;
  if (text == "apply_formula") return StepKind::ApplyFormula;
  if (text == "store") return StepKind::Store;
  throw SchemaError("unknown step kind: " + std::string(text));
}

std::string to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::Text: return "text";
    case ParamKind::Number: return "number";
    case ParamKind::TextList: return "text_list";
  }
  return "text";
}

ParamKind param_kind_from_string(std::string_view text) {
  if (text == "text") return ParamKind::Text;
  if (text == "number") return ParamKind::Number;
  if (text == "text_list") return ParamKind::TextList;
  throw SchemaError("unknown parameter kind: " + std::string(text));
}

nlohmann::json standard_to_json(const AnalysisStandard& standard) {
  nlohmann::json doc;
  doc["name"] = standard.name;
  doc["version"] = standard.version;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& param : standard.params) {
    nlohmann::json p;
    p["name"] = param.name;
    p["kind"] = to_string(param.kind);
    p["required"] = param.required;
    p["default"] = param.default_value;
    p["allowed"] = param.allowed;
    params.push_back(std::move(p));
  }
  doc["params"] = std::move(params);
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& step : standard.steps) {
    nlohmann::json s;
    s["kind"] = to_string(step.kind);
    s["op"] = step.op;
    s["args"] = step.args;
    steps.push_back(std::move(s));
  }
  doc["steps"] = std::move(steps);
  return doc;
}

AnalysisStandard standard_from_json(const nlohmann::json& doc) {
  AnalysisStandard standard;
  try {
    standard.name = doc.at("name").get<std::string>();
    standard.version = doc.at("version").get<std::string>();
    for (const auto& p : doc.at("params")) {
      ParamSpec spec;
      spec.name = p.at("name").get<std::string>();
      spec.kind = param_kind_from_string(p.at("kind").get<std::string>());
      spec.required = p.at("required").get<bool>();
      spec.default_value = p.value("default", nlohmann::json());
      if (p.contains("allowed")) {
        spec.allowed = p.at("allowed").get<std::vector<std::string>>();
      }
      standard.params.push_back(std::move(spec));
    }
    for (const auto& s : doc.at("steps")) {
      GrammarStep step;
      step.kind = step_kind_from_string(s.at("kind").get<std::string>());
      step.op = s.at("op").get<std::string>();
      step.args = s.value("args", nlohmann::json::object());
      standard.steps.push_back(std::move(step));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed standard definition: ") +
                      e.what());
  }
  return standard;
}

std::vector<AnalysisStandard> builtin_standards() {
  std::vector<AnalysisStandard> standards;

  {
    AnalysisStandard descriptive;
    descriptive.name = "descriptive";
    descriptive.version = "1.0.0";
    descriptive.params = {
        {"variables", ParamKind::TextList, true, nlohmann::json(), {}},
        {"group_by", ParamKind::Text, false, "TRT01P", {}},
    };
    descriptive.steps = {
        {StepKind::Select, "select_dataset",
         {{"domain", "ADSL"}, {"role", "analysis"}}},
        {StepKind::Transform, "attach_group", {{"column_param", "group_by"}}},
        {StepKind::ApplyFormula, "describe_continuous",
         {{"variables_param", "variables"}}},
        {StepKind::ApplyFormula, "describe_categorical",
         {{"variables_param", "variables"}}},
        {StepKind::Store, "store_results", nlohmann::json::object()},
    };
    standards.push_back(std::move(descriptive));
  }

  {
    AnalysisStandard safety;
    safety.name = "safety";
    safety.version = "1.0.0";
    safety.params = {
        {"group_by", ParamKind::Text, false, "TRTA", {}},
        {"level",
         ParamKind::Text,
         false,
         "preferred_term",
         {"preferred_term", "body_system"}},
    };
    safety.steps = {
        {StepKind::Select, "select_dataset",
         {{"domain", "ADAE"}, {"role", "events"}}},
        {StepKind::Select, "select_dataset",
         {{"domain", "ADSL"}, {"role", "population"}}},
        {StepKind::Transform, "subject_denominators",
         nlohmann::json::object()},
        {StepKind::ApplyFormula, "ae_incidence",
         {{"group_param", "group_by"}, {"level_param", "level"}}},
        {StepKind::Store, "store_results", nlohmann::json::object()},
    };
    standards.push_back(std::move(safety));
  }

  {
    AnalysisStandard survival;
    survival.name = "survival";
    survival.version = "1.0.0";
    survival.params = {
        {"param", ParamKind::Text, true, nlohmann::json(), {}},
        {"strata", ParamKind::Text, false, "TRTP", {}},
        {"conf_level", ParamKind::Number, false, 0.95, {}},
    };
    survival.steps = {
        {StepKind::Select, "select_dataset",
         {{"domain", "ADTTE"}, {"role", "analysis"}}},
        {StepKind::Select, "filter_equals",
         {{"column", "PARAMCD"}, {"value_param", "param"}}},
        {StepKind::Transform, "derive_event", {{"censor_column", "CNSR"}}},
        {StepKind::Transform, "attach_group", {{"column_param", "strata"}}},
        {StepKind::ApplyFormula, "km_estimate",
         {{"time_column", "AVAL"}, {"conf_param", "conf_level"}}},
        {StepKind::Store, "store_results", nlohmann::json::object()},
    };
    standards.push_back(std::move(survival));
  }

  return standards;
}

CanonicalParams canonicalize_params(const AnalysisStandard& standard,
                                    const ParamMap& params) {
  std::map<std::string, const ParamSpec*> specs;
  for (const auto& spec : standard.params) specs[spec.name] = &spec;

  // std::map keys keep the serialization key-sorted.
  std::map<std::string, nlohmann::json> defaulted;

  for (const auto& [name, raw] : params) {
    auto it = specs.find(name);
    if (it == specs.end()) {
      throw SchemaError("unknown parameter name: " + name);
    }
    const ParamSpec& spec = *it->second;
    nlohmann::json value;
    switch (spec.kind) {
      case ParamKind::Text: {
        if (!raw.is_string()) {
          throw SchemaError("parameter " + name + " must be text");
        }
        value = raw;
        break;
      }
      case ParamKind::Number: {
        if (raw.is_number()) {
          value = raw.get<double>();
        } else if (raw.is_string()) {
          const std::string text = raw.get<std::string>();
          double parsed = 0.0;
          const char* first = text.data();
          const char* last = first + text.size();
          auto [ptr, ec] = std::from_chars(first, last, parsed);
          if (text.empty() || ec != std::errc{} || ptr != last ||
              !std::isfinite(parsed)) {
            throw SchemaError("parameter " + name +
                              " must be a number, got: " + text);
          }
          value = parsed;
        } else {
          throw SchemaError("parameter " + name + " must be a number");
        }
        break;
      }
      case ParamKind::TextList: {
        std::vector<std::string> items;
        if (raw.is_array()) {
          for (const auto& item : raw) {
            if (!item.is_string()) {
              throw SchemaError("parameter " + name +
                                " must be a list of text values");
            }
            items.push_back(item.get<std::string>());
          }
        } else if (raw.is_string()) {
          const std::string text = raw.get<std::string>();
          std::size_t pos = 0;
          while (pos <= text.size()) {
            std::size_t comma = text.find(',', pos);
            std::string item = text.substr(
                pos,
                comma == std::string::npos ? std::string::npos : comma - pos);
            if (!item.empty()) items.push_back(std::move(item));
            if (comma == std::string::npos) break;
            pos = comma + 1;
          }
        } else {
          throw SchemaError("parameter " + name + " must be a text list");
        }
        value = items;
        break;
      }
    }
    if (!spec.allowed.empty()) {
      const std::string text = value.get<std::string>();
      if (std::find(spec.allowed.begin(), spec.allowed.end(), text) ==
          spec.allowed.end()) {
        std::string allowed;
        for (const auto& a : spec.allowed) {
          if (!allowed.empty()) allowed += ", ";
          allowed += a;
        }
        throw SchemaError("parameter " + name + " must be one of {" +
                          allowed + "}, got: " + text);
      }
    }
    defaulted[name] = std::move(value);
  }

  for (const auto& spec : standard.params) {
    if (defaulted.contains(spec.name)) continue;
    if (spec.required) {
      throw SchemaError("missing required parameter: " + spec.name);
    }
    if (!spec.default_value.is_null()) {
      defaulted[spec.name] = spec.default_value;
    }
  }

  for (const auto& spec : standard.params) {
    if (spec.required && spec.kind == ParamKind::TextList &&
        defaulted.at(spec.name).empty()) {
      throw SchemaError("parameter " + spec.name + " must not be empty");
    }
  }

  CanonicalParams canonical;
  canonical.defaulted = nlohmann::json(defaulted);
  canonical.canonical = canonical.defaulted.dump();
  canonical.digest = sha256_hex(canonical.canonical);
  return canonical;
}

namespace {

void validate_standard(const AnalysisStandard& standard) {
  if (standard.name.empty()) throw SchemaError("standard name is empty");
  version_segments(standard.version);

  std::set<std::string> param_names;
  for (const auto& param : standard.params) {
    if (!param_names.insert(param.name).second) {
      throw SchemaError("duplicate parameter name: " + param.name);
    }
  }

  if (standard.steps.empty()) throw SchemaError("standard has no steps");
  int last_rank = -1;
  int formula_count = 0;
  int store_count = 0;
  for (const auto& step : standard.steps) {
    const int rank = kind_rank(step.kind);
    if (rank < last_rank) {
      throw SchemaError("steps violate grammar order (select -> transform ->"
                        " apply_formula -> store): " +
                        step.op + " appears after a later stage");
    }
    last_rank = rank;
    const auto& allowed = step_vocabulary().at(step.kind);
    if (!allowed.contains(step.op)) {
      throw SchemaError("unknown " + to_string(step.kind) + " op: " + step.op);
    }
    if (step.kind == StepKind::ApplyFormula) ++formula_count;
    if (step.kind == StepKind::Store) ++store_count;
  }
  if (formula_count == 0) {
    throw SchemaError("standard has no apply_formula step");
  }
  if (store_count != 1 || standard.steps.back().kind != StepKind::Store) {
    throw SchemaError("standard must end with exactly one store step");
  }
}

}  // namespace

void register_standard(Store& store, const AnalysisStandard& standard) {
  validate_standard(standard);
  const std::string definition = standard_to_json(standard).dump();

  {
    auto stmt = store.prepare(
        "SELECT definition FROM standards_registry WHERE name=?1 AND"
        " version=?2");
    stmt.bind_text(1, standard.name).bind_text(2, standard.version);
    if (stmt.step()) {
      if (stmt.text(0) == definition) return;  // identical content: no-op
      throw SchemaError("standard " + standard.name + " " + standard.version +
                        " is already registered with different content");
    }
  }

  WriteTransaction txn(store);
  auto insert = store.prepare(
      "INSERT INTO standards_registry (name, version, definition)"
      " VALUES (?1,?2,?3)");
  insert.bind_text(1, standard.name)
      .bind_text(2, standard.version)
      .bind_text(3, definition);
  insert.step();
  txn.commit();
}

std::vector<StandardSummary> list_standards(const Store& store) {
  struct Entry {
    StandardSummary summary;
    std::vector<long> segments;
  };
  std::vector<Entry> entries;
  auto stmt =
      store.prepare("SELECT name, version, definition FROM standards_registry");
  while (stmt.step()) {
    AnalysisStandard standard =
        standard_from_json(nlohmann::json::parse(stmt.text(2)));
    Entry entry;
    entry.summary.name = standard.name;
    entry.summary.version = standard.version;
    entry.summary.params = standard.params;
    entry.segments = version_segments(standard.version);
    entries.push_back(std::move(entry));
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a,
                                               const Entry& b) {
    if (a.summary.name != b.summary.name) {
      return a.summary.name < b.summary.name;
    }
    return a.segments < b.segments;
  });
  std::vector<StandardSummary> summaries;
  summaries.reserve(entries.size());
  for (auto& entry : entries) summaries.push_back(std::move(entry.summary));
  return summaries;
}

AnalysisStandard load_standard(const Store& store, const std::string& name,
                               const std::optional<std::string>& version) {
  auto stmt = store.prepare(
      "SELECT version, definition FROM standards_registry WHERE name=?1");
  stmt.bind_text(1, name);
  std::optional<std::string> best_definition;
  std::vector<long> best_segments;
  while (stmt.step()) {
    const std::string row_version = stmt.text(0);
    if (version) {
      if (row_version == *version) {
        return standard_from_json(nlohmann::json::parse(stmt.text(1)));
      }
      continue;
    }
    auto segments = version_segments(row_version);
    if (!best_definition || segments > best_segments) {
      best_definition = stmt.text(1);
      best_segments = std::move(segments);
    }
  }
  if (!best_definition) {
    std::string what = "standard " + name;
    if (version) what += " " + *version;
    throw NotFoundError(what + " is not registered");
  }
  return standard_from_json(nlohmann::json::parse(*best_definition));
}

void register_builtin_standards(Store& store) {
  for (const auto& standard : builtin_standards()) {
    register_standard(store, standard);
  }
}

namespace {

// Mutable state threaded through the grammar steps of one run.
struct ExecState {
  std::map<std::string, std::int64_t> role_ids;
  std::map<std::string, AnalysisDataset> role_datasets;
  std::string analysis_role;
  std::vector<std::size_t> row_filter;  // active rows of the analysis dataset
  std::vector<int> event_flags;         // parallel to row_filter
  std::string group_column;
  std::map<std::string, long> denominators;
  std::vector<ResultRecord> records;
  std::vector<std::string> local_warnings;
};

const AnalysisDataset& analysis_dataset(const ExecState& state) {
  if (state.analysis_role.empty()) {
    throw DomainError("no analysis dataset selected");
  }
  return state.role_datasets.at(state.analysis_role);
}

std::string require_text_param(const nlohmann::json& defaulted,
                               const std::string& name) {
  if (!defaulted.contains(name)) {
    throw DomainError("step references unset parameter " + name);
  }
  return defaulted.at(name).get<std::string>();
}

std::string group_label_at(const AnalysisDataset& dataset, std::size_t row,
                           int column) {
  const Cell& cell = dataset.rows[row][static_cast<std::size_t>(column)];
  if (cell_is_null(cell)) {
    throw DomainError("missing group label in row of " +
                      to_string(dataset.domain));
  }
  return cell_to_string(cell);
}

void step_select_dataset(ExecState& state, Store& store,
                         const nlohmann::json& args,
                         const std::vector<std::int64_t>& dataset_ids) {
  const std::string domain_text = args.at("domain").get<std::string>();
  const Domain domain = domain_from_string(domain_text);
  const std::string role = args.value("role", "analysis");

  std::optional<std::int64_t> match;
  for (std::int64_t id : dataset_ids) {
    if (get_registration(store, id).domain != domain) continue;
    if (match) {
      throw DomainError("multiple input datasets with domain " + domain_text);
    }
    match = id;
  }
  if (!match) {
    throw DomainError("no input dataset with domain " + domain_text);
  }

  state.role_ids[role] = *match;
  state.role_datasets[role] = load_dataset(store, *match);
  if (role != "population") {
    state.analysis_role = role;
    const auto& dataset = state.role_datasets.at(role);
    state.row_filter.clear();
    for (std::size_t r = 0; r < dataset.rows.size(); ++r) {
      state.row_filter.push_back(r);
    }
  }
}

void step_filter_equals(ExecState& state, const nlohmann::json& args,
                        const nlohmann::json& defaulted) {
  const AnalysisDataset& dataset = analysis_dataset(state);
  const std::string column = args.at("column").get<std::string>();
  const std::string value =
      require_text_param(defaulted, args.at("value_param").get<std::string>());
  const int idx = dataset.column_index(column);
  if (idx < 0) {
    throw DomainError("filter column " + column + " not found in " +
                      to_string(dataset.domain));
  }
  std::vector<std::size_t> kept;
  for (std::size_t r : state.row_filter) {
    if (cell_to_string(dataset.rows[r][static_cast<std::size_t>(idx)]) ==
        value) {
      kept.push_back(r);
    }
  }
  if (kept.empty()) throw DomainError("empty analysis set");
  state.row_filter = std::move(kept);
}

void step_derive_event(ExecState& state, const nlohmann::json& args) {
  const AnalysisDataset& dataset = analysis_dataset(state);
  const std::string column = args.at("censor_column").get<std::string>();
  const int idx = dataset.column_index(column);
  if (idx < 0) {
    throw DomainError("censor column " + column + " not found in " +
                      to_string(dataset.domain));
  }
  state.event_flags.clear();
  state.event_flags.reserve(state.row_filter.size());
  for (std::size_t r : state.row_filter) {
    auto value = cell_number(dataset.rows[r][static_cast<std::size_t>(idx)]);
    if (!value || (*value != 0.0 && *value != 1.0)) {
      throw DomainError("censor flag " + column + " must be 0 or 1");
    }
    state.event_flags.push_back(1 - static_cast<int>(*value));
  }
}

void step_attach_group(ExecState& state, const nlohmann::json& args,
                       const nlohmann::json& defaulted) {
  const AnalysisDataset& dataset = analysis_dataset(state);
  const std::string column = require_text_param(
      defaulted, args.at("column_param").get<std::string>());
  if (dataset.column_index(column) < 0) {
    throw DomainError("grouping column " + column + " not found in " +
                      to_string(dataset.domain));
  }
  state.group_column = column;
}

void step_subject_denominators(ExecState& state, Store& store) {
  auto population = state.role_ids.find("population");
  if (population == state.role_ids.end()) {
    throw DomainError("no population dataset selected");
  }
  std::optional<std::int64_t> adae_id;
  if (auto events = state.role_ids.find("events");
      events != state.role_ids.end()) {
    adae_id = events->second;
  }
  build_subject_level(store, population->second, adae_id,
                      &state.local_warnings);
  state.denominators.clear();
  for (const auto& row : read_subject_level(store, population->second)) {
    if (!row.group) continue;
    ++state.denominators[*row.group];
  }
}

void formula_describe(ExecState& state, const nlohmann::json& args,
                      const nlohmann::json& defaulted, bool continuous) {
  const AnalysisDataset& dataset = analysis_dataset(state);
  if (state.group_column.empty()) {
    throw DomainError("no grouping column attached");
  }
  const int group_idx = dataset.column_index(state.group_column);
  const auto variables =
      defaulted.at(args.at("variables_param").get<std::string>())
          .get<std::vector<std::string>>();

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t r : state.row_filter) {
    groups[group_label_at(dataset, r, group_idx)].push_back(r);
  }

  for (const auto& [label, rows] : groups) {
    for (const auto& variable : variables) {
      const int idx = dataset.column_index(variable);
      if (idx < 0) {
        throw DomainError("variable " + variable + " not found in " +
                          to_string(dataset.domain));
      }
      const ColumnMeta& column = dataset.columns[static_cast<std::size_t>(idx)];
      const bool is_continuous = column.kind == ColumnKind::Continuous;
      if (is_continuous != continuous) continue;

      auto emit = [&](std::vector<std::pair<std::string, std::string>> keys,
                      const std::string& statistic,
                      std::optional<double> value, const std::string& unit) {
        if (!value) return;  // undefined statistics are omitted
        ResultRecord record;
        record.group_keys = std::move(keys);
        record.variable = variable;
        record.statistic_name = statistic;
        record.value = value;
        record.unit = unit;
        state.records.push_back(std::move(record));
      };
      const std::vector<std::pair<std::string, std::string>> base_keys = {
          {state.group_column, label}};

      if (continuous) {
        std::vector<std::optional<double>> values;
        values.reserve(rows.size());
        for (std::size_t r : rows) {
          values.push_back(
              cell_number(dataset.rows[r][static_cast<std::size_t>(idx)]));
        }
        const auto summary = stats::describe_continuous(values);
        emit(base_keys, "n", static_cast<double>(summary.n), column.unit);
        emit(base_keys, "n_missing", static_cast<double>(summary.n_missing),
             column.unit);
        emit(base_keys, "mean", summary.mean, column.unit);
        emit(base_keys, "sd", summary.sd, column.unit);
        emit(base_keys, "median", summary.median, column.unit);
        emit(base_keys, "q1", summary.q1, column.unit);
        emit(base_keys, "q3", summary.q3, column.unit);
        emit(base_keys, "min", summary.min, column.unit);
        emit(base_keys, "max", summary.max, column.unit);
      } else {
        std::vector<std::optional<std::string>> values;
        values.reserve(rows.size());
        for (std::size_t r : rows) {
          const Cell& cell = dataset.rows[r][static_cast<std::size_t>(idx)];
          if (cell_is_null(cell)) {
            values.push_back(std::nullopt);
          } else {
            values.push_back(cell_to_string(cell));
          }
        }
        const auto summary = stats::describe_categorical(values);
        // The level rides along as an extra group key so that two levels of
        // one variable stay unique under (run, keys, variable, statistic).
        for (const auto& level : summary.levels) {
          auto keys = base_keys;
          keys.emplace_back(variable, level.level);
          emit(keys, "count", static_cast<double>(level.count), column.unit);
          emit(keys, "percent", level.percent, column.unit);
        }
        emit(base_keys, "n_missing", static_cast<double>(summary.n_missing),
             column.unit);
      }
    }
  }
}

void formula_ae_incidence(ExecState& state, const nlohmann::json& args,
                          const nlohmann::json& defaulted) {
  const AnalysisDataset& dataset = analysis_dataset(state);
  const std::string group_column =
      require_text_param(defaulted, args.at("group_param").get<std::string>());
  const std::string level =
      require_text_param(defaulted, args.at("level_param").get<std::string>());
  const std::string term_column =
      level == "body_system" ? "AEBODSYS" : "AEDECOD";

  const int group_idx = dataset.column_index(group_column);
  if (group_idx < 0) {
    throw DomainError("grouping column " + group_column + " not found in " +
                      to_string(dataset.domain));
  }
  const int term_idx = dataset.column_index(term_column);
  if (term_idx < 0) {
    throw DomainError("term column " + term_column + " not found in " +
                      to_string(dataset.domain));
  }
  const int subj_idx = dataset.column_index("USUBJID");

  if (state.denominators.empty()) {
    throw DomainError("no denominators derived for incidence");
  }

  std::set<std::string> population;
  if (auto it = state.role_datasets.find("population");
      it != state.role_datasets.end()) {
    const AnalysisDataset& adsl = it->second;
    const int idx = adsl.column_index("USUBJID");
    for (const auto& row : adsl.rows) {
      population.insert(cell_to_string(row[static_cast<std::size_t>(idx)]));
    }
  }

  std::vector<stats::AeRow> ae_rows;
  for (std::size_t r : state.row_filter) {
    stats::AeRow ae;
    ae.usubjid = cell_to_string(
        dataset.rows[r][static_cast<std::size_t>(subj_idx)]);
    if (!population.empty() && !population.contains(ae.usubjid)) {
      state.local_warnings.push_back("ADAE subject " + ae.usubjid +
                                     " absent from ADSL; skipped");
      continue;
    }
    ae.group = group_label_at(dataset, r, group_idx);
    const Cell& term_cell =
        dataset.rows[r][static_cast<std::size_t>(term_idx)];
    if (cell_is_null(term_cell)) {
      throw DomainError("missing " + term_column + " value");
    }
    ae.term = cell_to_string(term_cell);
    ae_rows.push_back(std::move(ae));
  }

  for (const auto& row : stats::ae_incidence(ae_rows, state.denominators)) {
    const std::vector<std::pair<std::string, std::string>> keys = {
        {group_column, row.group}};
    auto emit = [&](const std::string& statistic, double value) {
      ResultRecord record;
      record.group_keys = keys;
      record.variable = row.term;
      record.statistic_name = statistic;
      record.value = value;
      state.records.push_back(std::move(record));
    };
    emit("n_subjects", static_cast<double>(row.n_subjects));
    emit("denom", static_cast<double>(row.denom));
    emit("percent", row.percent);
  }
}

void formula_km(ExecState& state, const nlohmann::json& args,
                const nlohmann::json& defaulted,
                const std::string& variable) {
  const AnalysisDataset& dataset = analysis_dataset(state);
  if (state.group_column.empty()) {
    throw DomainError("no strata column attached");
  }
  if (state.event_flags.size() != state.row_filter.size()) {
    throw DomainError("event indicator was not derived");
  }
  const std::string time_column = args.at("time_column").get<std::string>();
  const int time_idx = dataset.column_index(time_column);
  if (time_idx < 0) {
    throw DomainError("time column " + time_column + " not found in " +
                      to_string(dataset.domain));
  }
  const int group_idx = dataset.column_index(state.group_column);
  const std::string& unit =
      dataset.columns[static_cast<std::size_t>(time_idx)].unit;

  double conf_level = 0.95;
  if (args.contains("conf_param")) {
    const std::string conf_name = args.at("conf_param").get<std::string>();
    if (defaulted.contains(conf_name)) {
      conf_level = defaulted.at(conf_name).get<double>();
    }
  }

  struct StratumInput {
    std::vector<double> times;
    std::vector<int> events;
  };
  std::map<std::string, StratumInput> strata;
  for (std::size_t k = 0; k < state.row_filter.size(); ++k) {
    const std::size_t r = state.row_filter[k];
    const std::string label = group_label_at(dataset, r, group_idx);
    auto time =
        cell_number(dataset.rows[r][static_cast<std::size_t>(time_idx)]);
    if (!time) {
      throw DomainError("missing " + time_column + " value");
    }
    strata[label].times.push_back(*time);
    strata[label].events.push_back(state.event_flags[k]);
  }

  for (const auto& [label, input] : strata) {
    const stats::KmCurve curve =
        stats::km_estimate(input.times, input.events, conf_level);
    const std::vector<std::pair<std::string, std::string>> keys = {
        {state.group_column, label}};
    auto emit = [&](const std::string& statistic, std::optional<double> value,
                    std::optional<double> time) {
      if (!value) return;  // undefined statistics are omitted
      ResultRecord record;
      record.group_keys = keys;
      record.variable = variable;
      record.statistic_name = statistic;
      record.value = value;
      record.unit = unit;
      record.time = time;
      state.records.push_back(std::move(record));
    };
    emit("n_subjects", static_cast<double>(curve.n_subjects), std::nullopt);
    emit("n_events", static_cast<double>(curve.n_events), std::nullopt);
    emit("median_survival", curve.median_survival, std::nullopt);
    for (const auto& point : curve.points) {
      emit("n_risk", static_cast<double>(point.n_risk), point.time);
      emit("n_event", static_cast<double>(point.n_event), point.time);
      emit("n_censor", static_cast<double>(point.n_censor), point.time);
      emit("surv", point.surv, point.time);
      emit("std_err", point.std_err, point.time);
      emit("ci_lower", point.ci_lower, point.time);
      emit("ci_upper", point.ci_upper, point.time);
    }
  }
}

}  // namespace

AnalysisRun run_standard(Store& store, const std::string& name,
                         const ParamMap& params,
                         const std::vector<std::int64_t>& dataset_ids,
                         const RunOptions& options) {
  const AnalysisStandard standard = load_standard(store, name);
  const CanonicalParams canonical = canonicalize_params(standard, params);

  std::vector<std::string> checksums;
  for (std::int64_t id : dataset_ids) {
    checksums.push_back(get_registration(store, id).checksum);
  }
  std::sort(checksums.begin(), checksums.end());
  std::string identity_input =
      standard.name + "\n" + standard.version + "\n" + canonical.canonical;
  for (const auto& checksum : checksums) identity_input += "\n" + checksum;
  const std::string identity = sha256_hex(identity_input);

  {
    auto stmt = store.prepare(
        "SELECT run_id FROM runs WHERE identity=?1 AND status='completed'");
    stmt.bind_text(1, identity);
    if (stmt.step()) {
      AnalysisRun existing = get_run(store, stmt.int64(0));
      existing.status = RunStatus::SkippedDuplicate;
      return existing;
    }
  }

  AnalysisRun run;
  run.standard_name = standard.name;
  run.standard_version = standard.version;
  run.canonical_params = canonical.canonical;
  run.identity = identity;
  run.dataset_ids = dataset_ids;
  run.started_utc = utc_timestamp();

  ExecState state;
  auto trace = [&](const GrammarStep& step) {
    if (options.step_trace != nullptr) {
      options.step_trace->push_back(to_string(step.kind) + ":" + step.op);
    }
  };

  try {
    for (const auto& step : standard.steps) {
      trace(step);
      if (step.op == "select_dataset") {
        step_select_dataset(state, store, step.args, dataset_ids);
      } else if (step.op == "filter_equals") {
        step_filter_equals(state, step.args, canonical.defaulted);
      } else if (step.op == "derive_event") {
        step_derive_event(state, step.args);
      } else if (step.op == "attach_group") {
        step_attach_group(state, step.args, canonical.defaulted);
      } else if (step.op == "subject_denominators") {
        step_subject_denominators(state, store);
      } else if (step.op == "describe_continuous") {
        formula_describe(state, step.args, canonical.defaulted, true);
      } else if (step.op == "describe_categorical") {
        formula_describe(state, step.args, canonical.defaulted, false);
      } else if (step.op == "ae_incidence") {
        formula_ae_incidence(state, step.args, canonical.defaulted);
      } else if (step.op == "km_estimate") {
        std::string variable = "AVAL";
        if (canonical.defaulted.contains("param")) {
          variable = canonical.defaulted.at("param").get<std::string>();
        }
        formula_km(state, step.args, canonical.defaulted, variable);
      } else if (step.op == "store_results") {
        if (state.records.empty()) throw DomainError("empty analysis set");
        run.finished_utc = utc_timestamp();
        run.status = RunStatus::Completed;
        insert_results(store, run, state.records, options.fail_after_records);
      } else {
        throw SchemaError("unknown step op: " + step.op);
      }
    }
  } catch (const LockError&) {
    throw;
  } catch (const std::exception& e) {
    AnalysisRun failed = run;
    failed.status = RunStatus::Failed;
    failed.finished_utc = utc_timestamp();
    try {
      insert_results(store, failed, {});
    } catch (...) {
      // The failure itself wins; bookkeeping best-effort.
    }
    throw RunError("run of standard " + standard.name + " failed: " +
                   e.what());
  }

  if (options.warnings != nullptr) {
    options.warnings->insert(options.warnings->end(),
                             state.local_warnings.begin(),
                             state.local_warnings.end());
  }
  return run;
}

}  // namespace ardm
