#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ardm/store.hpp"

namespace ardm {

enum class StepKind { Select, Transform, ApplyFormula, Store };
std::string to_string(StepKind kind);
StepKind step_kind_from_string(std::string_view text);

struct GrammarStep {
  StepKind kind = StepKind::Select;
  std::string op;
  nlohmann::json args = nlohmann::json::object();
};

enum class ParamKind { Text, Number, TextList };
std::string to_string(ParamKind kind);
ParamKind param_kind_from_string(std::string_view text);

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::Text;
  bool required = false;
  nlohmann::json default_value;          // null when none
  std::vector<std::string> allowed;      // empty = unrestricted (Text only)
};

// A declarative analysis definition: ordered grammar steps
// (select -> transform -> apply formula -> store) plus a parameter schema.
struct AnalysisStandard {
  std::string name;
  std::string version;  // dot-separated numeric segments
  std::vector<ParamSpec> params;
  std::vector<GrammarStep> steps;
};

// JSON document mirroring the AnalysisStandard fields; import/export
// surface for sharing definitions.
nlohmann::json standard_to_json(const AnalysisStandard& standard);
AnalysisStandard standard_from_json(const nlohmann::json& doc);

// The three built-in standards: descriptive, safety, survival.
std::vector<AnalysisStandard> builtin_standards();

using ParamMap = std::map<std::string, nlohmann::json>;

struct CanonicalParams {
  nlohmann::json defaulted;  // fully-defaulted object
  std::string canonical;     // key-sorted, whitespace-free text
  std::string digest;        // sha256 of canonical
};

// Validates params against the standard's schema (unknown name, missing
// required, kind coercion, allowed values), applies defaults, and returns
// the canonical serialization plus its digest. String inputs are coerced to
// the declared kind (numbers parsed, lists split on commas).
CanonicalParams canonicalize_params(const AnalysisStandard& standard,
                                    const ParamMap& params);

// Validates grammar order (kinds non-decreasing, exactly one trailing
// store step, at least one formula, ops from the fixed vocabulary) and
// persists the definition. Re-registering identical content is a no-op;
// different content under the same (name, version) is rejected.
void register_standard(Store& store, const AnalysisStandard& standard);

struct StandardSummary {
  std::string name;
  std::string version;
  std::vector<ParamSpec> params;
};

// Registry contents sorted by name, then version (numeric segments).
std::vector<StandardSummary> list_standards(const Store& store);

// Loads a registered standard; picks the highest version when unspecified.
AnalysisStandard load_standard(const Store& store, const std::string& name,
                               const std::optional<std::string>& version =
                                   std::nullopt);

void register_builtin_standards(Store& store);

struct RunOptions {
  // Test hook: abort the storage transaction after this many records.
  std::optional<std::size_t> fail_after_records;
  // Receives one entry per executed step, in execution order ("select:...").
  std::vector<std::string>* step_trace = nullptr;
  std::vector<std::string>* warnings = nullptr;
};

// Executes a registered standard against registered datasets. If a
// completed run with the same identity exists, returns it with status
// SkippedDuplicate and writes nothing. Execution failures persist a run row
// with status Failed, store no records, and rethrow as RunError.
AnalysisRun run_standard(Store& store, const std::string& name,
                         const ParamMap& params,
                         const std::vector<std::int64_t>& dataset_ids,
                         const RunOptions& options = {});

}  // namespace ardm
