#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ardm/store.hpp"

namespace ardm::render {

// Read-only products built from stored results. Nothing in this module
// computes statistics; it only reshapes what the store already holds.

struct KmStepPoint {
  double time = 0.0;
  double surv = 1.0;
};

struct KmCensorMark {
  double time = 0.0;
  double surv = 1.0;
};

struct KmBandPoint {
  double time = 0.0;
  double lower = 0.0;
  double upper = 1.0;
};

struct KmStratumSeries {
  std::string label;
  std::vector<KmStepPoint> steps;  // begins at (0, 1.0)
  std::vector<KmCensorMark> censor_marks;
  std::vector<KmBandPoint> ci_band;  // only where bounds were stored
};

struct KmPlotData {
  std::vector<KmStratumSeries> strata;  // sorted by label
  double conf_level = 0.95;
  std::int64_t source_run = 0;
};

// Builds plot data for a completed survival run from stored results only.
// Excluded strata are absent; the remaining strata are identical to an
// un-excluded render. Unknown labels in exclude_strata produce a warning
// and are otherwise ignored.
KmPlotData render_km_plot_data(const Store& store, std::int64_t run_id,
                               const std::vector<std::string>& exclude_strata =
                                   {},
                               std::vector<std::string>* warnings = nullptr);

// Deterministic serializations (identical input -> identical bytes).
std::string km_plot_data_to_json(const KmPlotData& plot);
std::string km_plot_data_to_csv(const KmPlotData& plot);

// Minimal SVG 1.1 renderer: one step polyline per stratum, censor ticks,
// linear axes from 0 to the maximum time and 0..1 survival.
std::string render_km_svg(const KmPlotData& plot, int width, int height);

struct TableDocument {
  enum class Orientation { Long, Wide };
  Orientation orientation = Orientation::Long;
  std::string caption;  // run provenance
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Long: one row per stored record in query order. Wide: pivot with one row
// per (group keys, variable[, time]) and one column per statistic. Numbers
// are formatted to at most 6 significant digits.
TableDocument render_table(const Store& store, std::int64_t run_id,
                           TableDocument::Orientation orientation);

std::string table_to_csv(const TableDocument& table);

}  // namespace ardm::render
