#include "ardm/render.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <optional>
#include <set>

#include <nlohmann/json.hpp>

#include "ardm/csv.hpp"
#include "ardm/errors.hpp"

namespace ardm::render {

namespace {

std::string format_number(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string format_cell(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

std::string format_coord(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return buf;
}

struct KmRawPoint {
  double surv = 1.0;
  long n_censor = 0;
  std::optional<double> ci_lower, ci_upper;
};

AnalysisRun completed_run(const Store& store, std::int64_t run_id) {
  AnalysisRun run = get_run(store, run_id);
  if (run.status != RunStatus::Completed) {
    throw RenderError("run " + std::to_string(run_id) + " is not completed");
  }
  return run;
}

}  // namespace

KmPlotData render_km_plot_data(const Store& store, std::int64_t run_id,
                               const std::vector<std::string>& exclude_strata,
                               std::vector<std::string>* warnings) {
  const AnalysisRun run = completed_run(store, run_id);

  ResultFilter filter;
  filter.run_id = run_id;
  const auto results = query_results(store, filter);

  // Stratum label -> time -> accumulated point statistics.
  std::map<std::string, std::map<double, KmRawPoint>> strata;
  for (const auto& annotated : results) {
    const ResultRecord& record = annotated.record;
    if (!record.time || record.group_keys.empty()) continue;
    KmRawPoint& point =
        strata[record.group_keys.front().second][*record.time];
    if (record.statistic_name == "surv" && record.value) {
      point.surv = *record.value;
    } else if (record.statistic_name == "n_censor" && record.value) {
      point.n_censor = static_cast<long>(*record.value);
    } else if (record.statistic_name == "ci_lower") {
      point.ci_lower = record.value;
    } else if (record.statistic_name == "ci_upper") {
      point.ci_upper = record.value;
    }
  }
  if (strata.empty()) {
    throw RenderError("run " + std::to_string(run_id) +
                      " has no stored survival curve");
  }

  std::set<std::string> excluded;
  for (const auto& label : exclude_strata) {
    if (!strata.contains(label)) {
      if (warnings != nullptr) {
        warnings->push_back("exclude stratum " + label +
                            ": no such stratum in run " +
                            std::to_string(run_id));
      }
      continue;
    }
    excluded.insert(label);
  }
  if (excluded.size() == strata.size()) {
    throw RenderError("all strata excluded");
  }

  KmPlotData plot;
  plot.source_run = run_id;
  try {
    const auto params = nlohmann::json::parse(run.canonical_params);
    if (params.contains("conf_level")) {
      plot.conf_level = params.at("conf_level").get<double>();
    }
  } catch (const nlohmann::json::exception&) {
    // Keep the default when the stored params are not JSON.
  }

  for (const auto& [label, points] : strata) {
    if (excluded.contains(label)) continue;
    KmStratumSeries series;
    series.label = label;
    if (points.begin()->first > 0.0) {
      series.steps.push_back({0.0, 1.0});
    }
    for (const auto& [time, point] : points) {
      series.steps.push_back({time, point.surv});
      if (point.n_censor > 0) {
        series.censor_marks.push_back({time, point.surv});
      }
      if (point.ci_lower && point.ci_upper) {
        series.ci_band.push_back({time, *point.ci_lower, *point.ci_upper});
      }
    }
    plot.strata.push_back(std::move(series));
  }
  return plot;
}

std::string km_plot_data_to_json(const KmPlotData& plot) {
  nlohmann::ordered_json doc;
  doc["run"] = plot.source_run;
  doc["conf_level"] = plot.conf_level;
  doc["strata"] = nlohmann::ordered_json::array();
  for (const auto& series : plot.strata) {
    nlohmann::ordered_json s;
    s["label"] = series.label;
    s["steps"] = nlohmann::ordered_json::array();
    for (const auto& step : series.steps) {
      s["steps"].push_back({{"time", step.time}, {"surv", step.surv}});
    }
    s["censor_marks"] = nlohmann::ordered_json::array();
    for (const auto& mark : series.censor_marks) {
      s["censor_marks"].push_back({{"time", mark.time}, {"surv", mark.surv}});
    }
    s["ci_band"] = nlohmann::ordered_json::array();
    for (const auto& band : series.ci_band) {
      s["ci_band"].push_back({{"time", band.time},
                              {"lower", band.lower},
                              {"upper", band.upper}});
    }
    doc["strata"].push_back(std::move(s));
  }
  return doc.dump(2) + "\n";
}

std::string km_plot_data_to_csv(const KmPlotData& plot) {
  csv::Table table;
  table.header = {"stratum", "time", "surv", "ci_lower", "ci_upper",
                  "censored"};
  for (const auto& series : plot.strata) {
    std::map<double, const KmBandPoint*> bands;
    for (const auto& band : series.ci_band) bands[band.time] = &band;
    std::set<double> censored;
    for (const auto& mark : series.censor_marks) censored.insert(mark.time);
    for (const auto& step : series.steps) {
      std::vector<std::string> row;
      row.push_back(series.label);
      row.push_back(format_number(step.time));
      row.push_back(format_number(step.surv));
      auto band = bands.find(step.time);
      row.push_back(band == bands.end() ? ""
                                        : format_number(band->second->lower));
      row.push_back(band == bands.end() ? ""
                                        : format_number(band->second->upper));
      row.push_back(censored.contains(step.time) ? "1" : "0");
      table.rows.push_back(std::move(row));
    }
  }
  return csv::write(table);
}

std::string render_km_svg(const KmPlotData& plot, int width, int height) {
  if (width <= 0 || height <= 0) {
    throw ArgumentError("svg dimensions must be positive");
  }
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                   "#9467bd", "#ff7f0e", "#8c564b"};
  constexpr int kPaletteSize = 6;
  const double left = 50.0, top = 20.0, right = 20.0, bottom = 40.0;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  double max_time = 0.0;
  for (const auto& series : plot.strata) {
    for (const auto& step : series.steps) {
      max_time = std::max(max_time, step.time);
    }
  }
  if (max_time <= 0.0) max_time = 1.0;

  auto x_of = [&](double t) { return left + plot_w * (t / max_time); };
  auto y_of = [&](double s) { return top + plot_h * (1.0 - s); };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\" viewBox=\"0 0 " + std::to_string(width) + " " +
         std::to_string(height) + "\">\n";
  svg += "<rect width=\"" + std::to_string(width) + "\" height=\"" +
         std::to_string(height) + "\" fill=\"white\"/>\n";

  // Confidence bands go under the curves.
  int color_index = 0;
  for (const auto& series : plot.strata) {
    const char* color = kPalette[color_index % kPaletteSize];
    ++color_index;
    if (series.ci_band.size() < 2) continue;
    std::string points;
    for (const auto& band : series.ci_band) {
      points += format_coord(x_of(band.time)) + "," +
                format_coord(y_of(band.upper)) + " ";
    }
    for (auto it = series.ci_band.rbegin(); it != series.ci_band.rend();
         ++it) {
      points += format_coord(x_of(it->time)) + "," +
                format_coord(y_of(it->lower)) + " ";
    }
    points.pop_back();
    svg += "<polygon class=\"km-band\" points=\"" + points + "\" fill=\"" +
           std::string(color) + "\" fill-opacity=\"0.12\" stroke=\"none\"/>\n";
  }

  // Axes.
  svg += "<line x1=\"" + format_coord(left) + "\" y1=\"" +
         format_coord(top + plot_h) + "\" x2=\"" +
         format_coord(left + plot_w) + "\" y2=\"" + format_coord(top + plot_h) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + format_coord(left) + "\" y1=\"" + format_coord(top) +
         "\" x2=\"" + format_coord(left) + "\" y2=\"" +
         format_coord(top + plot_h) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double frac = i / 4.0;
    const double x = left + plot_w * frac;
    const double y = top + plot_h * (1.0 - frac);
    char label[32];
    std::snprintf(label, sizeof(label), "%g", max_time * frac);
    svg += "<line x1=\"" + format_coord(x) + "\" y1=\"" +
           format_coord(top + plot_h) + "\" x2=\"" + format_coord(x) +
           "\" y2=\"" + format_coord(top + plot_h + 5) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + format_coord(x) + "\" y=\"" +
           format_coord(top + plot_h + 18) +
           "\" font-size=\"11\" text-anchor=\"middle\">" + label +
           "</text>\n";
    char ylabel[32];
    std::snprintf(ylabel, sizeof(ylabel), "%g", frac);
    svg += "<line x1=\"" + format_coord(left - 5) + "\" y1=\"" +
           format_coord(y) + "\" x2=\"" + format_coord(left) + "\" y2=\"" +
           format_coord(y) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + format_coord(left - 8) + "\" y=\"" +
           format_coord(y + 4) +
           "\" font-size=\"11\" text-anchor=\"end\">" + ylabel + "</text>\n";
  }

  // One step polyline per stratum; these are the only polylines.
  color_index = 0;
  for (const auto& series : plot.strata) {
    const char* color = kPalette[color_index % kPaletteSize];
    std::string points;
    for (std::size_t i = 0; i < series.steps.size(); ++i) {
      const auto& step = series.steps[i];
      if (i > 0) {
        points += format_coord(x_of(step.time)) + "," +
                  format_coord(y_of(series.steps[i - 1].surv)) + " ";
      }
      points += format_coord(x_of(step.time)) + "," +
                format_coord(y_of(step.surv)) + " ";
    }
    if (!points.empty()) points.pop_back();
    svg += "<polyline class=\"km-step\" points=\"" + points +
           "\" fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\"/>\n";
    for (const auto& mark : series.censor_marks) {
      const double x = x_of(mark.time);
      const double y = y_of(mark.surv);
      svg += "<line class=\"km-censor\" x1=\"" + format_coord(x) +
             "\" y1=\"" + format_coord(y - 4) + "\" x2=\"" + format_coord(x) +
             "\" y2=\"" + format_coord(y + 4) + "\" stroke=\"" +
             std::string(color) + "\" stroke-width=\"1.5\"/>\n";
    }
    const double legend_y = top + 14.0 * (color_index + 1);
    svg += "<text x=\"" + format_coord(left + plot_w - 4) + "\" y=\"" +
           format_coord(legend_y) + "\" font-size=\"11\" text-anchor=\"end\""
           " fill=\"" + std::string(color) + "\">" + series.label +
           "</text>\n";
    ++color_index;
  }

  svg += "</svg>\n";
  return svg;
}

TableDocument render_table(const Store& store, std::int64_t run_id,
                           TableDocument::Orientation orientation) {
  const AnalysisRun run = completed_run(store, run_id);

  ResultFilter filter;
  filter.run_id = run_id;
  const auto results = query_results(store, filter);
  if (results.empty()) {
    throw RenderError("run " + std::to_string(run_id) +
                      " has no stored results");
  }

  TableDocument table;
  table.orientation = orientation;
  table.caption = "standard " + run.standard_name + " v" +
                  run.standard_version + ", run " + std::to_string(run_id) +
                  ", params " + run.canonical_params;

  auto keys_text = [](const ResultRecord& record) {
    std::string text;
    for (const auto& [name, value] : record.group_keys) {
      if (!text.empty()) text += "; ";
      text += name + "=" + value;
    }
    return text;
  };

  if (orientation == TableDocument::Orientation::Long) {
    table.header = {"group_keys", "variable",   "statistic", "value",
                    "value_text", "unit",       "time"};
    for (const auto& annotated : results) {
      const ResultRecord& record = annotated.record;
      std::vector<std::string> row;
      row.push_back(keys_text(record));
      row.push_back(record.variable);
      row.push_back(record.statistic_name);
      row.push_back(record.value ? format_cell(*record.value) : "");
      row.push_back(record.value_text.value_or(""));
      row.push_back(record.unit);
      row.push_back(record.time ? format_cell(*record.time) : "");
      table.rows.push_back(std::move(row));
    }
    return table;
  }

  // Wide: one row per (group keys, variable[, time]); statistic columns in
  // first-appearance order.
  std::vector<std::string> key_names;
  bool has_time = false;
  std::vector<std::string> statistics;
  for (const auto& annotated : results) {
    for (const auto& [name, value] : annotated.record.group_keys) {
      if (std::find(key_names.begin(), key_names.end(), name) ==
          key_names.end()) {
        key_names.push_back(name);
      }
    }
    if (annotated.record.time) has_time = true;
    if (std::find(statistics.begin(), statistics.end(),
                  annotated.record.statistic_name) == statistics.end()) {
      statistics.push_back(annotated.record.statistic_name);
    }
  }

  table.header = key_names;
  table.header.push_back("variable");
  if (has_time) table.header.push_back("time");
  for (const auto& statistic : statistics) table.header.push_back(statistic);

  struct WideRow {
    std::vector<std::string> cells;
  };
  std::vector<std::string> row_order;
  std::map<std::string, WideRow> rows;
  for (const auto& annotated : results) {
    const ResultRecord& record = annotated.record;
    std::string key = group_keys_canonical(record.group_keys) + "\x1f" +
                      record.variable;
    if (has_time) {
      key += "\x1f";
      if (record.time) key += format_number(*record.time);
    }
    auto it = rows.find(key);
    if (it == rows.end()) {
      WideRow row;
      row.cells.assign(table.header.size(), "");
      std::map<std::string, std::string> by_name(record.group_keys.begin(),
                                                 record.group_keys.end());
      for (std::size_t i = 0; i < key_names.size(); ++i) {
        if (auto found = by_name.find(key_names[i]); found != by_name.end()) {
          row.cells[i] = found->second;
        }
      }
      row.cells[key_names.size()] = record.variable;
      if (has_time && record.time) {
        row.cells[key_names.size() + 1] = format_cell(*record.time);
      }
      it = rows.emplace(key, std::move(row)).first;
      row_order.push_back(key);
    }
    const std::size_t stat_base = key_names.size() + (has_time ? 2 : 1);
    const std::size_t stat_index =
        stat_base + static_cast<std::size_t>(
                        std::find(statistics.begin(), statistics.end(),
                                  record.statistic_name) -
                        statistics.begin());
    std::string cell = record.value ? format_cell(*record.value)
                                    : record.value_text.value_or("");
    if (!it->second.cells[stat_index].empty() &&
        it->second.cells[stat_index] != cell) {
      throw RenderError("wide table collision at " + keys_text(record) +
                        ", variable " + record.variable + ", statistic " +
                        record.statistic_name);
    }
    it->second.cells[stat_index] = std::move(cell);
  }

  for (const auto& key : row_order) {
    table.rows.push_back(std::move(rows.at(key).cells));
  }
  return table;
}

std::string table_to_csv(const TableDocument& table) {
  csv::Table csv_table;
  csv_table.header = table.header;
  csv_table.rows = table.rows;
  return csv::write(csv_table);
}

}  // namespace ardm::render
