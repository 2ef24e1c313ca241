#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ardm/dataset.hpp"
#include "ardm/errors.hpp"
#include "ardm/render.hpp"
#include "ardm/schema.hpp"
#include "ardm/standards.hpp"
#include "ardm/store.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ardm::ArgumentError("cannot read file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ardm::ArgumentError("cannot write file: " + path);
  out << text;
  if (!out) throw ardm::ArgumentError("cannot write file: " + path);
}

ardm::Store open_existing(const std::string& db, bool read_only) {
  if (!std::filesystem::exists(db)) {
    throw ardm::ArgumentError("no store at " + db + "; run init first");
  }
  ardm::Store store = ardm::open_store(db, /*create=*/false, read_only);
  if (store.schema_version() == 0) {
    throw ardm::ArgumentError("store at " + db +
                              " is not initialized; run init first");
  }
  return store;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& warning : warnings) {
    std::cerr << "warning: " << warning << "\n";
  }
}

std::pair<std::string, std::string> split_key_value(const std::string& text,
                                                    const char* flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ardm::ArgumentError(std::string(flag) + " expects KEY=VALUE, got: " +
                              text);
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

void cmd_init(const std::string& db) {
  ardm::Store store = ardm::open_store(db, /*create=*/true);
  ardm::init_schema(store);
  ardm::register_builtin_standards(store);
  nlohmann::ordered_json payload;
  payload["db"] = db;
  payload["schema_version"] = store.schema_version();
  payload["standards"] = ardm::list_standards(store).size();
  std::cout << payload.dump() << "\n";
}

void cmd_ingest(const std::string& db, const std::string& file,
                const std::string& domain_text, const std::string& meta_path) {
  const ardm::Domain domain = ardm::domain_from_string(domain_text);
  const std::string csv_text = read_file(file);
  std::vector<ardm::ColumnMeta> meta;
  const std::vector<ardm::ColumnMeta>* meta_ptr = nullptr;
  if (!meta_path.empty()) {
    meta = ardm::parse_column_meta_json(read_file(meta_path));
    meta_ptr = &meta;
  }
  const std::string source_name =
      std::filesystem::path(file).filename().string();
  const ardm::AnalysisDataset dataset =
      ardm::parse_dataset(csv_text, domain, meta_ptr, source_name);

  const ardm::ValidationReport report = ardm::validate_domain(dataset);
  if (!report.issues.empty()) std::cerr << report.to_text();
  if (!report.passed) {
    throw ardm::DomainError("dataset rejected by validation");
  }

  ardm::Store store = open_existing(db, /*read_only=*/false);
  const ardm::DatasetRegistration reg = ardm::register_dataset(store, dataset);
  nlohmann::ordered_json payload;
  payload["dataset_id"] = reg.dataset_id;
  payload["domain"] = ardm::to_string(reg.domain);
  payload["source_name"] = reg.source_name;
  payload["checksum"] = reg.checksum;
  payload["n_rows"] = reg.n_rows;
  std::cout << payload.dump() << "\n";
}

void cmd_standards_list(const std::string& db) {
  ardm::Store store = open_existing(db, /*read_only=*/true);
  nlohmann::ordered_json payload = nlohmann::ordered_json::array();
  for (const auto& summary : ardm::list_standards(store)) {
    nlohmann::ordered_json entry;
    entry["name"] = summary.name;
    entry["version"] = summary.version;
    entry["params"] = nlohmann::ordered_json::array();
    for (const auto& param : summary.params) {
      nlohmann::ordered_json p;
      p["name"] = param.name;
      p["kind"] = ardm::to_string(param.kind);
      p["required"] = param.required;
      if (!param.default_value.is_null()) p["default"] = param.default_value;
      if (!param.allowed.empty()) p["allowed"] = param.allowed;
      entry["params"].push_back(std::move(p));
    }
    payload.push_back(std::move(entry));
  }
  std::cout << payload.dump(2) << "\n";
}

void cmd_run(const std::string& db, const std::string& standard,
             const std::vector<std::string>& param_args,
             const std::vector<std::int64_t>& dataset_ids) {
  ardm::ParamMap params;
  for (const auto& arg : param_args) {
    auto [key, value] = split_key_value(arg, "--param");
    if (params.contains(key)) {
      throw ardm::ArgumentError("duplicate --param " + key);
    }
    params[key] = value;
  }

  ardm::Store store = open_existing(db, /*read_only=*/false);
  std::vector<std::string> warnings;
  ardm::RunOptions options;
  options.warnings = &warnings;
  const ardm::AnalysisRun run =
      ardm::run_standard(store, standard, params, dataset_ids, options);
  print_warnings(warnings);

  if (run.status == ardm::RunStatus::SkippedDuplicate) {
    std::cerr << "skipped duplicate: run " << run.run_id
              << " already stores these results\n";
  }

  std::int64_t n_records = 0;
  for (const auto& summary : ardm::list_runs(store)) {
    if (summary.run_id == run.run_id) n_records = summary.n_records;
  }
  nlohmann::ordered_json payload;
  payload["run_id"] = run.run_id;
  payload["standard"] = run.standard_name;
  payload["version"] = run.standard_version;
  payload["status"] = ardm::to_string(run.status);
  payload["n_records"] = n_records;
  payload["identity"] = run.identity;
  std::cout << payload.dump() << "\n";
}

void cmd_query(const std::string& db,
               const std::optional<std::string>& standard,
               const std::optional<std::int64_t>& run_id,
               const std::vector<std::string>& group_args,
               const std::vector<std::string>& statistics,
               const std::string& format) {
  ardm::ResultFilter filter;
  filter.standard_name = standard;
  filter.run_id = run_id;
  for (const auto& arg : group_args) {
    filter.group_equals.push_back(split_key_value(arg, "--group"));
  }
  filter.statistic_names.insert(statistics.begin(), statistics.end());

  ardm::Store store = open_existing(db, /*read_only=*/true);
  std::vector<std::string> warnings;
  const auto results = ardm::query_results(store, filter, &warnings);
  print_warnings(warnings);
  if (format == "json") {
    std::cout << ardm::results_to_json(results);
  } else {
    std::cout << ardm::results_to_csv(results);
  }
}

void cmd_render_km(const std::string& db, std::int64_t run_id,
                   const std::vector<std::string>& exclude,
                   const std::string& svg_path, const std::string& out_path) {
  ardm::Store store = open_existing(db, /*read_only=*/true);
  std::vector<std::string> warnings;
  const ardm::render::KmPlotData plot =
      ardm::render::render_km_plot_data(store, run_id, exclude, &warnings);
  print_warnings(warnings);

  const std::string json = ardm::render::km_plot_data_to_json(plot);
  if (out_path.empty()) {
    std::cout << json;
  } else {
    write_file(out_path, json);
  }
  if (!svg_path.empty()) {
    write_file(svg_path, ardm::render::render_km_svg(plot, 800, 600));
  }
}

void cmd_render_table(const std::string& db, std::int64_t run_id,
                      const std::string& orientation,
                      const std::string& out_path) {
  ardm::Store store = open_existing(db, /*read_only=*/true);
  const auto table = ardm::render::render_table(
      store, run_id,
      orientation == "wide" ? ardm::render::TableDocument::Orientation::Wide
                            : ardm::render::TableDocument::Orientation::Long);
  const std::string text =
      "# " + table.caption + "\n" + ardm::render::table_to_csv(table);
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_file(out_path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ardm: store-first clinical analysis results"};
  app.require_subcommand(1);

  std::string db;
  auto add_db = [&db](CLI::App* cmd) {
    cmd->add_option("--db", db, "store file")
        ->envname("ARDM_DB")
        ->required();
  };

  auto* init = app.add_subcommand("init", "create a store and register the"
                                          " built-in standards");
  add_db(init);
  init->callback([&]() { cmd_init(db); });

  auto* ingest = app.add_subcommand("ingest", "parse, validate and register"
                                              " a dataset");
  add_db(ingest);
  std::string ingest_file, ingest_domain, ingest_meta;
  ingest->add_option("--file", ingest_file, "CSV file")->required();
  ingest->add_option("--domain", ingest_domain, "dataset domain")
      ->required()
      ->check(CLI::IsMember({"ADSL", "ADTTE", "ADAE"}));
  ingest->add_option("--meta", ingest_meta, "column metadata JSON");
  ingest->callback(
      [&]() { cmd_ingest(db, ingest_file, ingest_domain, ingest_meta); });

  auto* standards = app.add_subcommand("standards", "standards registry");
  standards->require_subcommand(1);
  auto* standards_list =
      standards->add_subcommand("list", "list registered standards");
  add_db(standards_list);
  standards_list->callback([&]() { cmd_standards_list(db); });

  auto* run = app.add_subcommand("run", "execute a standard");
  add_db(run);
  std::string run_standard_name;
  std::vector<std::string> run_params;
  std::vector<std::int64_t> run_datasets;
  run->add_option("--standard", run_standard_name, "standard name")
      ->required();
  run->add_option("--param", run_params, "parameter KEY=VALUE");
  run->add_option("--dataset", run_datasets, "input dataset id")->required();
  run->callback(
      [&]() { cmd_run(db, run_standard_name, run_params, run_datasets); });

  auto* query = app.add_subcommand("query", "filter stored results");
  add_db(query);
  std::string query_standard;
  std::int64_t query_run = 0;
  std::vector<std::string> query_groups, query_statistics;
  std::string query_format = "csv";
  auto* query_standard_opt =
      query->add_option("--standard", query_standard, "standard name");
  auto* query_run_opt = query->add_option("--run", query_run, "run id");
  query->add_option("--group", query_groups, "group KEY=VALUE");
  query->add_option("--statistic", query_statistics, "statistic name");
  query->add_option("--format", query_format, "output format")
      ->check(CLI::IsMember({"csv", "json"}));
  query->callback([&]() {
    cmd_query(db,
              query_standard_opt->count() > 0
                  ? std::optional<std::string>(query_standard)
                  : std::nullopt,
              query_run_opt->count() > 0 ? std::optional<std::int64_t>(query_run)
                                         : std::nullopt,
              query_groups, query_statistics, query_format);
  });

  auto* render = app.add_subcommand("render", "derive products from stored"
                                              " results");
  render->require_subcommand(1);

  auto* render_km = render->add_subcommand("km", "survival plot data");
  add_db(render_km);
  std::int64_t km_run = 0;
  std::vector<std::string> km_exclude;
  std::string km_svg, km_out;
  render_km->add_option("--run", km_run, "run id")->required();
  render_km->add_option("--exclude-stratum", km_exclude, "stratum to drop");
  render_km->add_option("--svg", km_svg, "also write an SVG file");
  render_km->add_option("--out", km_out, "write plot JSON here instead of"
                                         " stdout");
  render_km->callback(
      [&]() { cmd_render_km(db, km_run, km_exclude, km_svg, km_out); });

  auto* render_table = render->add_subcommand("table", "result table");
  add_db(render_table);
  std::int64_t table_run = 0;
  std::string table_orientation, table_out;
  render_table->add_option("--run", table_run, "run id")->required();
  render_table->add_option("--orientation", table_orientation, "table shape")
      ->required()
      ->check(CLI::IsMember({"long", "wide"}));
  render_table->add_option("--out", table_out, "write CSV here instead of"
                                               " stdout");
  render_table->callback(
      [&]() { cmd_render_table(db, table_run, table_orientation, table_out); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << app.help();
    return 1;
  } catch (const ardm::LockError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ardm::ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ardm::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ardm::NotFoundError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ardm::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ardm::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ardm::RunError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ardm::RenderError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ardm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
