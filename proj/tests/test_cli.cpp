#include <doctest.h>

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ardm/sha256.hpp"
#include "ardm/store.hpp"
#include "test_util.hpp"

using testutil::CliResult;
using testutil::TempDir;
using testutil::run_cli;

namespace {

std::string data_file(const std::string& name) {
  return std::string(ARDM_TEST_DATA_DIR) + "/" + name;
}

std::string db_arg(const TempDir& dir) {
  return "--db '" + dir.file("study.db").string() + "'";
}

// init + ingest all three fixture domains; returns the ingest outputs.
std::vector<nlohmann::json> set_up_store(const TempDir& dir) {
  CHECK(run_cli(dir, "init " + db_arg(dir)).exit_code == 0);
  std::vector<nlohmann::json> out;
  for (const char* name : {"adsl.csv", "adtte.csv", "adae.csv"}) {
    const std::string domain = std::string(name).substr(0, 4) == "adsl"
                                   ? "ADSL"
                                   : (std::string(name).substr(0, 4) == "adtt"
                                          ? "ADTTE"
                                          : "ADAE");
    const auto r = run_cli(dir, "ingest " + db_arg(dir) + " --file '" +
                                    data_file(name) + "' --domain " + domain);
    REQUIRE(r.exit_code == 0);
    out.push_back(nlohmann::json::parse(r.out));
  }
  return out;
}

}  // namespace

TEST_CASE("a full transcript runs clean from init to render") {
  TempDir dir;

  const auto init = run_cli(dir, "init " + db_arg(dir));
  CHECK(init.exit_code == 0);
  const auto init_doc = nlohmann::json::parse(init.out);
  CHECK(init_doc.at("schema_version") == 1);
  CHECK(init_doc.at("standards") == 3);  // count of registered standards

  const auto ingested = set_up_store(dir);
  CHECK(ingested[0].at("dataset_id") == 1);
  CHECK(ingested[0].at("domain") == "ADSL");
  CHECK(ingested[0].at("n_rows") == 36);
  CHECK(ingested[0].at("checksum") ==
        "a466055ada27ac9e27c9aaabe5aa61ee7ed1f820338a040cc2b980d961b19b4a");
  CHECK(ingested[1].at("checksum") ==
        "fa585d7d31c3a8e2342525e0a3c7f5ac230a1b011323f5fec4f106b08813dd60");
  CHECK(ingested[2].at("checksum") ==
        "49d170cbc1abfa932396b4fd1a3af3cdd0e060701ef1538e20c5207238b481de");

  const auto listed = run_cli(dir, "standards list " + db_arg(dir));
  CHECK(listed.exit_code == 0);
  const auto standards = nlohmann::json::parse(listed.out);
  REQUIRE(standards.size() == 3);
  CHECK(standards[0].at("name") == "descriptive");

  const auto run = run_cli(dir, "run " + db_arg(dir) +
                                    " --standard survival --param param=TTDE"
                                    " --dataset 2");
  REQUIRE(run.exit_code == 0);
  const auto run_doc = nlohmann::json::parse(run.out);
  CHECK(run_doc.at("run_id") == 1);
  CHECK(run_doc.at("status") == "completed");
  CHECK(run_doc.at("n_records") == 205);
  // Identity digest frozen for this standard, parameter set, and input
  // checksum; any change here is a reproducibility break.
  CHECK(run_doc.at("identity") ==
        "1318ad3e32722e97c6a09dddede77a5a66e8b7a70443952f58073563a5c5fdf3");

  const auto medians = run_cli(
      dir, "query " + db_arg(dir) +
               " --run 1 --statistic median_survival --format csv");
  CHECK(medians.exit_code == 0);
  CHECK(medians.out.rfind("result_id,run_id,group_keys,variable,"
                          "statistic_name,value,value_text,unit,time,"
                          "standard_name,standard_version",
                          0) == 0);
  CHECK(medians.out.find("Placebo") != std::string::npos);
  CHECK(medians.out.find(",median_survival,77,") != std::string::npos);
  CHECK(medians.out.find(",median_survival,94,") != std::string::npos);
  CHECK(medians.out.find(",median_survival,75,") != std::string::npos);

  const auto filtered = run_cli(
      dir, "query " + db_arg(dir) +
               " --run 1 --group 'TRTP=Xanomeline High Dose'"
               " --statistic n_events --format json");
  CHECK(filtered.exit_code == 0);
  const auto filtered_doc = nlohmann::json::parse(filtered.out);
  REQUIRE(filtered_doc.size() == 1);
  CHECK(filtered_doc[0].at("value") == 10.0);

  const auto km = run_cli(dir, "render km " + db_arg(dir) + " --run 1 --svg '" +
                                   dir.file("km.svg").string() + "'");
  CHECK(km.exit_code == 0);
  const auto plot = nlohmann::json::parse(km.out);
  CHECK(plot.at("strata").size() == 3);
  CHECK(plot.at("strata")[0].at("steps")[0].at("time") == 0.0);
  const auto svg = testutil::read_file(dir.file("km.svg"));
  CHECK(svg.rfind("<svg", 0) == 0);

  const auto excluded = run_cli(dir, "render km " + db_arg(dir) +
                                         " --run 1 --exclude-stratum"
                                         " 'Xanomeline High Dose'");
  CHECK(excluded.exit_code == 0);
  CHECK(nlohmann::json::parse(excluded.out).at("strata").size() == 2);

  const auto table = run_cli(dir, "render table " + db_arg(dir) +
                                      " --run 1 --orientation wide");
  CHECK(table.exit_code == 0);
  CHECK(table.out.rfind("# standard survival v1.0.0, run 1, params ", 0) ==
        0);
  CHECK(table.out.find("TRTP,variable,time,") != std::string::npos);

  const auto to_file = run_cli(dir, "render table " + db_arg(dir) +
                                        " --run 1 --orientation long --out '" +
                                        dir.file("table.csv").string() + "'");
  CHECK(to_file.exit_code == 0);
  CHECK(testutil::read_file(dir.file("table.csv")).find("group_keys") !=
        std::string::npos);
}

TEST_CASE("re-running an identical analysis is reported and harmless") {
  TempDir dir;
  set_up_store(dir);
  const std::string run_args = "run " + db_arg(dir) +
                               " --standard survival --param param=TTDE"
                               " --dataset 2";
  REQUIRE(run_cli(dir, run_args).exit_code == 0);

  const auto again = run_cli(dir, run_args);
  CHECK(again.exit_code == 0);
  CHECK(again.err.find(
            "skipped duplicate: run 1 already stores these results") !=
        std::string::npos);
  const auto doc = nlohmann::json::parse(again.out);
  CHECK(doc.at("status") == "skipped_duplicate");
  CHECK(doc.at("run_id") == 1);
  CHECK(doc.at("n_records") == 205);
}

TEST_CASE("read commands leave the store bytes untouched") {
  TempDir dir;
  set_up_store(dir);
  REQUIRE(run_cli(dir, "run " + db_arg(dir) +
                           " --standard survival --param param=TTDE"
                           " --dataset 2")
              .exit_code == 0);

  const auto before = ardm::sha256_hex(
      testutil::read_file(dir.file("study.db")));
  CHECK(run_cli(dir, "standards list " + db_arg(dir)).exit_code == 0);
  CHECK(run_cli(dir, "query " + db_arg(dir) + " --run 1").exit_code == 0);
  CHECK(run_cli(dir, "render km " + db_arg(dir) + " --run 1").exit_code == 0);
  CHECK(run_cli(dir, "render table " + db_arg(dir) +
                         " --run 1 --orientation long")
            .exit_code == 0);
  CHECK(ardm::sha256_hex(testutil::read_file(dir.file("study.db"))) ==
        before);
}

TEST_CASE("replaying the transcript on a fresh store is query-identical") {
  TempDir first;
  TempDir second;
  for (const TempDir* dir : {&first, &second}) {
    set_up_store(*dir);
    REQUIRE(run_cli(*dir, "run " + db_arg(*dir) +
                              " --standard survival --param param=TTDE"
                              " --dataset 2")
                .exit_code == 0);
    REQUIRE(run_cli(*dir, "run " + db_arg(*dir) +
                              " --standard descriptive"
                              " --param variables=AGE,SEX --dataset 1")
                .exit_code == 0);
  }
  const auto query = [](const TempDir& dir) {
    return run_cli(dir, "query " + db_arg(dir) + " --format csv").out;
  };
  const auto first_out = query(first);
  CHECK(first_out == query(second));
  CHECK(first_out.find("median_survival") != std::string::npos);
}

TEST_CASE("the database path can come from the environment") {
  TempDir dir;
  const std::string env = "ARDM_DB='" + dir.file("study.db").string() + "'";
  CHECK(run_cli(dir, "init", env).exit_code == 0);
  const auto r = run_cli(dir, "standards list", env);
  CHECK(r.exit_code == 0);
  CHECK(nlohmann::json::parse(r.out).size() == 3);

  // Without either source the option is required.
  const auto missing = run_cli(dir, "standards list");
  CHECK(missing.exit_code == 1);
  CHECK(missing.err.find("--db") != std::string::npos);
}

TEST_CASE("user mistakes exit 1 with usage help") {
  TempDir dir;

  const auto unknown = run_cli(dir, "frobnicate " + db_arg(dir));
  CHECK(unknown.exit_code == 1);
  CHECK(unknown.err.find("error:") != std::string::npos);
  CHECK(unknown.err.find("Usage") != std::string::npos);

  const auto bad_flag = run_cli(dir, "init " + db_arg(dir) + " --frobnicate");
  CHECK(bad_flag.exit_code == 1);

  const auto no_store = run_cli(dir, "query " + db_arg(dir));
  CHECK(no_store.exit_code == 1);
  CHECK(no_store.err.find("run init first") != std::string::npos);

  REQUIRE(run_cli(dir, "init " + db_arg(dir)).exit_code == 0);
  const auto bad_domain = run_cli(dir, "ingest " + db_arg(dir) + " --file '" +
                                           data_file("adsl.csv") +
                                           "' --domain ADXX");
  CHECK(bad_domain.exit_code == 1);

  const auto bad_param = run_cli(dir, "run " + db_arg(dir) +
                                          " --standard survival"
                                          " --param param --dataset 1");
  CHECK(bad_param.exit_code == 1);
  CHECK(bad_param.err.find("KEY=VALUE") != std::string::npos);

  const auto missing_file = run_cli(dir, "ingest " + db_arg(dir) +
                                             " --file /nonexistent.csv"
                                             " --domain ADSL");
  CHECK(missing_file.exit_code == 1);
}

TEST_CASE("data problems exit 2 and explain themselves") {
  TempDir dir;
  REQUIRE(run_cli(dir, "init " + db_arg(dir)).exit_code == 0);

  // Validation failure: ADTTE with a negative analysis value.
  testutil::write_file(dir.file("bad.csv"),
                       "USUBJID,PARAMCD,AVAL,CNSR,TRTP\n"
                       "S1,TTDE,-4,0,Arm A\n");
  const auto rejected = run_cli(dir, "ingest " + db_arg(dir) + " --file '" +
                                         dir.file("bad.csv").string() +
                                         "' --domain ADTTE");
  CHECK(rejected.exit_code == 2);
  CHECK(rejected.err.find("validation failed") != std::string::npos);
  CHECK(rejected.err.find("negative analysis value") != std::string::npos);

  // Malformed CSV.
  testutil::write_file(dir.file("ragged.csv"), "A,B\n1\n");
  const auto ragged = run_cli(dir, "ingest " + db_arg(dir) + " --file '" +
                                       dir.file("ragged.csv").string() +
                                       "' --domain ADSL");
  CHECK(ragged.exit_code == 2);
  CHECK(ragged.err.find("ragged row") != std::string::npos);

  // Empty analysis set after filtering.
  const auto ingest = run_cli(dir, "ingest " + db_arg(dir) + " --file '" +
                                       data_file("adtte.csv") +
                                       "' --domain ADTTE");
  REQUIRE(ingest.exit_code == 0);
  const auto empty = run_cli(dir, "run " + db_arg(dir) +
                                      " --standard survival"
                                      " --param param=NOPE --dataset 1");
  CHECK(empty.exit_code == 2);
  CHECK(empty.err.find("empty analysis set") != std::string::npos);

  // A missing run is a user error, not a data error.
  const auto no_run = run_cli(dir, "render km " + db_arg(dir) + " --run 42");
  CHECK(no_run.exit_code == 1);

  // The failed run above left a bookkeeping row; rendering it is refused.
  const auto failed_run = run_cli(dir, "render km " + db_arg(dir) + " --run 1");
  CHECK(failed_run.exit_code == 2);
  CHECK(failed_run.err.find("not completed") != std::string::npos);

  // Rendering a KM plot from a run that stored no survival curve.
  REQUIRE(run_cli(dir, "ingest " + db_arg(dir) + " --file '" +
                           data_file("adsl.csv") + "' --domain ADSL")
              .exit_code == 0);
  const auto descriptive =
      run_cli(dir, "run " + db_arg(dir) +
                       " --standard descriptive --param variables=AGE"
                       " --dataset 2");
  REQUIRE(descriptive.exit_code == 0);
  const auto run_id =
      nlohmann::json::parse(descriptive.out).at("run_id").get<long long>();
  const auto not_km = run_cli(dir, "render km " + db_arg(dir) + " --run " +
                                       std::to_string(run_id));
  CHECK(not_km.exit_code == 2);
  CHECK(not_km.err.find("no stored survival curve") != std::string::npos);
}

TEST_CASE("a concurrent writer maps to exit 1") {
  TempDir dir;
  set_up_store(dir);

  ardm::Store writer = ardm::open_store(dir.file("study.db"), false);
  writer.begin_write();
  const auto blocked = run_cli(dir, "run " + db_arg(dir) +
                                        " --standard survival"
                                        " --param param=TTDE --dataset 2");
  CHECK(blocked.exit_code == 1);
  CHECK(blocked.err.find("another writer holds the store") !=
        std::string::npos);
  writer.rollback();

  const auto after = run_cli(dir, "run " + db_arg(dir) +
                                      " --standard survival"
                                      " --param param=TTDE --dataset 2");
  CHECK(after.exit_code == 0);
}

TEST_CASE("a corrupt store file is an internal error") {
  TempDir dir;
  testutil::write_file(dir.file("study.db"), "this is not a database\n");
  const auto r = run_cli(dir, "standards list " + db_arg(dir));
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("error") != std::string::npos);
}
