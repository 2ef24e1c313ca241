#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testutil {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::string fixture(const std::string& name) {
  return read_file(std::filesystem::path(ARDM_TEST_DATA_DIR) / name);
}

// Fresh directory under the system temp root, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() /
           ("ardm_test_" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path file(const std::string& name) const {
    return path / name;
  }
};

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the built CLI through the shell so stdout/stderr can be captured
// separately. args must already be shell-quoted where needed.
inline CliResult run_cli(const TempDir& dir, const std::string& args,
                         const std::string& extra_env = {}) {
  const std::filesystem::path out_path = dir.file("cli_stdout.txt");
  const std::filesystem::path err_path = dir.file("cli_stderr.txt");
  std::string command;
  if (!extra_env.empty()) command += extra_env + " ";
  command += std::string(ARDM_CLI_PATH) + " " + args + " > '" +
             out_path.string() + "' 2> '" + err_path.string() + "'";
  const int status = std::system(command.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = read_file(out_path);
  result.err = read_file(err_path);
  return result;
}

}  // namespace testutil
