#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace cyclestain {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// One JSON document per CLI run.
struct RunRecord {
  std::string subcommand;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json artifacts = nlohmann::json::object();
  std::string build_id;
  int exit_code = 0;
  std::string error;
};

void to_json(nlohmann::json& j, const RunRecord& r);

std::string build_id();
std::string iso_utc_now();

/// Parses argv and runs one subcommand; returns the process exit status.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

}  // namespace cyclestain
