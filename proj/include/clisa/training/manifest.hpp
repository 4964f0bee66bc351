#pragma once

// Run manifest: what ran, with which config, when, and which files it produced.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include "clisa/numcore/json_config.hpp"

#ifndef CLISA_CODE_HASH
#define CLISA_CODE_HASH "unknown"
#endif

namespace clisa {

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Written at the end of every command, including failed ones.
struct RunManifest {
  std::filesystem::path dir;
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::string started = utc_timestamp();
  std::vector<std::string> outputs;
  json result;  // command summary, null until it succeeds

  RunManifest(std::filesystem::path out, std::string cmd, json cfg, std::uint64_t s)
      : dir(std::move(out)), command(std::move(cmd)), config(std::move(cfg)), seed(s) {}

  /// Records a produced file, relative to the output directory when it lies inside it.
  void add_output(const std::filesystem::path& p) {
    std::string rel = std::filesystem::proximate(p, dir).generic_string();
    if (std::find(outputs.begin(), outputs.end(), rel) == outputs.end()) outputs.push_back(rel);
  }

  json to_json(const std::string& error = "") const {
    json j = {{"command", command}, {"config", config},       {"seed", seed},
              {"started", started}, {"finished", utc_timestamp()}, {"code_hash", CLISA_CODE_HASH},
              {"outputs", outputs}, {"status", error.empty() ? "ok" : "error"}};
    if (!error.empty()) j["error"] = error;
    if (!result.is_null()) j["result"] = result;
    return j;
  }

  void write(const std::string& error = "") const {
    std::filesystem::create_directories(dir);
    write_json_file(dir / "manifest.json", to_json(error));
  }
};

}  // namespace clisa
