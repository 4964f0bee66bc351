#pragma once

// Strict JSON config reading: unknown keys are errors, missing keys keep their defaults.

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <string>

#include "clisa/numcore/error.hpp"

namespace clisa {

using json = nlohmann::json;

namespace detail {

// Reads only the listed keys; anything else is a configuration error.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + " must be a JSON object", 0);
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ParseError("unknown key '" + k + "' in " + where, 0);
}

template <typename V>
void read_key(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ParseError(where + "." + key + ": " + e.what(), 0);
  }
}

}  // namespace detail

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace clisa
