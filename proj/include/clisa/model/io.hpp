#pragma once

// Model directories: manifest.json (kind, dtype, config, tensor name -> file) plus one CTNS
// file per tensor. Loading builds a fresh model and only returns it once every tensor read.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "clisa/model/discriminator.hpp"
#include "clisa/model/generator.hpp"
#include "clisa/numcore/ctns.hpp"
#include "clisa/numcore/json_config.hpp"

namespace clisa {

inline json to_json(const GeneratorConfig& c) {
  return {{"input_channels", c.input_channels}, {"num_classes", c.num_classes},
          {"base_channels", c.base_channels},   {"depth", c.depth},
          {"attention", to_string(c.attention)}, {"mst_heads", c.mst_heads}};
}

inline json to_json(const DiscriminatorConfig& c) {
  return {{"input_channels", c.input_channels}, {"num_classes", c.num_classes},
          {"base_channels", c.base_channels},   {"blocks", c.blocks},
          {"slope", c.slope}};
}


inline GeneratorConfig generator_config_from(const json& j, const std::string& where = "generator") {
  detail::check_keys(j, {"input_channels", "num_classes", "base_channels", "depth", "attention", "mst_heads"}, where);
  GeneratorConfig c;
  detail::read_key(j, "input_channels", c.input_channels, where);
  detail::read_key(j, "num_classes", c.num_classes, where);
  detail::read_key(j, "base_channels", c.base_channels, where);
  detail::read_key(j, "depth", c.depth, where);
  detail::read_key(j, "mst_heads", c.mst_heads, where);
  std::string a = to_string(c.attention);
  detail::read_key(j, "attention", a, where);
  c.attention = skip_attention_from(a);
  c.validate();
  return c;
}

inline DiscriminatorConfig discriminator_config_from(const json& j, const std::string& where = "discriminator") {
  detail::check_keys(j, {"input_channels", "num_classes", "base_channels", "blocks", "slope"}, where);
  DiscriminatorConfig c;
  detail::read_key(j, "input_channels", c.input_channels, where);
  detail::read_key(j, "num_classes", c.num_classes, where);
  detail::read_key(j, "base_channels", c.base_channels, where);
  detail::read_key(j, "blocks", c.blocks, where);
  detail::read_key(j, "slope", c.slope, where);
  c.validate();
  return c;
}

namespace detail {

template <Scalar T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename Model>
void save_tensors(const std::filesystem::path& dir, const std::string& kind, json config, Model& m) {
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  std::size_t i = 0;
  auto write = [&](const std::string& name, auto& t) {
    char file[32];
    std::snprintf(file, sizeof file, "t%04zu.ctns", i++);
    ctns::save(dir / file, t);
    tensors.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}});
  };
  std::string dtype;
  m.visit([&](const std::string& name, auto& t) {
    dtype = dtype_name<typename std::remove_cvref_t<decltype(t)>::value_type>();
    write(name, t);
  });
  m.visit_buffers([&](const std::string& name, auto& t) { write(name, t); });
  json manifest = {{"kind", kind}, {"dtype", dtype}, {"config", std::move(config)}, {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
}

inline json read_manifest(const std::filesystem::path& dir, const std::string& kind) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw IoError("no model manifest at " + path.string());
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  if (j.value("kind", "") != kind)
    throw IoError(path.string() + " holds a '" + j.value("kind", "") + "', expected '" + kind + "'");
  return j;
}

template <typename Model>
void load_tensors(const std::filesystem::path& dir, const json& manifest, Model& m) {
  std::map<std::string, std::string> files;
  for (const auto& t : manifest.at("tensors")) files[t.at("name").get<std::string>()] = t.at("file");
  auto read = [&](const std::string& name, auto& t) {
    using V = typename std::remove_cvref_t<decltype(t)>::value_type;
    auto it = files.find(name);
    if (it == files.end()) throw IoError("model at " + dir.string() + " lacks tensor '" + name + "'");
    Tensor<V> loaded;
    try {
      loaded = ctns::load<V>(dir / it->second);
    } catch (const Error& e) {
      throw IoError("tensor '" + name + "' (" + it->second + "): " + e.what());
    }
    if (loaded.shape() != t.shape())
      throw IoError("tensor '" + name + "' has shape " + shape_str(loaded.shape()) + ", expected " +
                    shape_str(t.shape()));
    t = std::move(loaded);
  };
  m.visit(read);
  m.visit_buffers(read);
}

}  // namespace detail

template <Scalar T>
void save_generator(const std::filesystem::path& dir, Generator<T>& g) {
  detail::save_tensors(dir, "generator", to_json(g.config), g);
}

template <Scalar T>
void save_discriminator(const std::filesystem::path& dir, Discriminator<T>& d) {
  detail::save_tensors(dir, "discriminator", to_json(d.config), d);
}

/// Loads into precision T; f32 files widen exactly when T is double.
template <Scalar T>
Generator<T> load_generator(const std::filesystem::path& dir) {
  const json manifest = detail::read_manifest(dir, "generator");
  Rng dummy(0);
  Generator<T> g = Generator<T>::make(generator_config_from(manifest.at("config")), dummy);
  detail::load_tensors(dir, manifest, g);
  return g;
}

template <Scalar T>
Discriminator<T> load_discriminator(const std::filesystem::path& dir) {
  const json manifest = detail::read_manifest(dir, "discriminator");
  Rng dummy(0);
  Discriminator<T> d = Discriminator<T>::make(discriminator_config_from(manifest.at("config")), dummy);
  detail::load_tensors(dir, manifest, d);
  return d;
}

}  // namespace clisa
