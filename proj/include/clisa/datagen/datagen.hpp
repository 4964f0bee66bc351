#pragma once

// Synthetic cloud scenes: value-noise cloud fields over a latent-mixed terrain, with bright
// snow-like blobs that are not cloud. Also the patch-pair files and dataset directories.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clisa/numcore/ctns.hpp"
#include "clisa/numcore/json_config.hpp"
#include "clisa/numcore/parallel.hpp"
#include "clisa/numcore/pgm.hpp"
#include "clisa/numcore/rng.hpp"
#include "clisa/numcore/tensor.hpp"

namespace clisa {

using Labels = std::vector<int>;

struct SceneConfig {
  std::size_t size = 64;
  std::size_t bands = 4;
  std::size_t octaves = 4;
  double threshold = 0.5;
  double confounder_density = 0.04;  // target fraction of pixels covered by snow blobs
  std::uint64_t seed = 0;

  void validate(std::size_t depth = 4) const {
    if (size == 0 || size % (std::size_t(1) << depth) != 0)
      throw ContractError("scene size " + std::to_string(size) + " is not divisible by 2^" + std::to_string(depth));
    if (bands != 1 && bands != 3 && bands != 4 && bands != 11)
      throw ContractError("scene bands must be 1, 3, 4 or 11, got " + std::to_string(bands));
    if (!(threshold > 0 && threshold <= 1)) throw ContractError("cloud threshold must lie in (0, 1]");
    if (octaves == 0 || octaves > 8) throw ContractError("octaves must lie in [1, 8]");
    if (!(confounder_density >= 0 && confounder_density < 0.5))
      throw ContractError("confounder density must lie in [0, 0.5)");
  }
};

struct PatchPair {
  Tensor<float> image;  // H x W x C in [0, 1]
  Labels mask;          // H * W labels in {0, 1}

  std::size_t height() const { return image.dim(0); }
  std::size_t width() const { return image.dim(1); }
  std::size_t bands() const { return image.dim(2); }
};

/// A scene with its construction layers, for tests and diagnostics.
struct SceneLayers {
  PatchPair pair;
  std::vector<double> cloud_field;  // noise value per pixel, cloud where above threshold
  std::vector<double> opacity;
  std::vector<char> snow;           // confounder footprint
};

namespace datagen_detail {

// Rows mix the four latents (soil, vegetation, moisture, fine texture) into eleven bands
// loosely shaped like coastal, B, G, R, NIR, SWIR1, SWIR2, pan, cirrus, TIR1, TIR2.
inline constexpr std::array<std::array<double, 4>, 11> kMix{{{0.50, 0.10, 0.30, 0.10},
                                                             {0.50, 0.15, 0.25, 0.10},
                                                             {0.40, 0.35, 0.15, 0.10},
                                                             {0.60, 0.10, 0.20, 0.10},
                                                             {0.20, 0.60, 0.10, 0.10},
                                                             {0.50, 0.20, 0.20, 0.10},
                                                             {0.60, 0.10, 0.20, 0.10},
                                                             {0.45, 0.25, 0.20, 0.10},
                                                             {0.10, 0.10, 0.10, 0.70},
                                                             {0.30, 0.30, 0.30, 0.10},
                                                             {0.30, 0.25, 0.35, 0.10}}};
inline constexpr std::array<double, 11> kCloud{0.86, 0.88, 0.88, 0.86, 0.84, 0.72, 0.64, 0.87, 0.70, 0.55, 0.55};
inline constexpr std::array<double, 11> kSnow{0.95, 0.96, 0.95, 0.93, 0.85, 0.25, 0.20, 0.94, 0.10, 0.45, 0.45};

inline std::vector<std::size_t> band_rows(std::size_t bands) {
  switch (bands) {
    case 1: return {7};
    case 3: return {3, 2, 1};
    case 4: return {3, 2, 1, 4};
    default: return {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  }
}

inline double smooth(double t) { return t * t * (3 - 2 * t); }

}  // namespace datagen_detail

/// Multi-octave value noise in [0, 1): random lattice values, smoothstep interpolation, octave
/// o has (cells << o) cells across the patch and weight 2^-o.
inline std::vector<double> value_noise(std::size_t size, std::size_t octaves, std::size_t cells, std::uint64_t seed) {
  std::vector<double> field(size * size, 0.0);
  double total = 0;
  for (std::size_t o = 0; o < octaves; ++o) {
    const std::size_t n = cells << o;
    Rng rng(mix_seed(seed, o));
    std::vector<double> lattice((n + 1) * (n + 1));
    for (auto& v : lattice) v = rng.uniform();
    const double amp = std::ldexp(1.0, -int(o));
    total += amp;
    for (std::size_t y = 0; y < size; ++y) {
      const double v = (double(y) + 0.5) / double(size) * double(n);
      const std::size_t iy = std::min<std::size_t>(std::size_t(v), n - 1);
      const double fy = datagen_detail::smooth(v - double(iy));
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (double(x) + 0.5) / double(size) * double(n);
        const std::size_t ix = std::min<std::size_t>(std::size_t(u), n - 1);
        const double fx = datagen_detail::smooth(u - double(ix));
        const double* r0 = &lattice[iy * (n + 1) + ix];
        const double* r1 = r0 + (n + 1);
        const double top = r0[0] + (r0[1] - r0[0]) * fx, bottom = r1[0] + (r1[1] - r1[0]) * fx;
        field[y * size + x] += amp * (top + (bottom - top) * fy);
      }
    }
  }
  for (auto& v : field) v /= total;
  return field;
}

inline SceneLayers generate_scene_layers(const SceneConfig& cfg, std::uint64_t seed) {
  using namespace datagen_detail;
  cfg.validate(0);
  const std::size_t s = cfg.size, px = s * s;
  SceneLayers out;
  out.cloud_field = value_noise(s, cfg.octaves, 2, mix_seed(seed, 1));
  std::array<std::vector<double>, 4> latent;
  for (std::size_t k = 0; k < 4; ++k) latent[k] = value_noise(s, k == 3 ? 2 : 3, k == 3 ? 16 : 3, mix_seed(seed, 10 + k));

  out.snow.assign(px, 0);
  if (cfg.confounder_density > 0) {
    Rng rng(mix_seed(seed, 2));
    const double rmax = std::max(3.0, double(s) / 10);
    std::size_t covered = 0;
    for (int blob = 0; blob < 200 && double(covered) < cfg.confounder_density * double(px); ++blob) {
      const double cy = rng.uniform(0, double(s)), cx = rng.uniform(0, double(s)), r = rng.uniform(2.0, rmax);
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
          const double dy = double(y) + 0.5 - cy, dx = double(x) + 0.5 - cx;
          char& cell = out.snow[y * s + x];
          if (!cell && dy * dy + dx * dx <= r * r) {
            cell = 1;
            ++covered;
          }
        }
    }
  }

  out.opacity.assign(px, 0.0);
  out.pair.mask.assign(px, 0);
  for (std::size_t p = 0; p < px; ++p)
    if (out.cloud_field[p] > cfg.threshold) {
      out.pair.mask[p] = 1;
      out.opacity[p] = 0.35 + 0.65 * std::clamp((out.cloud_field[p] - cfg.threshold) / 0.15, 0.0, 1.0);
    }

  const auto rows = band_rows(cfg.bands);
  out.pair.image = Tensor<float>({s, s, cfg.bands});
  Rng grain(mix_seed(seed, 3));
  for (std::size_t p = 0; p < px; ++p)
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const auto& w = kMix[rows[b]];
      double mix = 0;
      for (std::size_t k = 0; k < 4; ++k) mix += w[k] * latent[k][p];
      double surface = out.snow[p] ? kSnow[rows[b]] : 0.08 + 0.42 * mix + 0.02 * (grain.uniform() - 0.5);
      const double a = out.opacity[p];
      const double cloud = kCloud[rows[b]] * (0.92 + 0.08 * latent[3][p]);
      out.pair.image[p * cfg.bands + b] = float(std::clamp((1 - a) * surface + a * cloud, 0.0, 1.0));
    }
  return out;
}

inline PatchPair generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  return generate_scene_layers(cfg, seed).pair;
}

/// Mean over bands at pixel p.
inline double brightness(const PatchPair& pair, std::size_t p) {
  const std::size_t c = pair.bands();
  double sum = 0;
  for (std::size_t b = 0; b < c; ++b) sum += pair.image[p * c + b];
  return sum / double(c);
}

inline double cloud_fraction(const Labels& mask) {
  return mask.empty() ? 0.0 : double(std::count(mask.begin(), mask.end(), 1)) / double(mask.size());
}

/// Stacks the chosen pairs into an N x H x W x C batch and the matching flat label vector.
template <Scalar T>
std::pair<Tensor<T>, Labels> stack_batch(const std::vector<PatchPair>& pairs, std::span<const std::size_t> which) {
  if (which.empty()) throw ContractError("stack_batch: empty selection");
  const Shape one = pairs.at(which[0]).image.shape();
  Tensor<T> x({which.size(), one[0], one[1], one[2]});
  Labels y;
  y.reserve(which.size() * one[0] * one[1]);
  std::size_t off = 0;
  for (std::size_t k : which) {
    const PatchPair& p = pairs.at(k);
    if (p.image.shape() != one)
      throw DimensionError("stack_batch: pair " + std::to_string(k) + " has shape " + shape_str(p.image.shape()) +
                           ", expected " + shape_str(one));
    for (float v : p.image.data()) x[off++] = T(v);
    y.insert(y.end(), p.mask.begin(), p.mask.end());
  }
  return {std::move(x), std::move(y)};
}

// ---- patch-pair files ----

inline std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  return stem.parent_path() / (stem.filename().string() + ext);
}

/// Writes stem.ctns (f32 H x W x C) and stem.pgm (mask, foreground 255).
inline void write_pair(const std::filesystem::path& stem, const PatchPair& pair) {
  if (pair.mask.size() != pair.height() * pair.width())
    throw DimensionError("write_pair: mask has " + std::to_string(pair.mask.size()) + " pixels for image " +
                         shape_str(pair.image.shape()));
  ctns::save(with_suffix(stem, ".ctns"), pair.image);
  pgm::Image m{pair.width(), pair.height(), std::vector<std::uint8_t>(pair.mask.size())};
  for (std::size_t i = 0; i < m.pixels.size(); ++i) m.pixels[i] = pair.mask[i] ? 255 : 0;
  pgm::save(with_suffix(stem, ".pgm"), m);
}

inline PatchPair read_pair(const std::filesystem::path& stem) {
  PatchPair pair;
  pair.image = ctns::load<float>(with_suffix(stem, ".ctns"));
  const auto mask_path = with_suffix(stem, ".pgm");
  const auto bytes = ctns::read_bytes(mask_path);
  pgm::Image m;
  try {
    m = pgm::decode(bytes);
  } catch (const ParseError& e) {
    throw ParseError(mask_path.string() + ": " + e.message(), e.offset());
  }
  if (pair.image.rank() != 3 || m.height != pair.image.dim(0) || m.width != pair.image.dim(1))
    throw DimensionError(mask_path.string() + ": mask " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                         " does not match image " + shape_str(pair.image.shape()));
  const std::size_t header = bytes.size() - m.pixels.size();
  pair.mask.resize(m.pixels.size());
  for (std::size_t i = 0; i < m.pixels.size(); ++i) {
    if (m.pixels[i] != 0 && m.pixels[i] != 255)
      throw ParseError(mask_path.string() + ": mask value " + std::to_string(m.pixels[i]) + " is neither 0 nor 255",
                       header + i);
    pair.mask[i] = m.pixels[i] ? 1 : 0;
  }
  return pair;
}

// ---- dataset directories ----

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

struct DatasetConfig {
  SceneConfig scene;
  std::size_t count = 256;
  double val_fraction = 0.1;
  double test_fraction = 0.1;

  void validate() const {
    scene.validate();
    if (count == 0) throw ContractError("dataset count must be positive");
    if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1)
      throw ContractError("split fractions must be nonnegative and leave room for training");
  }
};

/// Membership depends only on (seed, index), never on the dataset size.
inline Split split_of(std::uint64_t seed, std::size_t index, double val_fraction, double test_fraction) {
  const double u = Rng(mix_seed(mix_seed(seed, 0x5b117), index)).uniform();
  if (u < test_fraction) return Split::Test;
  if (u < test_fraction + val_fraction) return Split::Val;
  return Split::Train;
}

inline std::uint64_t scene_seed(std::uint64_t seed, std::size_t index) { return mix_seed(seed, index); }

inline std::string pair_stem(std::size_t index) {
  char name[16];
  std::snprintf(name, sizeof name, "%05zu", index);
  return name;
}

inline json to_json(const SceneConfig& c) {
  return {{"size", c.size},         {"bands", c.bands}, {"octaves", c.octaves}, {"threshold", c.threshold},
          {"confounder_density", c.confounder_density}, {"seed", c.seed}};
}

inline json to_json(const DatasetConfig& c) {
  return {{"scene", to_json(c.scene)},
          {"count", c.count},
          {"val_fraction", c.val_fraction},
          {"test_fraction", c.test_fraction}};
}

inline SceneConfig scene_config_from(const json& j, const std::string& where = "scene") {
  detail::check_keys(j, {"size", "bands", "octaves", "threshold", "confounder_density", "seed"}, where);
  SceneConfig c;
  detail::read_key(j, "size", c.size, where);
  detail::read_key(j, "bands", c.bands, where);
  detail::read_key(j, "octaves", c.octaves, where);
  detail::read_key(j, "threshold", c.threshold, where);
  detail::read_key(j, "confounder_density", c.confounder_density, where);
  detail::read_key(j, "seed", c.seed, where);
  c.validate(0);
  return c;
}

inline DatasetConfig dataset_config_from(const json& j, const std::string& where = "dataset") {
  detail::check_keys(j, {"scene", "count", "val_fraction", "test_fraction"}, where);
  DatasetConfig c;
  if (j.contains("scene")) c.scene = scene_config_from(j.at("scene"), where + ".scene");
  detail::read_key(j, "count", c.count, where);
  detail::read_key(j, "val_fraction", c.val_fraction, where);
  detail::read_key(j, "test_fraction", c.test_fraction, where);
  c.validate();
  return c;
}

struct DatasetIndex {
  std::filesystem::path dir;
  DatasetConfig config;
  std::vector<std::size_t> train, val, test;

  const std::vector<std::size_t>& members(Split s) const {
    return s == Split::Train ? train : s == Split::Val ? val : test;
  }
};

inline DatasetIndex split_dataset(const DatasetConfig& cfg) {
  DatasetIndex idx;
  idx.config = cfg;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    switch (split_of(cfg.scene.seed, i, cfg.val_fraction, cfg.test_fraction)) {
      case Split::Train: idx.train.push_back(i); break;
      case Split::Val: idx.val.push_back(i); break;
      case Split::Test: idx.test.push_back(i); break;
    }
  }
  return idx;
}

/// Generates every scene into dir as NNNNN.ctns / NNNNN.pgm and writes index.json.
inline DatasetIndex write_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  parallel_for(cfg.count, [&](std::size_t i) {
    write_pair(dir / pair_stem(i), generate_scene(cfg.scene, scene_seed(cfg.scene.seed, i)));
  });
  DatasetIndex idx = split_dataset(cfg);
  idx.dir = dir;
  write_json_file(dir / "index.json", {{"format", "clisa-dataset"},
                                        {"version", 1},
                                        {"config", to_json(cfg)},
                                        {"splits", {{"train", idx.train}, {"val", idx.val}, {"test", idx.test}}}});
  return idx;
}

inline DatasetIndex read_index(const std::filesystem::path& dir) {
  const auto path = dir / "index.json";
  if (!std::filesystem::exists(path)) throw IoError("no dataset index at " + path.string());
  const json j = read_json_file(path);
  DatasetIndex idx;
  idx.dir = dir;
  try {
    idx.config = dataset_config_from(j.at("config"), "index.config");
    const json& s = j.at("splits");
    idx.train = s.at("train").get<std::vector<std::size_t>>();
    idx.val = s.at("val").get<std::vector<std::size_t>>();
    idx.test = s.at("test").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  return idx;
}

inline std::vector<PatchPair> load_split(const DatasetIndex& idx, Split s) {
  const auto& ids = idx.members(s);
  std::vector<PatchPair> out(ids.size());
  parallel_for(ids.size(), [&](std::size_t k) { out[k] = read_pair(idx.dir / pair_stem(ids[k])); });
  return out;
}

}  // namespace clisa
