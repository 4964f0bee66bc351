#include <catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>

#include "clisa/datagen/datagen.hpp"

using namespace clisa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("clisa_test_datagen_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("scene generation", "[datagen]") {
  SceneConfig cfg;
  SECTION("deterministic per seed, different across seeds") {
    auto a = generate_scene(cfg, 42), b = generate_scene(cfg, 42), c = generate_scene(cfg, 43);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);
    CHECK_FALSE(a.image == c.image);
  }
  SECTION("shapes, ranges and binary masks for every band count") {
    for (std::size_t bands : {1, 3, 4, 11}) {
      cfg.bands = bands;
      auto p = generate_scene(cfg, 7);
      CHECK(p.image.shape() == Shape{64, 64, bands});
      CHECK(p.mask.size() == 64 * 64);
      for (float v : p.image.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
      for (int m : p.mask) CHECK((m == 0 || m == 1));
    }
  }
  SECTION("threshold 1 leaves no cloud") {
    cfg.threshold = 1.0;
    for (std::uint64_t s = 0; s < 20; ++s) CHECK(cloud_fraction(generate_scene(cfg, s).mask) == 0.0);
  }
  SECTION("mean cloud fraction over 1000 seeds at threshold 0.5") {
    cfg.confounder_density = 0;
    cfg.bands = 1;
    double total = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) total += cloud_fraction(generate_scene(cfg, mix_seed(9, s)).mask);
    const double mean = total / 1000;
    CHECK(mean >= 0.35);
    CHECK(mean <= 0.65);
  }
  SECTION("mask follows the noise field") {
    auto l = generate_scene_layers(cfg, 5);
    for (std::size_t p = 0; p < l.pair.mask.size(); ++p) {
      CHECK((l.pair.mask[p] == 1) == (l.cloud_field[p] > cfg.threshold));
      CHECK((l.opacity[p] > 0) == (l.pair.mask[p] == 1));
    }
  }
  SECTION("value noise stays in [0, 1)") {
    auto f = value_noise(32, 5, 2, 3);
    CHECK(*std::min_element(f.begin(), f.end()) >= 0.0);
    CHECK(*std::max_element(f.begin(), f.end()) < 1.0);
  }
  SECTION("invalid configs") {
    SceneConfig bad;
    bad.size = 40;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = {};
    bad.bands = 2;
    CHECK_THROWS_AS(generate_scene(bad, 0), ContractError);
    bad = {};
    bad.threshold = 0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
  }
}

TEST_CASE("snow confounders", "[datagen]") {
  SceneConfig cfg;
  std::size_t confounders = 0;
  for (std::size_t bands : {1, 3, 4, 11}) {
    cfg.bands = bands;
    for (std::uint64_t s = 0; s < 40; ++s) {
      auto l = generate_scene_layers(cfg, mix_seed(11, s));
      std::vector<double> clear;
      for (std::size_t p = 0; p < l.pair.mask.size(); ++p)
        if (!l.pair.mask[p]) clear.push_back(brightness(l.pair, p));
      if (clear.empty()) continue;
      std::sort(clear.begin(), clear.end());
      const double p90 = clear[std::size_t(0.9 * double(clear.size() - 1))];
      for (std::size_t p = 0; p < l.pair.mask.size(); ++p) {
        if (!l.snow[p] || l.pair.mask[p]) continue;
        ++confounders;
        // Labeled clear, yet brighter than most clear ground.
        CHECK(brightness(l.pair, p) >= p90);
        CHECK(l.pair.mask[p] == 0);
      }
      // Stronger: every exposed blob pixel outshines all bare ground.
      double ground = 0, snow = 2;
      for (std::size_t p = 0; p < l.pair.mask.size(); ++p) {
        if (l.pair.mask[p]) continue;
        if (l.snow[p]) snow = std::min(snow, brightness(l.pair, p));
        else ground = std::max(ground, brightness(l.pair, p));
      }
      CHECK(ground < snow);
    }
  }
  CHECK(confounders > 1000);
}

TEST_CASE("patch-pair files", "[datagen][io]") {
  auto dir = scratch("pairs");
  fs::create_directories(dir);
  SceneConfig cfg;
  cfg.bands = 11;
  cfg.size = 32;
  auto p = generate_scene(cfg, 3);
  write_pair(dir / "00003", p);
  auto back = read_pair(dir / "00003");
  CHECK(back.image == p.image);
  CHECK(back.mask == p.mask);

  SECTION("mask PGM is binary 0/255 with maxval 255") {
    auto img = pgm::load(dir / "00003.pgm");
    for (std::size_t i = 0; i < p.mask.size(); ++i) CHECK(img.pixels[i] == (p.mask[i] ? 255 : 0));
    const std::string head = "P5\n32 32\n255\n";
    CHECK(std::equal(head.begin(), head.end(), ctns::read_bytes(dir / "00003.pgm").begin()));
  }
  SECTION("maxval other than 255 is rejected") {
    std::string bad = "P5\n32 32\n1\n" + std::string(32 * 32, '\0');
    ctns::write_bytes(dir / "00003.pgm", {bad.begin(), bad.end()});
    CHECK_THROWS_AS(read_pair(dir / "00003"), ParseError);
  }
  SECTION("grey mask values carry their byte offset") {
    pgm::Image img{32, 32, std::vector<std::uint8_t>(1024, 0)};
    img.pixels[10] = 128;
    pgm::save(dir / "00003.pgm", img);
    try {
      read_pair(dir / "00003");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == std::string("P5\n32 32\n255\n").size() + 10);
    }
  }
  SECTION("mismatched mask size") {
    pgm::save(dir / "00003.pgm", pgm::Image{16, 32, std::vector<std::uint8_t>(512, 0)});
    CHECK_THROWS_AS(read_pair(dir / "00003"), DimensionError);
  }
  SECTION("missing files") { CHECK_THROWS_AS(read_pair(dir / "nope"), IoError); }
}

TEST_CASE("dataset directories", "[datagen][io]") {
  DatasetConfig cfg;
  cfg.count = 40;
  cfg.scene.size = 32;
  cfg.scene.seed = 123;
  auto dir = scratch("ds");
  auto idx = write_dataset(dir, cfg);
  CHECK(idx.train.size() + idx.val.size() + idx.test.size() == 40);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(fs::exists(dir / (pair_stem(i) + ".ctns")));
    CHECK(fs::exists(dir / (pair_stem(i) + ".pgm")));
  }
  CHECK(pair_stem(7) == "00007");

  SECTION("index round trip") {
    auto back = read_index(dir);
    CHECK(back.train == idx.train);
    CHECK(back.val == idx.val);
    CHECK(back.test == idx.test);
    CHECK(back.config.scene.seed == 123);
    auto test = load_split(back, Split::Test);
    REQUIRE(test.size() == idx.test.size());
    if (!test.empty()) CHECK(test[0].mask == generate_scene(cfg.scene, scene_seed(123, idx.test[0])).mask);
  }
  SECTION("split membership depends only on seed and index") {
    auto bigger = cfg;
    bigger.count = 400;
    auto big = split_dataset(bigger);
    for (std::size_t i = 0; i < 40; ++i) {
      const Split s = split_of(123, i, 0.1, 0.1);
      CHECK(std::count(idx.members(s).begin(), idx.members(s).end(), i) == 1);
      CHECK(std::count(big.members(s).begin(), big.members(s).end(), i) == 1);
    }
    CHECK(big.test.size() > 20);
    CHECK(big.test.size() < 60);
  }
  SECTION("regeneration is byte-identical") {
    auto again = scratch("ds2");
    write_dataset(again, cfg);
    for (std::size_t i = 0; i < 40; i += 7)
      CHECK(ctns::read_bytes(dir / (pair_stem(i) + ".ctns")) == ctns::read_bytes(again / (pair_stem(i) + ".ctns")));
  }
  SECTION("config parsing") {
    CHECK(dataset_config_from(to_json(cfg)).count == 40);
    CHECK_THROWS_AS(dataset_config_from(json{{"cuont", 4}}), ParseError);
    CHECK_THROWS_AS(dataset_config_from(json{{"scene", {{"bands", 5}}}}), ContractError);
    CHECK_THROWS_AS(read_index(scratch("none")), IoError);
  }
}
