#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <string>

#include "clisa/metrics/metrics.hpp"
#include "../support/metric_oracles.hpp"

using namespace clisa;
using namespace clisa::oracle;

TEST_CASE("confusion metrics", "[metrics]") {
  Rng rng(1);
  SECTION("identical masks") {
    auto m = random_mask(rng, 64, 0.4);
    auto c = confusion_metrics(m, m);
    CHECK(c.oa == 1.0);
    CHECK(c.kappa == 1.0);
    CHECK(c.miou_percent == 100.0);
    CHECK(c.recall == 1.0);
    CHECK(c.precision == 1.0);
  }
  SECTION("all background against a half-cloud truth") {
    std::vector<int> pred(64, 0), truth(64, 0);
    for (std::size_t i = 0; i < 32; ++i) truth[i] = 1;
    auto c = confusion_metrics(pred, truth);
    // p_o = 1/2, p_e = 1/2 * 1 + 1/2 * 0 = 1/2
    CHECK(c.oa == 0.5);
    CHECK(c.kappa == 0.0);
    CHECK(c.recall == 0.0);
    CHECK(c.miou_percent == 25.0);
  }
  SECTION("per-pixel counting on random 8x8 pairs") {
    for (int rep = 0; rep < 50; ++rep) {
      auto p = random_mask(rng, 64, 0.5), t = random_mask(rng, 64, 0.5);
      const CountingResult o = counting_oracle(p, t);
      auto c = confusion_metrics(p, t);
      CHECK(std::abs(c.oa - o.oa) < 1e-15);
      CHECK(std::abs(c.recall - o.recall) < 1e-15);
      CHECK(std::abs(c.precision - o.precision) < 1e-15);
      CHECK(std::abs(c.kappa - o.kappa) < 1e-12);
      CHECK(std::abs(c.miou_percent - o.miou_percent) < 1e-12);
    }
  }
  SECTION("degenerate agreement") {
    std::vector<int> zeros(16, 0);
    auto c = confusion_metrics(zeros, zeros);
    CHECK(c.kappa == 0.0);  // p_e = 1
    CHECK(c.miou_percent == 100.0);
    CHECK(c.recall == 1.0);
  }
  SECTION("label permutation leaves oa, kappa and mIoU alone") {
    const int perm[3] = {2, 0, 1};
    for (int rep = 0; rep < 20; ++rep) {
      auto p = random_mask(rng, 100, 0, 3), t = random_mask(rng, 100, 0, 3);
      auto pp = p, tt = t;
      for (auto& v : pp) v = perm[v];
      for (auto& v : tt) v = perm[v];
      auto a = confusion_metrics(p, t, 3), b = confusion_metrics(pp, tt, 3);
      CHECK(a.oa == b.oa);
      CHECK(std::abs(a.kappa - b.kappa) < 1e-14);
      CHECK(std::abs(a.miou_percent - b.miou_percent) < 1e-12);
    }
  }
  SECTION("errors") {
    CHECK_THROWS_AS(confusion_metrics(std::vector<int>{0, 1}, std::vector<int>{0}), ContractError);
    CHECK_THROWS_AS(confusion_metrics(std::vector<int>{2}, std::vector<int>{0}), ContractError);
  }
}

TEST_CASE("boundary IoU", "[metrics]") {
  Rng rng(2);
  auto square = grid({"........", "........", "..####..", "..####..", "..####..", "..####..", "........", "........"});
  auto shifted = grid({"........", "........", "...####.", "...####.", "...####.", "...####.", "........", "........"});
  CHECK(boundary_iou(square, square, 8, 8) == 100.0);
  auto far = grid({"##......", "##......", "........", "........", "........", "........", "......##", "......##"});
  auto corner = grid({"........", "........", "........", "........", "........", "........", "......##", "......##"});
  auto top = grid({"##......", "##......", "........", "........", "........", "........", "........", "........"});
  CHECK(boundary_iou(top, corner, 8, 8) == 0.0);
  CHECK(boundary_iou(far, far, 8, 8) == 100.0);
  std::vector<int> empty(64, 0);
  CHECK(boundary_iou(empty, empty, 8, 8) == 100.0);

  SECTION("shifted square, hand-enumerated bands") {
    // d = 1: each band is the 12-pixel ring; the rings share 6 pixels.
    auto ring = grid({"........", "........", "..####..", "..#..#..", "..#..#..", "..####..", "........", "........"});
    auto ring_shifted = grid({"........", "........", "...####.", "...#..#.", "...#..#.", "...####.", "........", "........"});
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      inter += ring[i] && ring_shifted[i];
      uni += ring[i] || ring_shifted[i];
    }
    REQUIRE(inter == 6);
    REQUIRE(uni == 18);
    CHECK(std::abs(boundary_iou(square, shifted, 8, 8, 1) - 100.0 / 3) < 1e-12);
    // d = 2 erodes a 4x4 square away completely: the bands are the squares, 12 / 20.
    CHECK(std::abs(boundary_iou(square, shifted, 8, 8, 2) - 60.0) < 1e-12);
  }
  SECTION("band extraction against the neighbourhood oracle") {
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t h = 2 + rng.below(14), w = 2 + rng.below(14), d = rng.below(4);
      auto m = random_mask(rng, h * w, rng.uniform(0.2, 0.9));
      std::vector<char> fg(m.begin(), m.end());
      CHECK(mask_boundary(fg, h, w, d) == boundary_oracle(m, long(h), long(w), long(d)));
    }
  }
  SECTION("bounded, and plain IoU once d reaches the image radius") {
    for (int rep = 0; rep < 50; ++rep) {
      auto p = random_mask(rng, 144, 0.5), t = random_mask(rng, 144, 0.5);
      const double bi = boundary_iou(p, t, 12, 12, 2);
      CHECK(bi >= 0);
      CHECK(bi <= 100);
      double inter = 0, uni = 0;
      for (std::size_t i = 0; i < 144; ++i) {
        inter += p[i] && t[i];
        uni += p[i] || t[i];
      }
      CHECK(std::abs(boundary_iou(p, t, 12, 12, 6) - 100 * inter / uni) < 1e-12);
    }
  }
}

TEST_CASE("Hausdorff distance", "[metrics]") {
  Rng rng(3);
  auto m = random_mask(rng, 100, 0.3);
  CHECK(hausdorff_distance(m, m, 10, 10, 30).meters == 0.0);

  SECTION("two single pixels") {
    std::vector<int> a(64, 0), b(64, 0);
    a[0] = 1;
    b[3 * 8 + 4] = 1;
    auto r = hausdorff_distance(a, b, 8, 8, 30);
    CHECK(r.meters == 150.0);
    CHECK_FALSE(r.empty_mask);
  }
  SECTION("quadratic oracle on 200 random pairs") {
    for (int rep = 0; rep < 200; ++rep) {
      const std::size_t h = 1 + rng.below(16), w = 1 + rng.below(16);
      auto a = random_mask(rng, h * w, rng.uniform(0.02, 0.6)), b = random_mask(rng, h * w, rng.uniform(0.02, 0.6));
      a[rng.below(h * w)] = 1;
      b[rng.below(h * w)] = 1;
      INFO(h << "x" << w);
      const double gsd = 30;
      const double ab = hausdorff_distance(a, b, h, w, gsd).meters, ba = hausdorff_distance(b, a, h, w, gsd).meters;
      CHECK(std::abs(ab - gsd * hausdorff_oracle(a, b, w)) < 1e-9);
      CHECK(ab == ba);
    }
  }
  SECTION("empty mask gives the flagged diagonal") {
    std::vector<int> none(12, 0), some(12, 0);
    some[5] = 1;
    auto r = hausdorff_distance(none, some, 3, 4, 30);
    CHECK(r.empty_mask);
    CHECK(r.meters == 150.0);
    CHECK(hausdorff_distance(none, none, 3, 4, 30).empty_mask);
  }
  SECTION("distance transform on a single seed") {
    std::vector<char> fg(35, 0);
    fg[2 * 7 + 3] = 1;
    auto d = squared_distance_transform(fg, 5, 7);
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 7; ++x)
        CHECK(d[y * 7 + x] == double((long(y) - 2) * (long(y) - 2) + (long(x) - 3) * (long(x) - 3)));
  }
}

TEST_CASE("coverage statistics", "[metrics]") {
  using P = std::pair<double, double>;
  std::vector<P> perfect{{0.1, 0.1}, {0.5, 0.5}, {0.9, 0.9}};
  auto s = coverage_stats(perfect);
  CHECK(s.r2 == 1.0);
  CHECK(s.mae == 0.0);
  std::vector<P> offset{{0.1, 0.2}, {0.4, 0.5}, {0.7, 0.8}};
  CHECK(std::abs(coverage_stats(offset).mae - 0.1) < 1e-15);

  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<P> pairs(10);
    double st = 0, stt = 0, res = 0, abs_err = 0;
    for (auto& [t, p] : pairs) {
      t = rng.uniform();
      p = std::clamp(t + rng.uniform(-0.2, 0.2), 0.0, 1.0);
      st += t;
      stt += t * t;
      res += (p - t) * (p - t);
      abs_err += std::abs(p - t);
    }
    const double n = 10, var = stt - st * st / n;
    auto r = coverage_stats(pairs);
    CHECK(std::abs(r.r2 - (1 - res / var)) < 1e-10);
    CHECK(std::abs(r.mae - abs_err / n) < 1e-14);
  }
  std::vector<P> flat{{0.3, 0.1}, {0.3, 0.5}};
  auto f = coverage_stats(flat);
  CHECK_FALSE(f.r2_defined);
  CHECK(std::isnan(f.r2));
  CHECK_THROWS_AS(coverage_stats(std::vector<P>{{0.1, 0.1}}), ContractError);
}

TEST_CASE("report and overlays", "[metrics]") {
  auto truth = grid({"##..", "##..", "....", "...."});
  auto pred = grid({"#...", "##..", "..#.", "...."});
  auto r = evaluate_masks(pred, truth, 4, 4, 30, 1);
  CHECK(r.oa == 14.0 / 16);
  CHECK(r.recall == 0.75);
  CHECK(r.precision == 0.75);
  CHECK(r.hausdorff_m == 30 * std::sqrt(2.0));
  CHECK(r.kappa >= -1);
  CHECK(r.kappa <= 1);
  auto [om, com] = error_overlays(pred, truth, 4, 4);
  CHECK(om.pixels[1] == 255);
  CHECK(com.pixels[2 * 4 + 2] == 255);
  CHECK(std::count(om.pixels.begin(), om.pixels.end(), 255) == 1);
  CHECK(std::count(com.pixels.begin(), com.pixels.end(), 255) == 1);
}

TEST_CASE("PGM", "[metrics][io]") {
  pgm::Image img{5, 3, {}};
  for (std::size_t i = 0; i < 15; ++i) img.pixels.push_back(std::uint8_t(i * 17));
  auto bytes = pgm::encode(img);
  auto back = pgm::decode(bytes);
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  CHECK(back.pixels == img.pixels);

  auto path = std::filesystem::temp_directory_path() / "clisa_test_metrics.pgm";
  pgm::save(path, img);
  CHECK(pgm::load(path).pixels == img.pixels);

  const std::string commented = "P5\n# made by hand\n2 1\n255\n\x01\x02";
  CHECK(pgm::decode({commented.begin(), commented.end()}).pixels == std::vector<std::uint8_t>{1, 2});
  const std::string deep = "P5\n2 1\n65535\n\x01\x02\x03\x04";
  CHECK_THROWS_AS(pgm::decode({deep.begin(), deep.end()}), ParseError);
  const std::string low = "P5\n2 1\n15\n\x01\x02";
  try {
    pgm::decode({low.begin(), low.end()});
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 7);
  }
  const std::string ascii = "P2\n2 1\n255\n1 2";
  CHECK_THROWS_AS(pgm::decode({ascii.begin(), ascii.end()}), ParseError);
  bytes.pop_back();
  CHECK_THROWS_AS(pgm::decode(bytes), ParseError);
}
