#pragma once

// Mask-level evaluation. Masks are flat row-major label arrays; the positive (cloud) class is 1
// unless stated otherwise.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "clisa/numcore/error.hpp"
#include "clisa/numcore/pgm.hpp"

namespace clisa {

struct ConfusionMetrics {
  double oa = 0, recall = 0, precision = 0, miou_percent = 0, kappa = 0;
};

struct HausdorffResult {
  double meters = 0;
  bool empty_mask = false;  // true when a mask had no foreground and the sentinel was returned
};

struct MetricsReport {
  double oa = 0, recall = 0, precision = 0, miou_percent = 0, kappa = 0;
  double boundary_iou_percent = 0;
  double hausdorff_m = 0;
  bool hausdorff_sentinel = false;
};

struct CoverageStats {
  double r2 = 0, mae = 0;
  bool r2_defined = true;
};

namespace detail {
inline void same_size(std::span<const int> a, std::span<const int> b, const char* op) {
  if (a.size() != b.size())
    throw ContractError(std::string(op) + ": masks have " + std::to_string(a.size()) + " and " +
                        std::to_string(b.size()) + " pixels");
  if (a.empty()) throw ContractError(std::string(op) + ": empty masks");
}
}  // namespace detail

/// OA, recall and precision of the positive class, mIoU over the classes present in either
/// mask, and Cohen's kappa (0 when chance agreement is total).
inline ConfusionMetrics confusion_metrics(std::span<const int> pred, std::span<const int> truth,
                                          int num_classes = 2, int positive = 1) {
  detail::same_size(pred, truth, "confusion_metrics");
  const std::size_t n = std::size_t(num_classes);
  std::vector<double> cm(n * n, 0.0);  // row truth, column prediction
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= num_classes || truth[i] < 0 || truth[i] >= num_classes)
      throw ContractError("confusion_metrics: label outside [0, " + std::to_string(num_classes) + ")");
    cm[std::size_t(truth[i]) * n + std::size_t(pred[i])] += 1;
  }
  const double total = double(pred.size());
  ConfusionMetrics m;
  double agree = 0, chance = 0, iou_sum = 0;
  int present = 0;
  for (std::size_t c = 0; c < n; ++c) {
    double row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm[c * n + k];
      col += cm[k * n + c];
    }
    const double tp = cm[c * n + c];
    agree += tp;
    chance += (row / total) * (col / total);
    const double uni = row + col - tp;
    if (uni > 0) {
      iou_sum += tp / uni;
      ++present;
    }
    if (int(c) == positive) {
      m.recall = row > 0 ? tp / row : 1.0;
      m.precision = col > 0 ? tp / col : 1.0;
    }
  }
  m.oa = agree / total;
  m.miou_percent = 100.0 * iou_sum / present;
  m.kappa = chance >= 1.0 ? 0.0 : (m.oa - chance) / (1.0 - chance);
  return m;
}

/// Foreground pixels whose (2d+1)x(2d+1) neighbourhood leaves the mask; the outside of the image
/// counts as background.
inline std::vector<char> mask_boundary(std::span<const char> fg, std::size_t h, std::size_t w, std::size_t d) {
  // Erode separably: first along rows, then along columns.
  const long H = long(h), W = long(w), D = long(d);
  std::vector<char> rows(fg.size()), eroded(fg.size());
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      char keep = 1;
      for (long k = -D; k <= D && keep; ++k) keep = x + k >= 0 && x + k < W && fg[std::size_t(y * W + x + k)];
      rows[std::size_t(y * W + x)] = keep;
    }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      char keep = 1;
      for (long k = -D; k <= D && keep; ++k) keep = y + k >= 0 && y + k < H && rows[std::size_t((y + k) * W + x)];
      eroded[std::size_t(y * W + x)] = keep;
    }
  std::vector<char> out(fg.size());
  for (std::size_t i = 0; i < fg.size(); ++i) out[i] = fg[i] && !eroded[i];
  return out;
}

/// IoU of the two masks' boundary bands, in percent. 100 when both bands are empty.
inline double boundary_iou(std::span<const int> pred, std::span<const int> truth, std::size_t h, std::size_t w,
                           std::size_t d = 2, int positive = 1) {
  detail::same_size(pred, truth, "boundary_iou");
  if (pred.size() != h * w) throw ContractError("boundary_iou: mask size does not match H x W");
  std::vector<char> p(pred.size()), t(truth.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = pred[i] == positive;
    t[i] = truth[i] == positive;
  }
  const auto bp = mask_boundary(p, h, w, d), bt = mask_boundary(t, h, w, d);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < bp.size(); ++i) {
    inter += bp[i] && bt[i];
    uni += bp[i] || bt[i];
  }
  return uni == 0 ? 100.0 : 100.0 * double(inter) / double(uni);
}

/// Squared Euclidean distance from every pixel to the nearest set pixel, exact, by the separable
/// lower-envelope-of-parabolas transform. Expects at least one set pixel.
inline std::vector<double> squared_distance_transform(std::span<const char> fg, std::size_t h, std::size_t w) {
  // Finite stand-in for "no site"; integers stay exact in double far beyond this.
  const double far = 1e12;
  const std::size_t m = std::max(h, w);
  std::vector<double> f(m), d(m), z(m + 1);
  std::vector<long> v(m);
  auto pass = [&](long n) {
    long k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (long q = 1; q < n; ++q) {
      double s;
      while (true) {
        const long r = v[k];
        s = ((f[q] + double(q * q)) - (f[r] + double(r * r))) / double(2 * (q - r));
        if (s > z[k] || k == 0) break;
        --k;
      }
      if (s <= z[k]) {
        v[0] = q;
        z[1] = std::numeric_limits<double>::infinity();
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (long q = 0; q < n; ++q) {
      while (z[k + 1] < double(q)) ++k;
      d[q] = double((q - v[k]) * (q - v[k])) + f[v[k]];
    }
  };
  std::vector<double> out(h * w);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = fg[y * w + x] ? 0.0 : far;
    pass(long(h));
    for (std::size_t y = 0; y < h; ++y) out[y * w + x] = d[y];
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) f[x] = out[y * w + x];
    pass(long(w));
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = d[x];
  }
  return out;
}

/// Symmetric Hausdorff distance between the foreground sets, in pixels times `gsd`. If either
/// mask is empty the image diagonal times `gsd` is returned and flagged.
inline HausdorffResult hausdorff_distance(std::span<const int> pred, std::span<const int> truth, std::size_t h,
                                         std::size_t w, double gsd = 1.0, int positive = 1) {
  detail::same_size(pred, truth, "hausdorff_distance");
  if (pred.size() != h * w) throw ContractError("hausdorff_distance: mask size does not match H x W");
  std::vector<char> a(pred.size()), b(truth.size());
  bool any_a = false, any_b = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    any_a |= a[i] = pred[i] == positive;
    any_b |= b[i] = truth[i] == positive;
  }
  if (!any_a || !any_b) return {std::hypot(double(h), double(w)) * gsd, true};
  const auto da = squared_distance_transform(a, h, w), db = squared_distance_transform(b, h, w);
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]) worst = std::max(worst, db[i]);
    if (b[i]) worst = std::max(worst, da[i]);
  }
  return {std::sqrt(worst) * gsd, false};
}

/// R^2 and mean absolute error of predicted against true coverage fractions.
inline CoverageStats coverage_stats(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 2) throw ContractError("coverage_stats needs at least two pairs");
  double mean = 0, mae = 0;
  for (const auto& [t, p] : pairs) {
    mean += t;
    mae += std::abs(p - t);
  }
  mean /= double(pairs.size());
  double ss_tot = 0, ss_res = 0;
  for (const auto& [t, p] : pairs) {
    ss_tot += (t - mean) * (t - mean);
    ss_res += (t - p) * (t - p);
  }
  CoverageStats s;
  s.mae = mae / double(pairs.size());
  if (ss_tot == 0) {
    s.r2_defined = false;
    s.r2 = std::numeric_limits<double>::quiet_NaN();
  } else {
    s.r2 = 1 - ss_res / ss_tot;
  }
  return s;
}

inline MetricsReport evaluate_masks(std::span<const int> pred, std::span<const int> truth, std::size_t h,
                                    std::size_t w, double gsd = 30.0, std::size_t boundary_d = 2) {
  const ConfusionMetrics c = confusion_metrics(pred, truth);
  const HausdorffResult hd = hausdorff_distance(pred, truth, h, w, gsd);
  return {c.oa, c.recall, c.precision, c.miou_percent, c.kappa, boundary_iou(pred, truth, h, w, boundary_d),
          hd.meters, hd.empty_mask};
}

/// Omission (missed cloud) and commission (false cloud) maps, 255 where the error occurs.
inline std::pair<pgm::Image, pgm::Image> error_overlays(std::span<const int> pred, std::span<const int> truth,
                                                        std::size_t h, std::size_t w, int positive = 1) {
  detail::same_size(pred, truth, "error_overlays");
  pgm::Image omission{w, h, std::vector<std::uint8_t>(h * w)}, commission = omission;
  for (std::size_t i = 0; i < h * w; ++i) {
    omission.pixels[i] = truth[i] == positive && pred[i] != positive ? 255 : 0;
    commission.pixels[i] = truth[i] != positive && pred[i] == positive ? 255 : 0;
  }
  return {omission, commission};
}

}  // namespace clisa
