#pragma once

// Segmentation and adversarial objectives. Probabilities arrive as (N x) H x W x n maps on the
// class simplex; labels are flat, one class index per pixel in the same pixel order.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clisa/numcore/ops.hpp"

namespace clisa {

using Labels = std::vector<int>;

struct FocalConfig {
  double gamma = 2.0;
  std::vector<double> class_weights;  // empty: all ones
};

struct LossWeights {
  double ce = 10.0;
  double iou = 0.8;
  double adv = 0.1;
  double l2 = 0.01;
};

inline constexpr double kProbFloor = 1e-7;

namespace detail {

inline void check_labels(std::span<const int> y, std::size_t pixels, std::size_t classes, const char* op) {
  if (y.size() != pixels)
    throw DimensionError(std::string(op) + ": " + std::to_string(y.size()) + " labels for " +
                         std::to_string(pixels) + " pixels");
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= classes)
      throw ContractError(std::string(op) + ": label " + std::to_string(y[i]) + " at pixel " +
                          std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
}

}  // namespace detail

/// Mean over pixels of -w_y (1 - p_y)^gamma log p_y, with p_y clamped to [1e-7, 1].
template <Scalar T>
Var<T> focal_loss(Var<T> probs, std::span<const int> y, const FocalConfig& cfg = {}) {
  const Tensor<T>& pv = probs.value();
  const std::size_t n = probs.dim(probs.rank() - 1), pixels = pv.size() / n;
  detail::check_labels(y, pixels, n, "focal_loss");
  if (!cfg.class_weights.empty() && cfg.class_weights.size() != n)
    throw ContractError("focal_loss: " + std::to_string(cfg.class_weights.size()) + " class weights for " +
                        std::to_string(n) + " classes");
  const auto weight = [&](int c) { return cfg.class_weights.empty() ? 1.0 : cfg.class_weights[c]; };
  const double gamma = cfg.gamma;
  double total = 0;
  for (std::size_t i = 0; i < pixels; ++i) {
    const double p = std::clamp<double>(pv[i * n + y[i]], kProbFloor, 1.0);
    total += -weight(y[i]) * std::pow(1 - p, gamma) * std::log(p);
  }
  flops::add(8 * pixels);
  std::vector<int> labels(y.begin(), y.end());
  const std::size_t pi = probs.id();
  return probs.tape().record(
      Tensor<T>::scalar(T(total / double(pixels))), {pi},
      [=, labels = std::move(labels)](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(pi)) return;
        const double g = t.grad(self).item() / double(pixels);
        const Tensor<T>& pv = t.value(pi);
        Tensor<T>& gp = t.grad_buffer(pi);
        for (std::size_t i = 0; i < pixels; ++i) {
          const double raw = pv[i * n + labels[i]];
          if (raw < kProbFloor || raw > 1.0) continue;  // clamped: flat
          const double w = weight(labels[i]), q = 1 - raw;
          const double d = gamma == 0 ? -1.0 / raw
                                      : gamma * std::pow(q, gamma - 1) * std::log(raw) - std::pow(q, gamma) / raw;
          gp[i * n + labels[i]] += T(g * w * d);
        }
      });
}

/// |M_c| / |{y = c} U M_c| with M_c the pixels where exactly one of truth and prediction is c.
inline double jaccard_loss_discrete(std::span<const int> pred, std::span<const int> truth, int c) {
  if (pred.size() != truth.size()) throw DimensionError("jaccard_loss_discrete: mask sizes differ");
  std::size_t miss = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool t = truth[i] == c, p = pred[i] == c;
    miss += t != p;
    uni += t || p;
  }
  return uni == 0 ? 0.0 : double(miss) / double(uni);
}

/// Increments of the Jaccard loss along a sorted order: g_i = J(first i) - J(first i-1), where
/// J(S) treats S as the mispredicted set. `fg` flags the true-class pixels in that order.
inline std::vector<double> lovasz_grad(std::span<const char> fg) {
  const double gts = double(std::count(fg.begin(), fg.end(), 1));
  std::vector<double> g(fg.size());
  double cum_fg = 0, cum_bg = 0, prev = 0;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    (fg[i] ? cum_fg : cum_bg) += 1;
    const double inter = gts - cum_fg, uni = gts + cum_bg;
    const double j = 1.0 - inter / uni;
    g[i] = j - prev;
    prev = j;
  }
  return g;
}

/// Lovasz extension of the class-c Jaccard loss at error vector m. Writes dL/dm into `dm` if given.
inline double lovasz_extension(std::span<const double> m, std::span<const char> fg, std::vector<double>* dm = nullptr) {
  std::vector<std::size_t> order(m.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });
  std::vector<char> sorted_fg(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) sorted_fg[i] = fg[order[i]];
  const std::vector<double> g = lovasz_grad(sorted_fg);
  double loss = 0;
  if (dm) dm->assign(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    loss += m[order[i]] * g[i];
    if (dm) (*dm)[order[i]] = g[i];
  }
  return loss;
}

/// Lovasz-Softmax averaged over the classes present in the labels.
template <Scalar T>
Var<T> lovasz_softmax_loss(Var<T> probs, std::span<const int> y) {
  const Tensor<T>& pv = probs.value();
  const std::size_t n = probs.dim(probs.rank() - 1), pixels = pv.size() / n;
  detail::check_labels(y, pixels, n, "lovasz_softmax_loss");
  std::vector<int> present;
  for (std::size_t c = 0; c < n; ++c)
    if (std::find(y.begin(), y.end(), int(c)) != y.end()) present.push_back(int(c));
  Tensor<T> grad(pv.shape());
  double total = 0;
  std::vector<double> m(pixels), dm;
  std::vector<char> fg(pixels);
  for (int c : present) {
    for (std::size_t i = 0; i < pixels; ++i) {
      fg[i] = y[i] == c;
      const double p = pv[i * n + c];
      m[i] = fg[i] ? 1.0 - p : p;
    }
    total += lovasz_extension(m, fg, &dm);
    for (std::size_t i = 0; i < pixels; ++i) grad[i * n + c] = T(fg[i] ? -dm[i] : dm[i]);
  }
  const double k = double(present.size());
  flops::add(pixels * present.size() * 20);
  const std::size_t pi = probs.id();
  return probs.tape().record(Tensor<T>::scalar(T(total / k)), {pi},
                             [pi, k, grad = std::move(grad)](Tape<T>& t, std::size_t self) {
                               if (!t.requires_grad(pi)) return;
                               const T g = T(t.grad(self).item() / k);
                               Tensor<T>& gp = t.grad_buffer(pi);
                               for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * grad[i];
                             });
}

/// Soft Jaccard loss averaged over present classes: 1 - sum(p y) / sum(p + y - p y).
template <Scalar T>
Var<T> soft_jaccard_loss(Var<T> probs, std::span<const int> y) {
  const Tensor<T>& pv = probs.value();
  const std::size_t n = probs.dim(probs.rank() - 1), pixels = pv.size() / n;
  detail::check_labels(y, pixels, n, "soft_jaccard_loss");
  std::vector<int> present;
  for (std::size_t c = 0; c < n; ++c)
    if (std::find(y.begin(), y.end(), int(c)) != y.end()) present.push_back(int(c));
  Tensor<T> grad(pv.shape());
  double total = 0;
  for (int c : present) {
    double inter = 0, uni = 0;
    for (std::size_t i = 0; i < pixels; ++i) {
      const double p = pv[i * n + c], t = y[i] == c;
      inter += p * t;
      uni += p + t - p * t;
    }
    total += 1 - inter / uni;
    for (std::size_t i = 0; i < pixels; ++i) {
      const double t = y[i] == c;
      // d/dp of -I/U with dI/dp = t, dU/dp = 1 - t
      grad[i * n + c] = T(-(t * uni - inter * (1 - t)) / (uni * uni));
    }
  }
  const double k = double(present.size());
  flops::add(pixels * present.size() * 8);
  const std::size_t pi = probs.id();
  return probs.tape().record(Tensor<T>::scalar(T(total / k)), {pi},
                             [pi, k, grad = std::move(grad)](Tape<T>& t, std::size_t self) {
                               if (!t.requires_grad(pi)) return;
                               const T g = T(t.grad(self).item() / k);
                               Tensor<T>& gp = t.grad_buffer(pi);
                               for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * grad[i];
                             });
}

/// Mean of -log sigmoid(logit) over the patch grid.
template <Scalar T>
Var<T> adversarial_loss_g(Var<T> fake_logits) {
  return reduce_mean(softplus(neg(fake_logits)));
}

/// -E[log sigmoid(real)] - E[log(1 - sigmoid(fake))].
template <Scalar T>
Var<T> discriminator_loss(Var<T> real_logits, Var<T> fake_logits) {
  return add(reduce_mean(softplus(neg(real_logits))), reduce_mean(softplus(fake_logits)));
}

/// Sum of squared entries of every tensor bound on the tape through `params`.
template <Scalar T, typename Model>
Var<T> l2_penalty(Tape<T>& tape, Model& model) {
  std::optional<Var<T>> total;
  model.visit([&](const std::string&, Tensor<T>& p) {
    Var<T> s = sum_squares(tape.param(p));
    total = total ? add(*total, s) : s;
  });
  return total ? *total : tape.constant(Tensor<T>::scalar(0));
}

template <Scalar T>
struct GeneratorTerms {
  Var<T> ce;                      // focal
  std::optional<Var<T>> iou;      // Lovasz or soft Jaccard
  std::optional<Var<T>> adv;
  Var<T> l2;
};

/// lambda_CE L_CE + lambda_IoU L_J + lambda_ADV L_ADV + lambda_L2 ||theta||^2. Throws
/// TrainingAbort naming the first non-finite component.
template <Scalar T>
Var<T> generator_objective(const GeneratorTerms<T>& c, const LossWeights& w, std::size_t iteration = 0) {
  const auto check = [&](const char* name, const Var<T>& v) {
    const double x = v.value().item();
    if (!std::isfinite(x)) throw TrainingAbort(name, iteration, x);
  };
  check("focal", c.ce);
  if (c.iou) check("iou", *c.iou);
  if (c.adv) check("adversarial", *c.adv);
  check("l2", c.l2);
  Var<T> total = add(scale(c.ce, T(w.ce)), scale(c.l2, T(w.l2)));
  if (c.iou) total = add(total, scale(*c.iou, T(w.iou)));
  if (c.adv) total = add(total, scale(*c.adv, T(w.adv)));
  return total;
}

}  // namespace clisa
