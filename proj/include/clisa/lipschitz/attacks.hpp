#pragma once

// l-infinity gradient-sign attacks on the segmentation objective, and mIoU sweeps over budgets.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "clisa/datagen/datagen.hpp"
#include "clisa/losses/losses.hpp"
#include "clisa/metrics/metrics.hpp"
#include "clisa/model/predict.hpp"

namespace clisa {

enum class AttackMethod { Fgsm, Pgd };

inline std::string to_string(AttackMethod m) { return m == AttackMethod::Fgsm ? "fgsm" : "pgd"; }

inline AttackMethod attack_method_from(const std::string& s) {
  if (s == "fgsm") return AttackMethod::Fgsm;
  if (s == "pgd" || s == "pgd20" || s == "pgd-20") return AttackMethod::Pgd;
  throw ContractError("unknown attack '" + s + "' (fgsm, pgd)");
}

struct AttackConfig {
  double lo = 0, hi = 1;      // valid input range
  double alpha_ratio = 0.25;  // PGD step as a fraction of the budget
  std::size_t iterations = 20;
  LossWeights weights;        // only ce and iou are used
};

template <Scalar T>
struct LossAndGrad {
  double loss = 0;
  Tensor<T> grad;  // d loss / d x
};

/// Focal + Lovasz loss of the generator at x, and its gradient with respect to x.
template <Scalar T>
LossAndGrad<T> attack_loss_grad(const Generator<T>& g, const Tensor<T>& x, std::span<const int> y,
                                const LossWeights& w = {}) {
  Tape<T> tape;
  tape.set_params_require_grad(false);
  Var<T> xv = tape.leaf(x, true);
  Var<T> probs = generator_forward(xv, g);
  Var<T> loss = add(scale(focal_loss(probs, y), T(w.ce)), scale(lovasz_softmax_loss(probs, y), T(w.iou)));
  tape.backward(loss);
  return {double(loss.value().item()), tape.grad_of(xv)};
}

template <Scalar T>
double attack_loss(const Generator<T>& g, const Tensor<T>& x, std::span<const int> y, const LossWeights& w = {}) {
  Tape<T> tape;
  tape.set_params_require_grad(false);
  Var<T> probs = generator_forward(tape.constant(x), g);
  return double(add(scale(focal_loss(probs, y), T(w.ce)), scale(lovasz_softmax_loss(probs, y), T(w.iou))).value().item());
}

namespace detail {
template <Scalar T>
T sign_of(T v) {
  return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0));
}

// Clip into the eps-ball around x0, then into the valid range.
template <Scalar T>
void project(Tensor<T>& x, const Tensor<T>& x0, double eps, const AttackConfig& cfg) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lo = std::max(cfg.lo, double(x0[i]) - eps), hi = std::min(cfg.hi, double(x0[i]) + eps);
    x[i] = T(std::clamp(double(x[i]), std::min(lo, hi), std::max(lo, hi)));
  }
}
}  // namespace detail

/// One signed-gradient step of size eps.
template <Scalar T>
Tensor<T> fgsm_attack(const Generator<T>& g, const Tensor<T>& x, std::span<const int> y, double eps,
                      const AttackConfig& cfg = {}) {
  if (!(eps >= 0)) throw ContractError("attack budget must be nonnegative");
  if (eps == 0) return x;
  const Tensor<T> grad = attack_loss_grad(g, x, y, cfg.weights).grad;
  Tensor<T> adv = x;
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += T(eps) * detail::sign_of(grad[i]);
  detail::project(adv, x, eps, cfg);
  return adv;
}

/// cfg.iterations signed steps of size alpha (default eps * alpha_ratio), projected after each.
/// Starts at x; no random restart.
template <Scalar T>
Tensor<T> pgd_attack(const Generator<T>& g, const Tensor<T>& x, std::span<const int> y, double eps,
                     double alpha = -1, const AttackConfig& cfg = {}) {
  if (!(eps >= 0)) throw ContractError("attack budget must be nonnegative");
  if (alpha < 0) alpha = eps * cfg.alpha_ratio;
  if (eps == 0) return x;
  Tensor<T> adv = x;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Tensor<T> grad = attack_loss_grad(g, adv, y, cfg.weights).grad;
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += T(alpha) * detail::sign_of(grad[i]);
    detail::project(adv, x, eps, cfg);
  }
  return adv;
}

template <Scalar T>
Tensor<T> run_attack(AttackMethod m, const Generator<T>& g, const Tensor<T>& x, std::span<const int> y, double eps,
                     const AttackConfig& cfg = {}) {
  return m == AttackMethod::Fgsm ? fgsm_attack(g, x, y, eps, cfg) : pgd_attack(g, x, y, eps, -1.0, cfg);
}

struct SweepPoint {
  double eps = 0;
  double miou_percent = 0;
  double oa = 0;
};

/// Pooled mIoU over `pairs` after attacking each batch at every budget in the grid.
/// A zero budget leaves inputs untouched, so that point is the clean score.
template <Scalar T>
std::vector<SweepPoint> attack_sweep(const Generator<T>& g, const std::vector<PatchPair>& pairs, AttackMethod m,
                                     const std::vector<double>& eps_grid, const AttackConfig& cfg = {},
                                     std::size_t batch = 8) {
  if (pairs.empty()) throw ContractError("attack_sweep on an empty set");
  batch = std::max<std::size_t>(batch, 1);
  std::vector<SweepPoint> out;
  for (double eps : eps_grid) {
    Labels pred, truth;
    for (std::size_t start = 0; start < pairs.size(); start += batch) {
      std::vector<std::size_t> which(std::min(batch, pairs.size() - start));
      std::iota(which.begin(), which.end(), start);
      auto [x, y] = stack_batch<T>(pairs, which);
      const Labels p = predict_labels(g, run_attack(m, g, x, y, eps, cfg));
      pred.insert(pred.end(), p.begin(), p.end());
      truth.insert(truth.end(), y.begin(), y.end());
    }
    const auto cm = confusion_metrics(pred, truth, int(g.config.num_classes));
    out.push_back({eps, cm.miou_percent, cm.oa});
  }
  return out;
}

}  // namespace clisa
