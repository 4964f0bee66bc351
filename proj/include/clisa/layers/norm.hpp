#pragma once

#include <cmath>
#include <string>

#include "clisa/layers/conv.hpp"

namespace clisa {

inline constexpr double kNormEpsilon = 1e-5;

/// Per-channel affine pair applied after normalization.
template <Scalar T>
struct NormAffine {
  Tensor<T> gamma;  // C
  Tensor<T> beta;   // C

  static NormAffine make(std::size_t channels) {
    return {Tensor<T>::ones({channels}), Tensor<T>::zeros({channels})};
  }

  std::size_t channels() const { return gamma.dim(0); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

namespace detail {

// Saved forward state shared by layer and batch norm. A statistics slot is either one batch
// element (layer norm, contiguous runs of per_slot values) or one channel (batch norm).
template <Scalar T>
struct NormSaved {
  std::vector<T> xhat;
  std::vector<T> inv_std;  // per statistics slot
};

template <Scalar T>
void norm_backward(const Tensor<T>& g, const NormSaved<T>& saved, const Tensor<T>& gamma,
                   std::size_t slots, std::size_t per_slot, bool slot_is_channel,
                   std::size_t c, T* gx, T* ggamma, T* gbeta) {
  const std::size_t total = g.size();
  std::vector<double> mean_dxhat(slots, 0.0), mean_dxhat_xhat(slots, 0.0);
  auto slot_of = [&](std::size_t i) { return slot_is_channel ? i % c : i / per_slot; };
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t ch = i % c;
    const double dxhat = double(g[i]) * double(gamma[ch]);
    mean_dxhat[slot_of(i)] += dxhat;
    mean_dxhat_xhat[slot_of(i)] += dxhat * double(saved.xhat[i]);
    if (ggamma) ggamma[ch] += g[i] * saved.xhat[i];
    if (gbeta) gbeta[ch] += g[i];
  }
  if (!gx) return;
  for (std::size_t s = 0; s < slots; ++s) {
    mean_dxhat[s] /= double(per_slot);
    mean_dxhat_xhat[s] /= double(per_slot);
  }
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t s = slot_of(i);
    const double dxhat = double(g[i]) * double(gamma[i % c]);
    gx[i] += static_cast<T>(double(saved.inv_std[s]) *
                            (dxhat - mean_dxhat[s] - double(saved.xhat[i]) * mean_dxhat_xhat[s]));
  }
}

}  // namespace detail

/// Per-instance normalization over all of H, W, C (one statistics pair per batch element),
/// followed by a per-channel affine map.
template <Scalar T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta) {
  std::size_t n, h, w, c;
  detail::split_nhwc(x.shape(), n, h, w, c, "layer_norm");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError("layer_norm affine expects " + std::to_string(c) + " channels, got " +
                         shape_str(gamma.shape()));
  const Tensor<T>& xv = x.value();
  const std::size_t per = h * w * c;
  detail::NormSaved<T> saved{std::vector<T>(xv.size()), std::vector<T>(n)};
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t b = 0; b < n; ++b) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < per; ++i) mean += xv[b * per + i];
    mean /= double(per);
    for (std::size_t i = 0; i < per; ++i) {
      const double d = xv[b * per + i] - mean;
      var += d * d;
    }
    var /= double(per);
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    saved.inv_std[b] = static_cast<T>(inv);
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t q = b * per + i;
      saved.xhat[q] = static_cast<T>((xv[q] - mean) * inv);
      out[q] = gv[i % c] * saved.xhat[q] + bv[i % c];
    }
  }
  flops::add(8ull * xv.size());
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(std::move(out), {xi, gi, bi},
                         [=, saved = std::move(saved)](Tape<T>& t, std::size_t self) {
                           T* gx = t.requires_grad(xi) ? t.grad_buffer(xi).ptr() : nullptr;
                           T* gg = t.requires_grad(gi) ? t.grad_buffer(gi).ptr() : nullptr;
                           T* gb = t.requires_grad(bi) ? t.grad_buffer(bi).ptr() : nullptr;
                           detail::norm_backward(t.grad(self), saved, t.value(gi), n, per, false,
                                                 c, gx, gg, gb);
                         });
}

template <Scalar T>
Var<T> layer_norm(Var<T> x, const NormAffine<T>& p) {
  return layer_norm(x, x.tape().param(p.gamma), x.tape().param(p.beta));
}

/// Batch-norm affine parameters plus running statistics.
template <Scalar T>
struct BatchNormParams {
  NormAffine<T> affine;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;

  static BatchNormParams make(std::size_t channels) {
    return {NormAffine<T>::make(channels), Tensor<T>::zeros({channels}),
            Tensor<T>::ones({channels}), 0.1};
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    affine.visit(prefix, fn);
  }
  template <typename Fn>
  void visit_buffers(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
  }
};

/// Per-channel normalization over N, H, W. Training mode uses batch statistics and updates the
/// running estimates; eval mode uses the stored running statistics.
template <Scalar T>
Var<T> batch_norm(Var<T> x, BatchNormParams<T>& p, bool training) {
  std::size_t n, h, w, c;
  detail::split_nhwc(x.shape(), n, h, w, c, "batch_norm");
  if (p.affine.channels() != c)
    throw DimensionError("batch_norm expects " + std::to_string(p.affine.channels()) +
                         " channels, input " + shape_str(x.shape()));
  if (p.running_mean.shape() != Shape{c} || p.running_var.shape() != Shape{c})
    throw ContractError("batch_norm in eval mode requires stored running statistics");
  Tape<T>& tape = x.tape();
  Var<T> gamma = tape.param(p.affine.gamma);
  Var<T> beta = tape.param(p.affine.beta);
  const Tensor<T>& xv = x.value();
  const std::size_t per = n * h * w;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (training) {
    for (std::size_t i = 0; i < xv.size(); ++i) mean[i % c] += xv[i];
    for (auto& m : mean) m /= double(per);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double d = xv[i] - mean[i % c];
      var[i % c] += d * d;
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      var[ch] /= double(per);
      const double unbiased = per > 1 ? var[ch] * double(per) / double(per - 1) : var[ch];
      p.running_mean[ch] = static_cast<T>((1 - p.momentum) * p.running_mean[ch] + p.momentum * mean[ch]);
      p.running_var[ch] = static_cast<T>((1 - p.momentum) * p.running_var[ch] + p.momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = p.running_mean[ch];
      var[ch] = p.running_var[ch];
    }
  }
  detail::NormSaved<T> saved{std::vector<T>(xv.size()), std::vector<T>(c)};
  for (std::size_t ch = 0; ch < c; ++ch)
    saved.inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + kNormEpsilon));
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const std::size_t ch = i % c;
    saved.xhat[i] = static_cast<T>((xv[i] - mean[ch]) * double(saved.inv_std[ch]));
    out[i] = gv[ch] * saved.xhat[i] + bv[ch];
  }
  flops::add(8ull * xv.size());
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return tape.record(std::move(out), {xi, gi, bi},
                     [=, saved = std::move(saved)](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       T* gx = t.requires_grad(xi) ? t.grad_buffer(xi).ptr() : nullptr;
                       T* gg = t.requires_grad(gi) ? t.grad_buffer(gi).ptr() : nullptr;
                       T* gb = t.requires_grad(bi) ? t.grad_buffer(bi).ptr() : nullptr;
                       if (training) {
                         detail::norm_backward(g, saved, t.value(gi), c, per, true, c, gx, gg, gb);
                         return;
                       }
                       // Eval mode: statistics are constants.
                       const Tensor<T>& gamma_v = t.value(gi);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const std::size_t ch = i % c;
                         if (gx) gx[i] += g[i] * gamma_v[ch] * saved.inv_std[ch];
                         if (gg) gg[ch] += g[i] * saved.xhat[i];
                         if (gb) gb[ch] += g[i];
                       }
                     });
}

}  // namespace clisa
