#pragma once

#include <algorithm>
#include <cmath>

#include "clisa/layers/conv.hpp"

namespace clisa {

/// Per-channel spatial mean: N x H x W x C -> N x 1 x 1 x C (rank 3 input gives 1 x 1 x C).
template <Scalar T>
Var<T> global_pool(Var<T> x) {
  std::size_t n, h, w, c;
  detail::split_nhwc(x.shape(), n, h, w, c, "global_pool");
  const bool batched = x.rank() == 4;
  const Tensor<T>& xv = x.value();
  Tensor<T> out(detail::join_nhwc(batched, n, 1, 1, c));
  const std::size_t hw = h * w;
  for (std::size_t b = 0; b < n; ++b) {
    T* orow = out.ptr() + b * c;
    for (std::size_t p = 0; p < hw; ++p) {
      const T* xrow = xv.ptr() + (b * hw + p) * c;
      for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += xrow[ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) orow[ch] /= static_cast<T>(hw);
  }
  flops::add(xv.size());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad_buffer(xi);
    const T inv = T{1} / static_cast<T>(hw);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) gx[(b * hw + p) * c + ch] += g[b * c + ch] * inv;
  });
}

namespace detail {
// Half-pixel-centre source coordinate for 2x upsampling, clamped to the valid range.
struct Lerp {
  std::size_t i0, i1;
  double w1;
};
inline Lerp upsample_source(std::size_t dst, std::size_t src_extent) {
  double s = (static_cast<double>(dst) + 0.5) / 2.0 - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(src_extent - 1));
  const auto i0 = static_cast<std::size_t>(std::floor(s));
  const std::size_t i1 = std::min(i0 + 1, src_extent - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}
}  // namespace detail

/// Bilinear 2x resize with half-pixel centres and edge clamping. Constants are preserved.
template <Scalar T>
Var<T> upsample_bilinear2x(Var<T> x) {
  std::size_t n, h, w, c;
  detail::split_nhwc(x.shape(), n, h, w, c, "upsample");
  const bool batched = x.rank() == 4;
  const std::size_t oh = 2 * h, ow = 2 * w;
  const Tensor<T>& xv = x.value();
  Tensor<T> out(detail::join_nhwc(batched, n, oh, ow, c));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto ly = detail::upsample_source(oy, h);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto lx = detail::upsample_source(ox, w);
        const T w00 = T((1 - ly.w1) * (1 - lx.w1)), w01 = T((1 - ly.w1) * lx.w1);
        const T w10 = T(ly.w1 * (1 - lx.w1)), w11 = T(ly.w1 * lx.w1);
        const T* p00 = xv.ptr() + ((b * h + ly.i0) * w + lx.i0) * c;
        const T* p01 = xv.ptr() + ((b * h + ly.i0) * w + lx.i1) * c;
        const T* p10 = xv.ptr() + ((b * h + ly.i1) * w + lx.i0) * c;
        const T* p11 = xv.ptr() + ((b * h + ly.i1) * w + lx.i1) * c;
        T* o = out.ptr() + ((b * oh + oy) * ow + ox) * c;
        for (std::size_t ch = 0; ch < c; ++ch)
          o[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
      }
    }
  flops::add(7ull * out.size());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad_buffer(xi);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const auto ly = detail::upsample_source(oy, h);
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const auto lx = detail::upsample_source(ox, w);
          const T w00 = T((1 - ly.w1) * (1 - lx.w1)), w01 = T((1 - ly.w1) * lx.w1);
          const T w10 = T(ly.w1 * (1 - lx.w1)), w11 = T(ly.w1 * lx.w1);
          const T* go = g.ptr() + ((b * oh + oy) * ow + ox) * c;
          T* p00 = gx.ptr() + ((b * h + ly.i0) * w + lx.i0) * c;
          T* p01 = gx.ptr() + ((b * h + ly.i0) * w + lx.i1) * c;
          T* p10 = gx.ptr() + ((b * h + ly.i1) * w + lx.i0) * c;
          T* p11 = gx.ptr() + ((b * h + ly.i1) * w + lx.i1) * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            p00[ch] += w00 * go[ch];
            p01[ch] += w01 * go[ch];
            p10[ch] += w10 * go[ch];
            p11[ch] += w11 * go[ch];
          }
        }
      }
  });
}

/// Stride-2 3x3 convolution: H x W x C -> H/2 x W/2 x C'.
template <Scalar T>
struct DownsampleParams {
  Conv2dParams<T> conv;

  static DownsampleParams make(std::size_t cin, std::size_t cout, Rng& rng) {
    return {Conv2dParams<T>::make(3, cin, cout, rng, ConvOptions{2, 1, Padding::Zero})};
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    conv.visit(prefix + ".conv", fn);
  }
};

template <Scalar T>
Var<T> downsample(Var<T> x, const DownsampleParams<T>& p) {
  std::size_t n, h, w, c;
  detail::split_nhwc(x.shape(), n, h, w, c, "downsample");
  if (h % 2 || w % 2) throw DimensionError("downsample needs even H and W, got " + shape_str(x.shape()));
  return conv2d(x, p.conv);
}

/// Bilinear 2x resize followed by a 3x3 convolution: H x W x C -> 2H x 2W x C'.
template <Scalar T>
struct UpsampleParams {
  Conv2dParams<T> conv;

  static UpsampleParams make(std::size_t cin, std::size_t cout, Rng& rng) {
    return {Conv2dParams<T>::make(3, cin, cout, rng)};
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    conv.visit(prefix + ".conv", fn);
  }
};

template <Scalar T>
Var<T> upsample(Var<T> x, const UpsampleParams<T>& p) {
  return conv2d(upsample_bilinear2x(x), p.conv);
}

}  // namespace clisa
