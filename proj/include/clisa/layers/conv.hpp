#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "clisa/numcore/ops.hpp"

namespace clisa {

enum class Padding { Zero, Circular };

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  Padding padding = Padding::Zero;
};

namespace detail {

// Views rank-3 H x W x C as a batch of one.
inline void split_nhwc(const Shape& s, std::size_t& n, std::size_t& h, std::size_t& w,
                       std::size_t& c, const char* op) {
  if (s.size() == 3) {
    n = 1, h = s[0], w = s[1], c = s[2];
  } else if (s.size() == 4) {
    n = s[0], h = s[1], w = s[2], c = s[3];
  } else {
    throw DimensionError(std::string(op) + " expects HxWxC or NxHxWxC, got " + shape_str(s));
  }
}

inline Shape join_nhwc(bool batched, std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
  return batched ? Shape{n, h, w, c} : Shape{h, w, c};
}

// Maps output row `o`, tap `k` to an input row, or -1 when it lands in zero padding.
inline long conv_source(std::size_t o, std::size_t k, const ConvOptions& opt, std::size_t pad,
                        std::size_t extent) {
  long i = static_cast<long>(o * opt.stride + k * opt.dilation) - static_cast<long>(pad);
  if (opt.padding == Padding::Circular) {
    const long e = static_cast<long>(extent);
    return ((i % e) + e) % e;
  }
  return (i < 0 || i >= static_cast<long>(extent)) ? -1 : i;
}

}  // namespace detail

/// "Same"-padded 2-D cross-correlation in NHWC layout.
/// kernel: k x k x Cin x Cout (k odd); bias: Cout, or std::nullopt.
/// Stride 2 halves H and W, which must then be even.
template <Scalar T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::optional<Var<T>> bias, ConvOptions opt = {}) {
  std::size_t n, h, w, cin;
  detail::split_nhwc(x.shape(), n, h, w, cin, "conv2d");
  const bool batched = x.rank() == 4;
  const Shape& ks = kernel.shape();
  if (ks.size() != 4 || ks[0] != ks[1] || ks[0] % 2 == 0)
    throw DimensionError("conv2d kernel must be k x k x Cin x Cout with odd k, got " +
                         shape_str(ks));
  if (ks[2] != cin)
    throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                         shape_str(ks));
  const std::size_t k = ks[0], cout = ks[3];
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
    throw DimensionError("conv2d bias shape " + shape_str(bias->shape()) + " for " +
                         std::to_string(cout) + " output channels");
  if (opt.stride != 1 && opt.stride != 2) throw ContractError("conv2d supports stride 1 or 2");
  if (opt.stride == 2 && (h % 2 || w % 2))
    throw DimensionError("stride-2 conv2d needs even H and W, got " + shape_str(x.shape()));
  if (opt.stride == 2 && opt.padding == Padding::Circular)
    throw ContractError("circular padding is only supported at stride 1");
  if (opt.dilation == 0) throw ContractError("conv2d dilation must be positive");
  const std::size_t pad = opt.dilation * (k - 1) / 2;
  const std::size_t oh = h / opt.stride, ow = w / opt.stride;

  const std::size_t pixels = n * oh * ow, patch = k * k * cin;

  // Rows of `cols` are the receptive fields of the output pixels, tap-major then channel.
  auto im2col = [=](const T* xp) {
    std::vector<T> cols(pixels * patch, T(0));
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T* row = cols.data() + ((b * oh + oy) * ow + ox) * patch;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long iy = detail::conv_source(oy, ky, opt, pad, h);
            if (iy < 0) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long ix = detail::conv_source(ox, kx, opt, pad, w);
              if (ix < 0) continue;
              const T* src = xp + ((b * h + std::size_t(iy)) * w + std::size_t(ix)) * cin;
              std::copy(src, src + cin, row + (ky * k + kx) * cin);
            }
          }
        }
    return cols;
  };

  Tensor<T> out(detail::join_nhwc(batched, n, oh, ow, cout));
  {
    const std::vector<T> cols = im2col(x.value().ptr());
    if (bias) {
      const T* bp = bias->value().ptr();
      for (std::size_t p = 0; p < pixels; ++p) std::copy(bp, bp + cout, out.ptr() + p * cout);
    }
    gemm::accumulate(false, false, pixels, cout, patch, cols.data(), kernel.value().ptr(), out.ptr());
  }
  flops::add(2ull * pixels * patch * cout);

  const std::size_t xi = x.id(), ki = kernel.id();
  const std::optional<std::size_t> bi = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
  std::vector<std::size_t> inputs{xi, ki};
  if (bi) inputs.push_back(*bi);
  return x.tape().record(std::move(out), inputs, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (bi && t.requires_grad(*bi)) {
      T* gb = t.grad_buffer(*bi).ptr();
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t co = 0; co < cout; ++co) gb[co] += g[p * cout + co];
    }
    if (t.requires_grad(ki)) {
      const std::vector<T> cols = im2col(t.value(xi).ptr());
      gemm::accumulate(true, false, patch, cout, pixels, cols.data(), g.ptr(), t.grad_buffer(ki).ptr());
    }
    if (t.requires_grad(xi)) {
      std::vector<T> gcols(pixels * patch, T(0));
      gemm::accumulate(false, true, pixels, patch, cout, g.ptr(), t.value(ki).ptr(), gcols.data());
      T* gx = t.grad_buffer(xi).ptr();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T* row = gcols.data() + ((b * oh + oy) * ow + ox) * patch;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long iy = detail::conv_source(oy, ky, opt, pad, h);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long ix = detail::conv_source(ox, kx, opt, pad, w);
                if (ix < 0) continue;
                T* dst = gx + ((b * h + std::size_t(iy)) * w + std::size_t(ix)) * cin;
                const T* src = row + (ky * k + kx) * cin;
                for (std::size_t ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
              }
            }
          }
    }
  });
}

/// Weights and geometry of one 3x3 (or k x k) convolution.
template <Scalar T>
struct Conv2dParams {
  Tensor<T> kernel;  // k x k x Cin x Cout
  Tensor<T> bias;    // Cout
  ConvOptions options;

  /// He-normal kernel, zero bias.
  static Conv2dParams make(std::size_t k, std::size_t cin, std::size_t cout, Rng& rng,
                           ConvOptions options = {}) {
    Conv2dParams p;
    p.kernel = Tensor<T>::normal({k, k, cin, cout}, rng, std::sqrt(2.0 / double(k * k * cin)));
    p.bias = Tensor<T>::zeros({cout});
    p.options = options;
    return p;
  }

  static Conv2dParams zeros(std::size_t k, std::size_t cin, std::size_t cout,
                            ConvOptions options = {}) {
    Conv2dParams p;
    p.kernel = Tensor<T>::zeros({k, k, cin, cout});
    p.bias = Tensor<T>::zeros({cout});
    p.options = options;
    return p;
  }

  std::size_t kernel_size() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(2); }
  std::size_t out_channels() const { return kernel.dim(3); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".kernel", kernel);
    fn(prefix + ".bias", bias);
  }
};

template <Scalar T>
Var<T> conv2d(Var<T> x, const Conv2dParams<T>& p) {
  Tape<T>& t = x.tape();
  return conv2d(x, t.param(p.kernel), std::optional<Var<T>>(t.param(p.bias)), p.options);
}

}  // namespace clisa
