#pragma once

#include "clisa/layers/conv.hpp"
#include "clisa/layers/norm.hpp"

namespace clisa {

template <Scalar T>
struct ResidualBlockParams {
  NormAffine<T> norm1;
  Conv2dParams<T> conv1;
  NormAffine<T> norm2;
  Conv2dParams<T> conv2;

  static ResidualBlockParams make(std::size_t channels, Rng& rng) {
    return {NormAffine<T>::make(channels), Conv2dParams<T>::make(3, channels, channels, rng),
            NormAffine<T>::make(channels), Conv2dParams<T>::make(3, channels, channels, rng)};
  }

  std::size_t channels() const { return conv1.in_channels(); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    norm1.visit(prefix + ".norm1", fn);
    conv1.visit(prefix + ".conv1", fn);
    norm2.visit(prefix + ".norm2", fn);
    conv2.visit(prefix + ".conv2", fn);
  }
};

/// Pre-norm residual block: x + conv2(norm2(gelu(conv1(norm1(x))))).
template <Scalar T>
Var<T> residual_block(Var<T> x, const ResidualBlockParams<T>& p) {
  std::size_t n, h, w, c;
  detail::split_nhwc(x.shape(), n, h, w, c, "residual_block");
  if (c != p.channels() || p.conv2.out_channels() != c)
    throw DimensionError("residual_block expects " + std::to_string(p.channels()) +
                         " channels, input " + shape_str(x.shape()));
  Var<T> y = layer_norm(x, p.norm1);
  y = conv2d(y, p.conv1);
  y = gelu(y);
  y = layer_norm(y, p.norm2);
  y = conv2d(y, p.conv2);
  return add(x, y);
}

}  // namespace clisa
