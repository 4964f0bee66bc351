#pragma once

// Dual orthogonal self-attention: a channel-only gate (one value per channel) and a
// spatial-only gate (one value per pixel), each applied to its own value projection and added
// back onto the input.
//
//   A_ch = sigmoid( Q_C^T softmax_HW(K_C) )        Q_C: HW x C,  K_C: HW x 1
//   A_sp = sigmoid( softmax_C(pool(K_S)) Q_S^T )   Q_S: HW x C,  pool(K_S): 1 x C
//   Z    = X + A_ch * V_C + A_sp * V_S
//
// Every projection is a 3x3 convolution. The channel key is a 3x3 conv down to a single channel.

#include "clisa/layers/conv.hpp"
#include "clisa/layers/sampling.hpp"

namespace clisa {

template <Scalar T>
struct DosaParams {
  Conv2dParams<T> query_channel;  // C -> C
  Conv2dParams<T> key_channel;    // C -> 1
  Conv2dParams<T> value_channel;  // C -> C
  Conv2dParams<T> query_spatial;  // C -> C
  Conv2dParams<T> key_spatial;    // C -> C, pooled to 1 x C
  Conv2dParams<T> value_spatial;  // C -> C

  static DosaParams make(std::size_t c, Rng& rng) {
    DosaParams p;
    p.query_channel = Conv2dParams<T>::make(3, c, c, rng);
    p.key_channel = Conv2dParams<T>::make(3, c, 1, rng);
    p.value_channel = Conv2dParams<T>::make(3, c, c, rng);
    p.query_spatial = Conv2dParams<T>::make(3, c, c, rng);
    p.key_spatial = Conv2dParams<T>::make(3, c, c, rng);
    p.value_spatial = Conv2dParams<T>::make(3, c, c, rng);
    return p;
  }

  std::size_t channels() const { return query_channel.in_channels(); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    query_channel.visit(prefix + ".query_channel", fn);
    key_channel.visit(prefix + ".key_channel", fn);
    value_channel.visit(prefix + ".value_channel", fn);
    query_spatial.visit(prefix + ".query_spatial", fn);
    key_spatial.visit(prefix + ".key_spatial", fn);
    value_spatial.visit(prefix + ".value_spatial", fn);
  }
};

namespace detail {

template <Scalar T>
Var<T> as_batched(Var<T> x, const char* op) {
  if (x.rank() == 4) return x;
  if (x.rank() == 3) return reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  throw DimensionError(std::string(op) + " expects HxWxC or NxHxWxC, got " + shape_str(x.shape()));
}

template <Scalar T>
Var<T> restore_rank(Var<T> y, std::size_t rank) {
  if (rank == 4) return y;
  return reshape(y, Shape{y.dim(1), y.dim(2), y.dim(3)});
}

template <Scalar T>
void check_dosa_channels(const Var<T>& x, const DosaParams<T>& p) {
  if (x.dim(3) != p.channels())
    throw DimensionError("DOSA configured for " + std::to_string(p.channels()) +
                         " channels, input " + shape_str(x.shape()));
}

}  // namespace detail

/// Channel-only gate, N x 1 x 1 x C (1 x 1 x C for unbatched input), values in (0, 1).
template <Scalar T>
Var<T> dosa_channel_attention(Var<T> x, const DosaParams<T>& p) {
  const std::size_t rank = x.rank();
  Var<T> xb = detail::as_batched(x, "dosa_channel_attention");
  detail::check_dosa_channels(xb, p);
  const std::size_t n = xb.dim(0), hw = xb.dim(1) * xb.dim(2), c = xb.dim(3);
  Var<T> q = reshape(conv2d(xb, p.query_channel), Shape{n, hw, c});
  Var<T> k = softmax(reshape(conv2d(xb, p.key_channel), Shape{n, hw, 1}), 1);
  Var<T> scores = matmul(transpose(q), k);  // N x C x 1
  Var<T> gate = reshape(sigmoid(scores), Shape{n, 1, 1, c});
  return detail::restore_rank(gate, rank);
}

/// Spatial-only gate, N x H x W x 1, values in (0, 1).
template <Scalar T>
Var<T> dosa_spatial_attention(Var<T> x, const DosaParams<T>& p) {
  const std::size_t rank = x.rank();
  Var<T> xb = detail::as_batched(x, "dosa_spatial_attention");
  detail::check_dosa_channels(xb, p);
  const std::size_t n = xb.dim(0), h = xb.dim(1), w = xb.dim(2), c = xb.dim(3);
  Var<T> q = reshape(conv2d(xb, p.query_spatial), Shape{n, h * w, c});
  Var<T> k = softmax(reshape(global_pool(conv2d(xb, p.key_spatial)), Shape{n, 1, c}), 2);
  Var<T> scores = matmul(k, transpose(q));  // N x 1 x HW
  Var<T> gate = reshape(sigmoid(scores), Shape{n, h, w, 1});
  return detail::restore_rank(gate, rank);
}

template <Scalar T>
Var<T> dosa_forward(Var<T> x, const DosaParams<T>& p) {
  const std::size_t rank = x.rank();
  Var<T> xb = detail::as_batched(x, "dosa_forward");
  Var<T> channel_branch = mul(dosa_channel_attention(xb, p), conv2d(xb, p.value_channel));
  Var<T> spatial_branch = mul(dosa_spatial_attention(xb, p), conv2d(xb, p.value_spatial));
  return detail::restore_rank(add(add(xb, channel_branch), spatial_branch), rank);
}

}  // namespace clisa
