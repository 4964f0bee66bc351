#pragma once

// Hierarchical cross channel attention. Channel descriptors of the current skip feature Z_n
// (query) and of the deeper, already refined map Y_{n-1} (key) come from LFAM blocks; their
// outer product, softmax-normalized per row, mixes the channels of a value projection of Z_n:
//
//   S   = softmax_rows( LFAM_z(Z_n)^T LFAM_y(Y_{n-1}) )     C x C
//   Y_n = sigmoid( V(Z_n) S )                             V(Z_n): HW x C
//
// Y_{n-1} has half the resolution and twice the channels of Z_n.

#include "clisa/layers/conv.hpp"
#include "clisa/layers/sampling.hpp"
#include "clisa/attention/dosa.hpp"

namespace clisa {

inline constexpr std::size_t kLfamDilations[3] = {3, 5, 7};

/// Dilated 3x3 pyramid (rates 3, 5, 7) with GeLU, concatenated, fused by a 3x3 conv and
/// pooled to a 1 x C channel descriptor.
template <Scalar T>
struct LfamParams {
  Conv2dParams<T> branches[3];  // C' -> C each
  Conv2dParams<T> fuse;         // 3C -> C

  static LfamParams make(std::size_t cin, std::size_t c, Rng& rng) {
    LfamParams p;
    for (std::size_t i = 0; i < 3; ++i)
      p.branches[i] = Conv2dParams<T>::make(3, cin, c, rng, ConvOptions{1, kLfamDilations[i], Padding::Zero});
    p.fuse = Conv2dParams<T>::make(3, 3 * c, c, rng);
    return p;
  }

  std::size_t in_channels() const { return branches[0].in_channels(); }
  std::size_t out_channels() const { return fuse.out_channels(); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    for (std::size_t i = 0; i < 3; ++i)
      branches[i].visit(prefix + ".dilated" + std::to_string(kLfamDilations[i]), fn);
    fuse.visit(prefix + ".fuse", fn);
  }
};

/// Returns N x 1 x C (1 x C for unbatched input).
template <Scalar T>
Var<T> lfam_forward(Var<T> x, const LfamParams<T>& p) {
  const bool batched = x.rank() == 4;
  Var<T> xb = detail::as_batched(x, "lfam_forward");
  if (xb.dim(3) != p.in_channels())
    throw DimensionError("LFAM configured for " + std::to_string(p.in_channels()) +
                         " input channels, got " + shape_str(x.shape()));
  std::vector<Var<T>> pyramid;
  for (const auto& branch : p.branches) pyramid.push_back(gelu(conv2d(xb, branch)));
  Var<T> fused = conv2d(concat(pyramid, 3), p.fuse);
  const std::size_t n = xb.dim(0), c = p.out_channels();
  Var<T> pooled = global_pool(fused);
  return batched ? reshape(pooled, Shape{n, 1, c}) : reshape(pooled, Shape{1, c});
}

template <Scalar T>
struct Hc2aParams {
  Conv2dParams<T> value;  // C -> C
  LfamParams<T> query;    // LFAM over Z_n: C -> C
  LfamParams<T> key;      // LFAM over Y_{n-1}: 2C -> C

  static Hc2aParams make(std::size_t c, Rng& rng) {
    Hc2aParams p;
    p.value = Conv2dParams<T>::make(3, c, c, rng);
    p.query = LfamParams<T>::make(c, c, rng);
    p.key = LfamParams<T>::make(2 * c, c, rng);
    return p;
  }

  std::size_t channels() const { return value.in_channels(); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    value.visit(prefix + ".value", fn);
    query.visit(prefix + ".query_lfam", fn);
    key.visit(prefix + ".key_lfam", fn);
  }
};

template <Scalar T>
Var<T> hc2a_forward(Var<T> z, Var<T> y_prev, const Hc2aParams<T>& p) {
  const std::size_t rank = z.rank();
  Var<T> zb = detail::as_batched(z, "hc2a_forward");
  Var<T> yb = detail::as_batched(y_prev, "hc2a_forward");
  const std::size_t n = zb.dim(0), h = zb.dim(1), w = zb.dim(2), c = zb.dim(3);
  const Shape expected_y{n, h / 2, w / 2, 2 * c};
  if (c != p.channels() || h % 2 || w % 2 || yb.shape() != expected_y) {
    auto shown = [&](Shape s) {
      if (rank == 3) s.erase(s.begin());
      return shape_str(s);
    };
    throw DimensionError("hc2a_forward expects Z " + shown({n, h, w, p.channels()}) +
                         " (even H, W) and Y_prev " + shown(expected_y) + ", got " +
                         shape_str(z.shape()) + " and " + shape_str(y_prev.shape()));
  }
  Var<T> q = lfam_forward(zb, p.query);            // N x 1 x C
  Var<T> k = lfam_forward(yb, p.key);              // N x 1 x C
  Var<T> scores = softmax(matmul(transpose(q), k), 2);  // N x C x C
  Var<T> v = reshape(conv2d(zb, p.value), Shape{n, h * w, c});
  Var<T> out = reshape(sigmoid(matmul(v, scores)), Shape{n, h, w, c});
  return detail::restore_rank(out, rank);
}

}  // namespace clisa
