#pragma once

// Baseline: canonical multi-head scaled dot-product self-attention over flattened pixels,
// with a residual connection. Cost is quadratic in H*W.

#include <cmath>

#include "clisa/attention/dosa.hpp"

namespace clisa {

template <Scalar T>
struct MstParams {
  Tensor<T> wq, wk, wv, wo;  // C x C
  Tensor<T> bq, bk, bv, bo;  // C
  std::size_t heads = 1;

  /// He-normal projections (fan-in C), zero biases.
  static MstParams make(std::size_t c, std::size_t heads, Rng& rng) {
    if (heads == 0 || c % heads) throw ContractError("MST head count must divide the channel count");
    MstParams p;
    const double sd = std::sqrt(2.0 / double(c));
    p.wq = Tensor<T>::normal({c, c}, rng, sd);
    p.wk = Tensor<T>::normal({c, c}, rng, sd);
    p.wv = Tensor<T>::normal({c, c}, rng, sd);
    p.wo = Tensor<T>::normal({c, c}, rng, sd);
    p.bq = p.bk = p.bv = p.bo = Tensor<T>::zeros({c});
    p.heads = heads;
    return p;
  }

  /// Head count giving 16-wide heads where the channel count allows it.
  static std::size_t default_heads(std::size_t c) { return c >= 16 && c % 16 == 0 ? c / 16 : 1; }

  std::size_t channels() const { return wq.dim(0); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".wq", wq);
    fn(prefix + ".wk", wk);
    fn(prefix + ".wv", wv);
    fn(prefix + ".wo", wo);
    fn(prefix + ".bq", bq);
    fn(prefix + ".bk", bk);
    fn(prefix + ".bv", bv);
    fn(prefix + ".bo", bo);
  }
};

namespace detail {
template <Scalar T>
Var<T> project(Var<T> tokens, const Tensor<T>& w, const Tensor<T>& b) {
  Tape<T>& t = tokens.tape();
  const std::size_t c = w.dim(1);
  return add(matmul(tokens, t.param(w)), reshape(t.param(b), Shape{1, c}));
}
}  // namespace detail

template <Scalar T>
Var<T> mst_attention_forward(Var<T> x, const MstParams<T>& p) {
  const std::size_t rank = x.rank();
  Var<T> xb = detail::as_batched(x, "mst_attention_forward");
  const std::size_t n = xb.dim(0), h = xb.dim(1), w = xb.dim(2), c = xb.dim(3);
  if (c != p.channels())
    throw DimensionError("MST configured for " + std::to_string(p.channels()) + " channels, got " +
                         shape_str(x.shape()));
  const std::size_t hw = h * w, heads = p.heads, d = c / heads;
  Var<T> tokens = reshape(xb, Shape{n * hw, c});
  auto split_heads = [&](Var<T> v) {
    Var<T> v4 = permute(reshape(v, Shape{n, hw, heads, d}), {0, 2, 1, 3});
    return reshape(v4, Shape{n * heads, hw, d});
  };
  Var<T> q = split_heads(detail::project(tokens, p.wq, p.bq));
  Var<T> k = split_heads(detail::project(tokens, p.wk, p.bk));
  Var<T> v = split_heads(detail::project(tokens, p.wv, p.bv));
  Var<T> scores = scale(matmul(q, transpose(k)), T(1.0 / std::sqrt(double(d))));
  Var<T> attended = matmul(softmax(scores, 2), v);  // (N*heads) x HW x d
  Var<T> merged = reshape(permute(reshape(attended, Shape{n, heads, hw, d}), {0, 2, 1, 3}),
                          Shape{n * hw, c});
  Var<T> out = reshape(detail::project(merged, p.wo, p.bo), Shape{n, h, w, c});
  return detail::restore_rank(add(xb, out), rank);
}

}  // namespace clisa
