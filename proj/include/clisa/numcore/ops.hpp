#pragma once

// Differentiable tensor operations recorded on a Tape.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "clisa/numcore/flops.hpp"
#include "clisa/numcore/gemm.hpp"
#include "clisa/numcore/tape.hpp"

namespace clisa {

namespace detail {

template <Scalar T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

// Unary elementwise op: f computes the value, df(x, y) the local derivative.
template <Scalar T, typename F, typename DF>
Var<T> unary(Var<T> x, F f, DF df, std::uint64_t cost = 1) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  flops::add(cost * xv.size());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, df](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& yv = t.value(self);
    Tensor<T>& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> a_strides, b_strides, out_strides;
};

inline Broadcast broadcast_plan(const Shape& a, const Shape& b) {
  if (a.size() != b.size())
    throw DimensionError("broadcast requires equal ranks: " + shape_str(a) + " vs " +
                         shape_str(b));
  Broadcast p;
  p.out.resize(a.size());
  auto sa = strides_of(a), sb = strides_of(b);
  p.a_strides.resize(a.size());
  p.b_strides.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    p.out[i] = std::max(a[i], b[i]);
    p.a_strides[i] = a[i] == 1 ? 0 : sa[i];
    p.b_strides[i] = b[i] == 1 ? 0 : sb[i];
  }
  p.out_strides = strides_of(p.out);
  return p;
}

// Visits every output element with its source offsets into a and b.
template <typename Fn>
void for_each_broadcast(const Broadcast& p, Fn&& fn) {
  const std::size_t rank = p.out.size();
  const std::size_t total = shape_size(p.out);
  if (rank == 0) {
    fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t inner = p.out[rank - 1];
  const std::size_t sa = p.a_strides[rank - 1], sb = p.b_strides[rank - 1];
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) fn(o + k, ia + k * sa, ib + k * sb);
    // Advance the outer multi-index.
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      ia += p.a_strides[ax];
      ib += p.b_strides[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.a_strides[ax] * idx[ax];
      ib -= p.b_strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

// Binary elementwise op with same-rank broadcasting. da/db give the local partials.
template <Scalar T, typename F, typename DA, typename DB>
Var<T> binary(Var<T> a, Var<T> b, F f, DA da, DB db) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  const bool same = av.shape() == bv.shape();
  Tensor<T> out;
  if (same) {
    out = Tensor<T>(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    const Broadcast p = broadcast_plan(av.shape(), bv.shape());
    out = Tensor<T>(p.out);
    for_each_broadcast(p, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      out[o] = f(av[ia], bv[ib]);
    });
  }
  flops::add(out.size());
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, same, da, db](Tape<T>& t,
                                                                            std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& av = t.value(ai);
    const Tensor<T>& bv = t.value(bi);
    const bool ga = t.requires_grad(ai), gb = t.requires_grad(bi);
    Tensor<T>* gat = ga ? &t.grad_buffer(ai) : nullptr;
    Tensor<T>* gbt = gb ? &t.grad_buffer(bi) : nullptr;
    if (same) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (gat) (*gat)[i] += g[i] * da(av[i], bv[i]);
        if (gbt) (*gbt)[i] += g[i] * db(av[i], bv[i]);
      }
      return;
    }
    const Broadcast p = broadcast_plan(av.shape(), bv.shape());
    for_each_broadcast(p, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (gat) (*gat)[ia] += g[o] * da(av[ia], bv[ib]);
      if (gbt) (*gbt)[ib] += g[o] * db(av[ia], bv[ib]);
    });
  });
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <Scalar T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{1}; });
}

template <Scalar T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{-1}; });
}

template <Scalar T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <Scalar T>
Var<T> div(Var<T> a, Var<T> b) {
  return detail::binary(
      a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <Scalar T>
Var<T> scale(Var<T> x, T s) {
  return detail::unary(x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <Scalar T>
Var<T> add_scalar(Var<T> x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T{1}; });
}

template <Scalar T>
Var<T> neg(Var<T> x) {
  return scale(x, T{-1});
}

template <Scalar T>
Var<T> square(Var<T> x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

template <Scalar T>
Var<T> exp(Var<T> x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; }, 4);
}

/// Natural log. Inputs must be positive; no clamping is applied here.
template <Scalar T>
Var<T> log(Var<T> x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; }, 4);
}

template <Scalar T>
T sigmoid_value(T v) {
  if (v >= 0) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <Scalar T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary(
      x, [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T{1} - y); }, 4);
}

template <Scalar T>
Var<T> tanh(Var<T> x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; }, 4);
}

/// Exact (erf) GeLU.
template <Scalar T>
Var<T> gelu(Var<T> x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  return detail::unary(
      x, [](T v) { return T(0.5) * v * (T{1} + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        return T(0.5) * (T{1} + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-T(0.5) * v * v);
      },
      8);
}

template <Scalar T>
Var<T> relu(Var<T> x) {
  return detail::unary(
      x, [](T v) { return v > 0 ? v : T{0}; }, [](T v, T) { return v > 0 ? T{1} : T{0}; });
}

template <Scalar T>
Var<T> leaky_relu(Var<T> x, T slope) {
  return detail::unary(
      x, [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T v, T) { return v > 0 ? T{1} : slope; });
}

/// log(1 + e^x), stable for large |x|.
template <Scalar T>
Var<T> softplus(Var<T> x) {
  return detail::unary(
      x, [](T v) { return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return sigmoid_value(v); }, 4);
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <Scalar T>
Var<T> reshape(Var<T> x, Shape shape) {
  const Tensor<T>& xv = x.value();
  if (shape_size(shape) != xv.size())
    throw DimensionError("reshape element count mismatch: " + shape_str(xv.shape()) + " -> " +
                         shape_str(shape));
  const std::size_t xi = x.id();
  return x.tape().record(xv.reshaped(std::move(shape)), {xi}, [xi](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    Tensor<T>& gx = t.grad_buffer(xi);
    const Tensor<T>& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// General axis permutation: out.shape[i] = in.shape[axes[i]].
template <Scalar T>
Var<T> permute(Var<T> x, std::vector<std::size_t> axes) {
  const Tensor<T>& xv = x.value();
  const std::size_t rank = xv.rank();
  if (axes.size() != rank) throw DimensionError("permute axes do not match rank");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute axes are not a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = xv.dim(axes[i]);
  const auto in_strides = strides_of(xv.shape());
  // Source stride for each output axis.
  std::vector<std::size_t> src(rank);
  for (std::size_t i = 0; i < rank; ++i) src[i] = in_strides[axes[i]];
  auto gather = [out_shape, src](std::size_t total, auto&& fn) {
    std::vector<std::size_t> idx(out_shape.size(), 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < total; ++o) {
      fn(o, off);
      for (std::size_t ax = out_shape.size(); ax-- > 0;) {
        ++idx[ax];
        off += src[ax];
        if (idx[ax] < out_shape[ax]) break;
        off -= src[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  };
  Tensor<T> out(out_shape);
  gather(out.size(), [&](std::size_t o, std::size_t i) { out[o] = xv[i]; });
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, gather](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    Tensor<T>& gx = t.grad_buffer(xi);
    const Tensor<T>& g = t.grad(self);
    gather(g.size(), [&](std::size_t o, std::size_t i) { gx[i] += g[o]; });
  });
}

/// Swaps the last two axes (matrix transpose, batched for rank 3+).
template <Scalar T>
Var<T> transpose(Var<T> x) {
  const std::size_t r = x.rank();
  if (r < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(r);
  for (std::size_t i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

template <Scalar T>
Var<T> concat(const std::vector<Var<T>>& parts, long axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::size_t ax = detail::normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok)
      throw DimensionError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
    out_shape[ax] += s[ax];
    ids.push_back(p.id());
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[ax] * inner);
  const std::size_t row = out_shape[ax] * inner;
  Tensor<T> out(out_shape);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& pv = parts[k].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.ptr() + o * widths[k], widths[k], out.ptr() + o * row + col);
    col += widths[k];
  }
  return parts[0].tape().record(
      std::move(out), ids, [ids, widths, outer, row](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        std::size_t col = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            Tensor<T>& gk = t.grad_buffer(ids[k]);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t j = 0; j < widths[k]; ++j)
                gk[o * widths[k] + j] += g[o * row + col + j];
          }
          col += widths[k];
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product. Rank 2: [m,k]x[k,n]. Rank 3: batched [b,m,k]x[b,k,n].
template <Scalar T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const std::size_t r = av.rank();
  const bool ok = r == bv.rank() && (r == 2 || r == 3) &&
                  (r == 2 || av.dim(0) == bv.dim(0)) && av.dim(r - 1) == bv.dim(r - 2);
  if (!ok)
    throw DimensionError("matmul shape mismatch: " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  const std::size_t batch = r == 3 ? av.dim(0) : 1;
  const std::size_t m = av.dim(r - 2), k = av.dim(r - 1), n = bv.dim(r - 1);
  Shape out_shape = r == 3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor<T> out(out_shape);
  for (std::size_t s = 0; s < batch; ++s)
    gemm::accumulate(false, false, m, n, k, av.ptr() + s * m * k, bv.ptr() + s * k * n, out.ptr() + s * m * n);
  flops::add(2ull * batch * m * k * n);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& av = t.value(ai);
    const Tensor<T>& bv = t.value(bi);
    if (t.requires_grad(ai)) {
      Tensor<T>& ga = t.grad_buffer(ai);  // dA = G B^T
      for (std::size_t s = 0; s < batch; ++s)
        gemm::accumulate(false, true, m, k, n, g.ptr() + s * m * n, bv.ptr() + s * k * n, ga.ptr() + s * m * k);
    }
    if (t.requires_grad(bi)) {
      Tensor<T>& gb = t.grad_buffer(bi);  // dB = A^T G
      for (std::size_t s = 0; s < batch; ++s)
        gemm::accumulate(true, false, k, n, m, av.ptr() + s * m * k, g.ptr() + s * m * n, gb.ptr() + s * k * n);
    }
  });
}

/// Softmax along `axis`, computed with max subtraction.
template <Scalar T>
Var<T> softmax(Var<T> x, long axis) {
  const Tensor<T>& xv = x.value();
  const std::size_t ax = detail::normalize_axis(axis, xv.rank());
  std::size_t outer = 1, inner = 1;
  const std::size_t len = xv.dim(ax);
  for (std::size_t i = 0; i < ax; ++i) outer *= xv.dim(i);
  for (std::size_t i = ax + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  Tensor<T> out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      T sum = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= sum;
    }
  flops::add(6ull * xv.size());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& gx = t.grad_buffer(xi);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t q = base + j * inner;
          gx[q] += y[q] * (g[q] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <Scalar T>
Var<T> reduce_sum(Var<T> x) {
  const Tensor<T>& xv = x.value();
  T s = 0;
  for (T v : xv.data()) s += v;
  flops::add(xv.size());
  const std::size_t xi = x.id();
  return x.tape().record(Tensor<T>::scalar(s), {xi}, [xi](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    const T g = t.grad(self)[0];
    Tensor<T>& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <Scalar T>
Var<T> reduce_mean(Var<T> x) {
  return scale(reduce_sum(x), T{1} / static_cast<T>(x.value().size()));
}

/// Sum along one axis, keeping it with length 1.
template <Scalar T>
Var<T> reduce_sum(Var<T> x, long axis) {
  const Tensor<T>& xv = x.value();
  const std::size_t ax = detail::normalize_axis(axis, xv.rank());
  std::size_t outer = 1, inner = 1;
  const std::size_t len = xv.dim(ax);
  for (std::size_t i = 0; i < ax; ++i) outer *= xv.dim(i);
  for (std::size_t i = ax + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  Shape out_shape = xv.shape();
  out_shape[ax] = 1;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t in = 0; in < inner; ++in)
        out[o * inner + in] += xv[(o * len + j) * inner + in];
  flops::add(xv.size());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad_buffer(xi);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < len; ++j)
        for (std::size_t in = 0; in < inner; ++in)
          gx[(o * len + j) * inner + in] += g[o * inner + in];
  });
}

template <Scalar T>
Var<T> reduce_mean(Var<T> x, long axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  return scale(reduce_sum(x, axis), T{1} / static_cast<T>(x.dim(ax)));
}

namespace detail {
template <Scalar T, typename Better>
Var<T> reduce_extreme(Var<T> x, Better better) {
  const Tensor<T>& xv = x.value();
  std::size_t best = 0;
  for (std::size_t i = 1; i < xv.size(); ++i)
    if (better(xv[i], xv[best])) best = i;
  const std::size_t xi = x.id();
  return x.tape().record(Tensor<T>::scalar(xv[best]), {xi}, [xi, best](Tape<T>& t,
                                                                       std::size_t self) {
    if (!t.requires_grad(xi)) return;
    t.grad_buffer(xi)[best] += t.grad(self)[0];
  });
}
}  // namespace detail

/// Maximum over all elements; the gradient goes to the first maximizer.
template <Scalar T>
Var<T> reduce_max(Var<T> x) {
  return detail::reduce_extreme(x, [](T a, T b) { return a > b; });
}

template <Scalar T>
Var<T> reduce_min(Var<T> x) {
  return detail::reduce_extreme(x, [](T a, T b) { return a < b; });
}

/// Sum of squared entries, as a scalar.
template <Scalar T>
Var<T> sum_squares(Var<T> x) {
  const Tensor<T>& xv = x.value();
  T s = 0;
  for (T v : xv.data()) s += v * v;
  flops::add(2 * xv.size());
  const std::size_t xi = x.id();
  return x.tape().record(Tensor<T>::scalar(s), {xi}, [xi](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    const T g = t.grad(self)[0];
    const Tensor<T>& xv = t.value(xi);
    Tensor<T>& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T{2} * g * xv[i];
  });
}

// Operator sugar.
template <Scalar T>
Var<T> operator+(Var<T> a, Var<T> b) {
  return add(a, b);
}
template <Scalar T>
Var<T> operator-(Var<T> a, Var<T> b) {
  return sub(a, b);
}
template <Scalar T>
Var<T> operator*(Var<T> a, Var<T> b) {
  return mul(a, b);
}

}  // namespace clisa
