#pragma once

// Slow, loop-level reference implementations used only by tests. They share no code with the
// library beyond the parameter containers and read raw tensors directly.

#include <Eigen/Dense>
#include <cmath>

#include "clisa/attention/dosa.hpp"
#include "clisa/attention/hc2a.hpp"
#include "clisa/attention/mst.hpp"
#include "clisa/numcore/rng.hpp"

namespace clisa::oracle {

using Mat = Eigen::MatrixXd;

/// H x W x C tensor as an HW x C matrix (row = pixel).
inline Mat pixels(const Tensor<double>& x) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Mat m(h * w, c);
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) m(p, ch) = x[p * c + ch];
  return m;
}

inline Tensor<double> image(const Mat& m, std::size_t h, std::size_t w) {
  Tensor<double> t({h, w, static_cast<std::size_t>(m.cols())});
  for (std::size_t p = 0; p < h * w; ++p)
    for (Eigen::Index ch = 0; ch < m.cols(); ++ch) t[p * m.cols() + ch] = m(p, ch);
  return t;
}

/// Sliding-window cross-correlation, "same" output size, zero or wrap-around borders.
inline Mat conv(const Mat& x, std::size_t h, std::size_t w, const Tensor<double>& kernel,
                const Tensor<double>* bias = nullptr, std::size_t dilation = 1, bool circular = false) {
  const long k = long(kernel.dim(0)), cin = long(kernel.dim(2)), cout = long(kernel.dim(3));
  const long half = (k / 2) * long(dilation);
  Mat out = Mat::Zero(long(h * w), cout);
  for (long y = 0; y < long(h); ++y)
    for (long xx = 0; xx < long(w); ++xx)
      for (long co = 0; co < cout; ++co) {
        double acc = bias ? (*bias)[co] : 0.0;
        for (long ky = 0; ky < k; ++ky)
          for (long kx = 0; kx < k; ++kx) {
            long sy = y + ky * long(dilation) - half, sx = xx + kx * long(dilation) - half;
            if (circular) {
              sy = (sy % long(h) + long(h)) % long(h);
              sx = (sx % long(w) + long(w)) % long(w);
            } else if (sy < 0 || sx < 0 || sy >= long(h) || sx >= long(w)) {
              continue;
            }
            for (long ci = 0; ci < cin; ++ci)
              acc += kernel.at({std::size_t(ky), std::size_t(kx), std::size_t(ci), std::size_t(co)}) *
                     x(sy * long(w) + sx, ci);
          }
        out(y * long(w) + xx, co) = acc;
      }
  return out;
}

inline Mat conv(const Mat& x, std::size_t h, std::size_t w, const Conv2dParams<double>& p) {
  return conv(x, h, w, p.kernel, &p.bias, p.options.dilation, p.options.padding == Padding::Circular);
}

/// Explicit operator matrix of a single-channel circular convolution on an h x w grid.
inline Mat circulant(const Tensor<double>& k3, std::size_t h, std::size_t w) {
  const long hw = long(h * w), k = long(k3.dim(0)), half = k / 2;
  Mat m = Mat::Zero(hw, hw);
  for (long y = 0; y < long(h); ++y)
    for (long x = 0; x < long(w); ++x)
      for (long ky = 0; ky < k; ++ky)
        for (long kx = 0; kx < k; ++kx) {
          const long sy = ((y + ky - half) % long(h) + long(h)) % long(h);
          const long sx = ((x + kx - half) % long(w) + long(w)) % long(w);
          m(y * long(w) + x, sy * long(w) + sx) += k3[std::size_t(ky * k + kx)];
        }
  return m;
}

/// Dense matrix of the circular convolution on h x w maps, columns indexed by (pixel, cin).
inline Eigen::MatrixXd circulant_matrix(const Tensor<double>& kernel, std::size_t h, std::size_t w, std::size_t dilation = 1) {
  const std::size_t cin = kernel.dim(2), cout = kernel.dim(3), n = h * w;
  Eigen::MatrixXd m(long(n * cout), long(n * cin));
  for (std::size_t col = 0; col < n * cin; ++col) {
    Mat e = Mat::Zero(long(n), long(cin));
    e(long(col / cin), long(col % cin)) = 1;
    const Mat y = conv(e, h, w, kernel, nullptr, dilation, true);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t o = 0; o < cout; ++o) m(long(p * cout + o), long(col)) = y(long(p), long(o));
  }
  return m;
}

/// Plain power iteration on M^T M, run far past the point of settling.
inline double power_norm(const Eigen::MatrixXd& m, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd v(m.cols());
  for (long i = 0; i < v.size(); ++i) v(i) = rng.normal();
  v.normalize();
  const Eigen::MatrixXd mtm = m.transpose() * m;
  double lambda = 0;
  for (int it = 0; it < 200000; ++it) {
    Eigen::VectorXd next = mtm * v;
    const double l = next.norm();
    v = next / l;
    if (std::abs(l - lambda) <= 1e-15 * l) break;
    lambda = l;
  }
  return std::sqrt(lambda);
}

/// Full multi-channel zero-padded convolution as an (HW*Cout) x (HW*Cin) matrix.
inline Mat conv_matrix(const Tensor<double>& kernel, std::size_t h, std::size_t w) {
  const long cin = long(kernel.dim(2)), cout = long(kernel.dim(3)), hw = long(h * w);
  Mat m = Mat::Zero(hw * cout, hw * cin);
  for (long col = 0; col < hw * cin; ++col) {
    Mat e = Mat::Zero(hw, cin);
    e(col / cin, col % cin) = 1.0;
    Mat y = conv(e, h, w, kernel);
    for (long r = 0; r < hw * cout; ++r) m(r, col) = y(r / cout, r % cout);
  }
  return m;
}

inline Mat sigmoid(const Mat& m) {
  return m.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

inline Mat gelu(const Mat& m) {
  return m.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
}

/// Softmax of each column (axis 0).
inline Mat softmax_cols(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mx = m.col(j).maxCoeff();
    double z = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) z += std::exp(m(i, j) - mx);
    for (Eigen::Index i = 0; i < m.rows(); ++i) out(i, j) = std::exp(m(i, j) - mx) / z;
  }
  return out;
}

inline Mat softmax_rows(const Mat& m) { return softmax_cols(m.transpose()).transpose(); }

/// Gate per channel as a 1 x C row.
inline Mat dosa_channel(const Tensor<double>& x, const DosaParams<double>& p) {
  const std::size_t h = x.dim(0), w = x.dim(1);
  const Mat X = pixels(x);
  const Mat q = conv(X, h, w, p.query_channel);              // HW x C
  const Mat k = softmax_cols(conv(X, h, w, p.key_channel));  // HW x 1
  return sigmoid(q.transpose() * k).transpose();
}

/// Gate per pixel as an HW x 1 column.
inline Mat dosa_spatial(const Tensor<double>& x, const DosaParams<double>& p) {
  const std::size_t h = x.dim(0), w = x.dim(1);
  const Mat X = pixels(x);
  const Mat q = conv(X, h, w, p.query_spatial);
  const Mat pooled = conv(X, h, w, p.key_spatial).colwise().mean();  // 1 x C
  const Mat k = softmax_rows(pooled);
  return sigmoid(k * q.transpose()).transpose();
}

inline Tensor<double> dosa(const Tensor<double>& x, const DosaParams<double>& p) {
  const std::size_t h = x.dim(0), w = x.dim(1);
  const Mat X = pixels(x);
  const Mat ach = dosa_channel(x, p), asp = dosa_spatial(x, p);
  const Mat vc = conv(X, h, w, p.value_channel), vs = conv(X, h, w, p.value_spatial);
  Mat z = X;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) += ach(0, j) * vc(i, j) + asp(i, 0) * vs(i, j);
  return image(z, h, w);
}

inline Mat lfam(const Tensor<double>& x, const LfamParams<double>& p) {
  const std::size_t h = x.dim(0), w = x.dim(1);
  const Mat X = pixels(x);
  const long c = long(p.fuse.out_channels());
  Mat cat(long(h * w), 3 * c);
  for (long b = 0; b < 3; ++b) cat.middleCols(b * c, c) = gelu(conv(X, h, w, p.branches[b]));
  return conv(cat, h, w, p.fuse).colwise().mean();  // 1 x C
}

inline Tensor<double> hc2a(const Tensor<double>& z, const Tensor<double>& y, const Hc2aParams<double>& p) {
  const std::size_t h = z.dim(0), w = z.dim(1);
  const Mat q = lfam(z, p.query), k = lfam(y, p.key);
  const Mat s = softmax_rows(q.transpose() * k);  // C x C
  const Mat v = conv(pixels(z), h, w, p.value);
  return image(sigmoid(v * s), h, w);
}

inline Tensor<double> mst(const Tensor<double>& x, const MstParams<double>& p) {
  const std::size_t h = x.dim(0), w = x.dim(1);
  const long c = long(x.dim(2)), heads = long(p.heads), d = c / heads;
  const Mat X = pixels(x);
  auto mat = [&](const Tensor<double>& t) {
    Mat m(c, c);
    for (long i = 0; i < c; ++i)
      for (long j = 0; j < c; ++j) m(i, j) = t[std::size_t(i * c + j)];
    return m;
  };
  auto row = [&](const Tensor<double>& b) {
    Eigen::RowVectorXd r(c);
    for (long j = 0; j < c; ++j) r(j) = b[std::size_t(j)];
    return r;
  };
  const Mat q = (X * mat(p.wq)).rowwise() + row(p.bq);
  const Mat k = (X * mat(p.wk)).rowwise() + row(p.bk);
  const Mat v = (X * mat(p.wv)).rowwise() + row(p.bv);
  Mat merged(X.rows(), c);
  for (long hd = 0; hd < heads; ++hd) {
    const Mat s = q.middleCols(hd * d, d) * k.middleCols(hd * d, d).transpose() / std::sqrt(double(d));
    merged.middleCols(hd * d, d) = softmax_rows(s) * v.middleCols(hd * d, d);
  }
  const Mat out = X + ((merged * mat(p.wo)).rowwise() + row(p.bo));
  return image(out, h, w);
}

}  // namespace clisa::oracle
