#pragma once

// Closed-form Lipschitz quantities: spectral norms of circular convolutions, the kernel-drift
// scalar epsilon, and the DOSA / HC2A Jacobian bounds built from them.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <numbers>

#include "clisa/attention/hc2a.hpp"
#include "clisa/attention/dosa.hpp"

namespace clisa {

/// Spectral norm of the circular "same" convolution a k x k x Cin x Cout kernel induces on
/// H x W maps. Per frequency the operator is a Cout x Cin complex matrix; the norm is the
/// largest singular value over all H*W frequencies.
template <Scalar T>
double conv_operator_norm(const Tensor<T>& kernel, std::size_t h, std::size_t w, std::size_t dilation = 1) {
  const Shape& ks = kernel.shape();
  if (ks.size() != 4 || ks[0] != ks[1] || ks[0] % 2 == 0)
    throw DimensionError("conv_operator_norm expects a k x k x Cin x Cout kernel, got " + shape_str(ks));
  if (h == 0 || w == 0) throw ContractError("conv_operator_norm on an empty grid");
  const std::size_t k = ks[0], cin = ks[2], cout = ks[3];
  const long r = long(k / 2);
  const double two_pi = 2 * std::numbers::pi;
  using Mat = Eigen::MatrixXcd;
  double best = 0;
  Mat m(cout, cin);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      m.setZero();
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          const double dy = double((long(a) - r) * long(dilation)), dx = double((long(b) - r) * long(dilation));
          const std::complex<double> phase = std::polar(1.0, two_pi * (double(u) * dy / double(h) + double(v) * dx / double(w)));
          for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t o = 0; o < cout; ++o) m(long(o), long(i)) += double(kernel[((a * k + b) * cin + i) * cout + o]) * phase;
        }
      const double s = (cin == 1 || cout == 1) ? m.norm() : Eigen::JacobiSVD<Mat>(m).singularValues()(0);
      best = std::max(best, s);
    }
  return best;
}

/// (1/9) (U^T Gamma U)_{0,0} for a 3 x 3 drift Gamma with U_{jk} = omega^{jk}, omega = e^{2 pi i / HW}.
inline std::complex<double> epsilon_complex(const Eigen::Matrix3d& gamma, std::size_t h, std::size_t w) {
  const std::complex<double> omega = std::polar(1.0, 2 * std::numbers::pi / double(h * w));
  Eigen::Matrix3cd u;
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) u(j, k) = std::pow(omega, j * k);
  const Eigen::Matrix3cd prod = u.transpose() * gamma.cast<std::complex<double>>() * u;
  return prod(0, 0) / 9.0;
}

/// 3 x 3 slice of a k x k x Cin x Cout kernel at channel pair (in, out).
template <Scalar T>
Eigen::Matrix3d kernel_slice(const Tensor<T>& kernel, std::size_t in, std::size_t out) {
  const Shape& ks = kernel.shape();
  if (ks.size() != 4 || ks[0] != 3 || ks[1] != 3)
    throw DimensionError("expected a 3 x 3 x Cin x Cout kernel, got " + shape_str(ks));
  if (in >= ks[2] || out >= ks[3])
    throw ContractError("kernel slice (" + std::to_string(in) + ", " + std::to_string(out) + ") outside " + shape_str(ks));
  Eigen::Matrix3d m;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) m(long(a), long(b)) = double(kernel[((a * 3 + b) * ks[2] + in) * ks[3] + out]);
  return m;
}

/// Epsilon of the channel-i block of W relative to its initialization W0. The block is the
/// (i mod Cin, i mod Cout) slice, so single-channel keys use their only output.
template <Scalar T>
double epsilon_from_kernel(const Tensor<T>& w, const Tensor<T>& w0, std::size_t channel, std::size_t h, std::size_t wd) {
  if (w.shape() != w0.shape())
    throw ContractError("epsilon_from_kernel: kernel " + shape_str(w.shape()) + " vs initialization " +
                        shape_str(w0.shape()));
  const std::size_t in = channel % w.dim(2), out = channel % w.dim(3);
  return epsilon_complex(kernel_slice(w, in, out) - kernel_slice(w0, in, out), h, wd).real();
}

struct EpsilonSet {
  double q = 0, k = 0, v = 0;
};

/// Branch epsilons of DOSA at channel i; the channel and spatial branches are merged by taking
/// the larger drift, which can only raise the bound.
template <Scalar T>
EpsilonSet dosa_epsilons(const DosaParams<T>& p, const DosaParams<T>& init, std::size_t i, std::size_t h, std::size_t w) {
  auto e = [&](const Conv2dParams<T>& a, const Conv2dParams<T>& b) { return epsilon_from_kernel(a.kernel, b.kernel, i, h, w); };
  return {std::max(e(p.query_channel, init.query_channel), e(p.query_spatial, init.query_spatial)),
          std::max(e(p.key_channel, init.key_channel), e(p.key_spatial, init.key_spatial)),
          std::max(e(p.value_channel, init.value_channel), e(p.value_spatial, init.value_spatial))};
}

template <Scalar T>
EpsilonSet hc2a_epsilons(const Hc2aParams<T>& p, const Hc2aParams<T>& init, std::size_t i, std::size_t h, std::size_t w) {
  auto lfam = [&](const LfamParams<T>& a, const LfamParams<T>& b, std::size_t hh, std::size_t ww) {
    double m = epsilon_from_kernel(a.fuse.kernel, b.fuse.kernel, i, hh, ww);
    for (std::size_t j = 0; j < 3; ++j) m = std::max(m, epsilon_from_kernel(a.branches[j].kernel, b.branches[j].kernel, i, hh, ww));
    return m;
  };
  return {lfam(p.query, init.query, h, w), lfam(p.key, init.key, h / 2, w / 2),
          epsilon_from_kernel(p.value.kernel, init.value.kernel, i, h, w)};
}

/// sqrt(HW) * max(|min x|, |max x|) over the whole input.
template <Scalar T>
double input_magnitude_b(const Tensor<T>& x) {
  if (x.rank() < 3) throw DimensionError("input_magnitude_b expects H x W x C, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(x.rank() - 3), w = x.dim(x.rank() - 2);
  double big = 0;
  for (T v : x.data()) big = std::max(big, std::abs(double(v)));
  return std::sqrt(double(h * w)) * big;
}

inline double dosa_bound(const EpsilonSet& e, double b) {
  if (!(b >= 0)) throw ContractError("dosa_bound: B must be nonnegative");
  const double fq = 1 + 9 * e.q, fk = 1 + 9 * e.k, fv = 1 + 9 * e.v;
  return 1 + 0.5 * fv * fq * (b + std::sqrt(2.0) * fk * b * b * b) + 2 * fv;
}

inline double hc2a_bound(const EpsilonSet& e, double z_norm, double y_norm) {
  if (!(z_norm >= 0 && y_norm >= 0)) throw ContractError("hc2a_bound: norms must be nonnegative");
  const double fq = 1 + 9 * e.q, fk = 1 + 9 * e.k, fv = 1 + 9 * e.v;
  return fv / (2 * std::sqrt(2.0)) * (1 / std::sqrt(2.0) + fq * fk * z_norm * z_norm * y_norm);
}

/// Chain rule through DOSA then HC2A.
inline double combined_bound(double dosa, double hc2a) { return dosa * hc2a; }

/// Euclidean norm of one channel of an H x W x C map.
template <Scalar T>
double channel_norm(const Tensor<T>& x, std::size_t channel) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (channel >= c) throw ContractError("channel " + std::to_string(channel) + " of " + shape_str(x.shape()));
  double s = 0;
  for (std::size_t p = channel; p < x.size(); p += c) s += double(x[p]) * double(x[p]);
  return std::sqrt(s);
}

}  // namespace clisa
