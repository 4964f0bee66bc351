#pragma once

// Empirical per-channel Jacobian norms of attention modules, set against the closed-form bounds.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>

#include "clisa/attention/mst.hpp"
#include "clisa/lipschitz/bounds.hpp"
#include "clisa/model/generator.hpp"

namespace clisa {

using ModuleFn = std::function<Var<double>(Var<double>)>;

enum class ProbeMethod {
  Power,    // v <- J^T J v
  Lanczos,  // same products, Krylov basis kept (Golub-Kahan bidiagonalization)
};

struct PowerOptions {
  ProbeMethod method = ProbeMethod::Lanczos;
  double h = 1e-4;          // central-difference step for J v
  double tol = 1e-6;        // relative change that counts as settled
  std::size_t hard_limit = 200;  // still unsettled here: NonConvergence
  std::uint64_t seed = 1;
};

struct PowerResult {
  double norm = 0;
  std::size_t iterations = 0;
};

/// Spectral norm of d(out channel i)/d(in channel i) at x (H x W x C) from alternating J v and
/// J^T w products: J v by central differences, J^T w by reverse mode on one recorded forward.
/// Power mode iterates v <- J^T J v; Lanczos mode orthogonalizes against all earlier vectors and
/// reads the norm off the small bidiagonal matrix, which settles in far fewer products.
inline PowerResult empirical_jacobian_diag_norm(const ModuleFn& f, const Tensor<double>& x, std::size_t channel,
                                                const PowerOptions& opt = {}) {
  if (x.rank() != 3) throw DimensionError("jacobian probe expects H x W x C input, got " + shape_str(x.shape()));
  const std::size_t cin = x.dim(2), hw_in = x.dim(0) * x.dim(1);
  if (channel >= cin) throw ContractError("probe channel " + std::to_string(channel) + " of " + shape_str(x.shape()));

  Tape<double> tape;
  tape.set_params_require_grad(false);
  Var<double> xv = tape.leaf(x, true);
  Var<double> out = f(xv);
  const std::size_t cout = out.dim(out.rank() - 1), hw_out = out.value().size() / cout;
  if (channel >= cout) throw ContractError("probe channel " + std::to_string(channel) + " of output " + shape_str(out.shape()));

  auto jv = [&](const std::vector<double>& v) {
    auto shifted = [&](double s) {
      Tensor<double> xs = x;
      for (std::size_t p = 0; p < hw_in; ++p) xs[p * cin + channel] += s * v[p];
      Tape<double> t;
      t.set_params_require_grad(false);
      return f(t.constant(xs)).value();
    };
    const Tensor<double> plus = shifted(opt.h), minus = shifted(-opt.h);
    std::vector<double> u(hw_out);
    for (std::size_t p = 0; p < hw_out; ++p) u[p] = (plus[p * cout + channel] - minus[p * cout + channel]) / (2 * opt.h);
    return u;
  };
  auto jtw = [&](const std::vector<double>& wv) {
    Tensor<double> seed(out.shape());
    for (std::size_t p = 0; p < hw_out; ++p) seed[p * cout + channel] = wv[p];
    tape.backward(out, seed);
    const Tensor<double> g = tape.grad_of(xv);
    std::vector<double> r(hw_in);
    for (std::size_t p = 0; p < hw_in; ++p) r[p] = g[p * cin + channel];
    return r;
  };
  auto normalize = [](std::vector<double>& v) {
    double n = 0;
    for (double a : v) n += a * a;
    n = std::sqrt(n);
    if (n > 0)
      for (double& a : v) a /= n;
    return n;
  };

  Rng rng(opt.seed);
  std::vector<double> v(hw_in);
  for (double& a : v) a = rng.normal();
  normalize(v);
  const auto settled = [&](double prev, double now) { return prev >= 0 && std::abs(now - prev) <= opt.tol * now; };

  if (opt.method == ProbeMethod::Power) {
    double prev = -1;
    for (std::size_t it = 1; it <= opt.hard_limit; ++it) {
      std::vector<double> u = jv(v);
      const double sigma = normalize(u);
      if (sigma == 0) return {0.0, it};
      v = jtw(u);
      if (normalize(v) == 0 || settled(prev, sigma)) return {sigma, it};
      if (it == opt.hard_limit)
        throw NonConvergence("jacobian power iteration unsettled after " + std::to_string(it) + " steps", prev, sigma);
      prev = sigma;
    }
  }

  // Golub-Kahan bidiagonalization with full reorthogonalization.
  auto orthogonalize = [](std::vector<double>& x, const std::vector<std::vector<double>>& basis) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) {
        double d = 0;
        for (std::size_t i = 0; i < x.size(); ++i) d += x[i] * q[i];
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= d * q[i];
      }
  };
  const std::size_t cap = std::min({opt.hard_limit, hw_in, hw_out});
  std::vector<std::vector<double>> us, vs{v};
  std::vector<double> alpha, beta;
  double prev = -1, sigma = 0;
  for (std::size_t it = 1; it <= cap; ++it) {
    std::vector<double> u = jv(vs.back());
    orthogonalize(u, us);
    alpha.push_back(normalize(u));
    bool exhausted = alpha.back() == 0;
    if (!exhausted) {
      us.push_back(u);
      std::vector<double> next = jtw(u);
      orthogonalize(next, vs);
      beta.push_back(normalize(next));
      exhausted = beta.back() <= 1e-12 * alpha.back();
      vs.push_back(std::move(next));
    }
    const std::size_t j = alpha.size();
    Eigen::MatrixXd bd = Eigen::MatrixXd::Zero(long(j), long(j));
    for (std::size_t r = 0; r < j; ++r) {
      bd(long(r), long(r)) = alpha[r];
      if (r + 1 < j) bd(long(r), long(r + 1)) = beta[r];
    }
    sigma = j == 1 ? alpha[0] : Eigen::JacobiSVD<Eigen::MatrixXd>(bd).singularValues()(0);
    if (exhausted || settled(prev, sigma)) return {sigma, it};
    prev = sigma;
  }
  if (cap == std::min(hw_in, hw_out)) return {sigma, cap};  // full Krylov space: exact up to differencing
  throw NonConvergence("jacobian Lanczos iteration unsettled after " + std::to_string(cap) + " steps", prev, sigma);
}

enum class ProbeModule { Mst, Dosa, DosaHc2a };

inline std::string to_string(ProbeModule m) {
  switch (m) {
    case ProbeModule::Mst: return "mst";
    case ProbeModule::Dosa: return "dosa";
    default: return "dosa_hc2a";
  }
}

inline ProbeModule probe_module_from(const std::string& s) {
  if (s == "mst") return ProbeModule::Mst;
  if (s == "dosa") return ProbeModule::Dosa;
  if (s == "dosa_hc2a" || s == "dosa+hc2a") return ProbeModule::DosaHc2a;
  throw ContractError("unknown probe module '" + s + "' (mst, dosa, dosa_hc2a)");
}

/// The modules of one probe setting, with the initial weights epsilon is measured against and
/// the fixed deeper map HC2A attends to.
struct ProbeSubject {
  std::size_t channels = 64, size = 16;
  DosaParams<double> dosa, dosa_init;
  Hc2aParams<double> hc2a, hc2a_init;
  MstParams<double> mst;
  Tensor<double> y_prev;  // size/2 x size/2 x 2C

  /// Fresh He-initialized modules; weights equal their initialization, so every epsilon is 0.
  static ProbeSubject random_init(std::size_t channels, std::size_t size, std::uint64_t seed) {
    ProbeSubject s;
    s.channels = channels;
    s.size = size;
    Rng rng(seed);
    s.dosa = s.dosa_init = DosaParams<double>::make(channels, rng);
    s.hc2a = s.hc2a_init = Hc2aParams<double>::make(channels, rng);
    s.mst = MstParams<double>::make(channels, MstParams<double>::default_heads(channels), rng);
    s.y_prev = Tensor<double>::uniform({size / 2, size / 2, 2 * channels}, rng, -1, 1);
    return s;
  }
};

/// Uniform [-1, 1] input for probe `seed`.
inline Tensor<double> probe_input(std::size_t size, std::size_t channels, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1ab));
  return Tensor<double>::uniform({size, size, channels}, rng, -1, 1);
}

struct LipschitzRecord {
  std::string module;
  std::size_t channel = 0;
  double empirical = 0;
  double bound = 0;  // NaN for MST, which has no closed-form bound here
  double b = 0;
  std::uint64_t seed = 0;
  Shape input_shape;
  std::size_t iterations = 0;
};

inline ModuleFn probe_function(const ProbeSubject& s, ProbeModule m) {
  switch (m) {
    case ProbeModule::Mst: return [&s](Var<double> x) { return mst_attention_forward(x, s.mst); };
    case ProbeModule::Dosa: return [&s](Var<double> x) { return dosa_forward(x, s.dosa); };
    default:
      return [&s](Var<double> x) {
        return hc2a_forward(dosa_forward(x, s.dosa), x.tape().constant(s.y_prev), s.hc2a);
      };
  }
}

inline LipschitzRecord probe(const ProbeSubject& s, ProbeModule m, std::size_t channel, const Tensor<double>& x,
                             std::uint64_t seed, const PowerOptions& opt = {}) {
  LipschitzRecord r;
  r.module = to_string(m);
  r.channel = channel;
  r.seed = seed;
  r.input_shape = x.shape();
  r.b = input_magnitude_b(x);
  PowerOptions o = opt;
  o.seed = mix_seed(seed, channel);
  const PowerResult pr = empirical_jacobian_diag_norm(probe_function(s, m), x, channel, o);
  r.empirical = pr.norm;
  r.iterations = pr.iterations;
  const std::size_t h = x.dim(0), w = x.dim(1);
  const double d = dosa_bound(dosa_epsilons(s.dosa, s.dosa_init, channel, h, w), r.b);
  if (m == ProbeModule::Mst) {
    r.bound = std::numeric_limits<double>::quiet_NaN();
  } else if (m == ProbeModule::Dosa) {
    r.bound = d;
  } else {
    Tape<double> t;
    t.set_params_require_grad(false);
    const Tensor<double> z = dosa_forward(t.constant(x), s.dosa).value();
    const double c = hc2a_bound(hc2a_epsilons(s.hc2a, s.hc2a_init, channel, h, w), channel_norm(z, channel),
                                channel_norm(s.y_prev, channel));
    r.bound = combined_bound(d, c);
  }
  return r;
}

inline void write_lipschitz_csv(const std::filesystem::path& path, const std::vector<LipschitzRecord>& rows) {
  std::ofstream out(path);
  out << "module,channel,empirical,bound,B,seed\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.module << ',' << r.channel << ',' << r.empirical << ',';
    if (!std::isnan(r.bound)) out << r.bound;  // blank: no closed-form bound
    out << ',' << r.b << ',' << r.seed << '\n';
  }
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace clisa
