#pragma once

// U-Net generator with residual encoder/decoder levels and attention-refined skips.
//
//   stem:        3x3 conv C -> b
//   encoder l:   X_l = residual(e_l)             (b*2^l channels, H/2^l)
//                e_{l+1} = downsample(X_l)
//   bottleneck:  Y_L = residual(e_L)
//   skips:       deepest first, Y_l = HC2A(DOSA(X_l), Y_{l+1})
//   decoder l:   d_l = residual(conv(concat(upsample(d_{l+1}), Y_l)))
//   head:        1x1 conv b -> n, softmax over classes

#include <stdexcept>
#include <string>
#include <vector>

#include "clisa/attention/dosa.hpp"
#include "clisa/attention/hc2a.hpp"
#include "clisa/attention/mst.hpp"
#include "clisa/layers/residual.hpp"
#include "clisa/layers/sampling.hpp"

namespace clisa {

enum class SkipAttention { None, Dosa, DosaHc2a, Mst };

inline std::string to_string(SkipAttention a) {
  switch (a) {
    case SkipAttention::None: return "none";
    case SkipAttention::Dosa: return "dosa";
    case SkipAttention::DosaHc2a: return "dosa_hc2a";
    case SkipAttention::Mst: return "mst";
  }
  return "?";
}

inline SkipAttention skip_attention_from(const std::string& s) {
  if (s == "none" || s == "no_attention") return SkipAttention::None;
  if (s == "dosa" || s == "dosa_only") return SkipAttention::Dosa;
  if (s == "dosa_hc2a") return SkipAttention::DosaHc2a;
  if (s == "mst") return SkipAttention::Mst;
  throw ContractError("unknown attention mode '" + s + "' (none|dosa|dosa_hc2a|mst)");
}

struct GeneratorConfig {
  std::size_t input_channels = 4;
  std::size_t num_classes = 2;
  std::size_t base_channels = 16;
  std::size_t depth = 4;
  SkipAttention attention = SkipAttention::DosaHc2a;
  std::size_t mst_heads = 0;  // 0: 16-wide heads where possible

  std::size_t channels(std::size_t level) const { return base_channels << level; }

  void validate() const {
    if (input_channels == 0) throw ContractError("input_channels must be positive");
    if (num_classes < 2) throw ContractError("num_classes must be at least 2");
    if (base_channels == 0) throw ContractError("base_channels must be positive");
    if (depth == 0 || depth > 8) throw ContractError("depth must be in [1, 8]");
  }

  void check_input(const Shape& s) const {
    const std::size_t rank = s.size();
    if (rank != 3 && rank != 4)
      throw DimensionError("generator expects HxWxC or NxHxWxC, got " + shape_str(s));
    const std::size_t h = s[rank - 3], w = s[rank - 2], c = s[rank - 1];
    const std::size_t m = std::size_t{1} << depth;
    if (c != input_channels)
      throw DimensionError("generator configured for " + std::to_string(input_channels) +
                           " bands, input " + shape_str(s));
    if (h % m || w % m)
      throw DimensionError("patch side must be divisible by 2^depth = " + std::to_string(m) +
                           ", input " + shape_str(s));
  }

  std::size_t heads_at(std::size_t level) const {
    return mst_heads ? mst_heads : MstParams<double>::default_heads(channels(level));
  }
};

template <Scalar T>
struct Generator {
  GeneratorConfig config;
  Conv2dParams<T> stem;
  std::vector<ResidualBlockParams<T>> encoder;
  std::vector<DownsampleParams<T>> down;
  ResidualBlockParams<T> bottleneck;
  std::vector<DosaParams<T>> dosa;
  std::vector<Hc2aParams<T>> hc2a;
  std::vector<MstParams<T>> mst;
  std::vector<UpsampleParams<T>> up;
  std::vector<Conv2dParams<T>> merge;
  std::vector<ResidualBlockParams<T>> decoder;
  Conv2dParams<T> head;

  static Generator make(const GeneratorConfig& cfg, Rng& rng) {
    cfg.validate();
    Generator g;
    g.config = cfg;
    const std::size_t L = cfg.depth;
    g.stem = Conv2dParams<T>::make(3, cfg.input_channels, cfg.channels(0), rng);
    for (std::size_t l = 0; l < L; ++l) {
      g.encoder.push_back(ResidualBlockParams<T>::make(cfg.channels(l), rng));
      g.down.push_back(DownsampleParams<T>::make(cfg.channels(l), cfg.channels(l + 1), rng));
    }
    g.bottleneck = ResidualBlockParams<T>::make(cfg.channels(L), rng);
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t c = cfg.channels(l);
      switch (cfg.attention) {
        case SkipAttention::None: break;
        case SkipAttention::Dosa: g.dosa.push_back(DosaParams<T>::make(c, rng)); break;
        case SkipAttention::DosaHc2a:
          g.dosa.push_back(DosaParams<T>::make(c, rng));
          g.hc2a.push_back(Hc2aParams<T>::make(c, rng));
          break;
        case SkipAttention::Mst: g.mst.push_back(MstParams<T>::make(c, cfg.heads_at(l), rng)); break;
      }
      g.up.push_back(UpsampleParams<T>::make(cfg.channels(l + 1), c, rng));
      g.merge.push_back(Conv2dParams<T>::make(3, 2 * c, c, rng));
      g.decoder.push_back(ResidualBlockParams<T>::make(c, rng));
    }
    g.head = Conv2dParams<T>::make(1, cfg.channels(0), cfg.num_classes, rng);
    return g;
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    const auto lvl = [](const char* part, std::size_t l) { return std::string(part) + std::to_string(l); };
    stem.visit("stem", fn);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      encoder[l].visit(lvl("encoder", l), fn);
      down[l].visit(lvl("down", l), fn);
    }
    bottleneck.visit("bottleneck", fn);
    for (std::size_t l = 0; l < dosa.size(); ++l) dosa[l].visit(lvl("dosa", l), fn);
    for (std::size_t l = 0; l < hc2a.size(); ++l) hc2a[l].visit(lvl("hc2a", l), fn);
    for (std::size_t l = 0; l < mst.size(); ++l) mst[l].visit(lvl("mst", l), fn);
    for (std::size_t l = 0; l < up.size(); ++l) {
      up[l].visit(lvl("up", l), fn);
      merge[l].visit(lvl("merge", l), fn);
      decoder[l].visit(lvl("decoder", l), fn);
    }
    head.visit("head", fn);
  }

  /// No non-trainable state; present so generic code can treat both models alike.
  template <typename Fn>
  void visit_buffers(Fn&&) {}

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
  }

  std::size_t skip_parameter_count() {
    std::size_t n = 0;
    auto add = [&](const std::string&, Tensor<T>& t) { n += t.size(); };
    for (auto& p : dosa) p.visit("", add);
    for (auto& p : hc2a) p.visit("", add);
    for (auto& p : mst) p.visit("", add);
    return n;
  }

  template <Scalar U>
  Generator<U> cast() const {
    Rng dummy(0);
    Generator<U> out = Generator<U>::make(config, dummy);
    std::vector<const Tensor<T>*> src;
    const_cast<Generator&>(*this).visit([&](const std::string&, Tensor<T>& t) { src.push_back(&t); });
    std::size_t i = 0;
    out.visit([&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
    return out;
  }
};

/// Parameter count derived from the configuration alone, independent of model construction.
inline std::size_t expected_parameter_count(const GeneratorConfig& cfg) {
  const auto conv = [](std::size_t k, std::size_t ci, std::size_t co) { return k * k * ci * co + co; };
  const auto residual = [&](std::size_t c) { return 4 * c + 2 * conv(3, c, c); };
  const auto lfam = [&](std::size_t ci, std::size_t c) { return 3 * conv(3, ci, c) + conv(3, 3 * c, c); };
  const auto dosa = [&](std::size_t c) { return 5 * conv(3, c, c) + conv(3, c, 1); };
  const auto hc2a = [&](std::size_t c) { return conv(3, c, c) + lfam(c, c) + lfam(2 * c, c); };
  std::size_t n = conv(3, cfg.input_channels, cfg.channels(0)) + residual(cfg.channels(cfg.depth)) +
                  conv(1, cfg.channels(0), cfg.num_classes);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t c = cfg.channels(l), c2 = cfg.channels(l + 1);
    n += 2 * residual(c) + conv(3, c, c2) + conv(3, c2, c) + conv(3, 2 * c, c);
    switch (cfg.attention) {
      case SkipAttention::None: break;
      case SkipAttention::Dosa: n += dosa(c); break;
      case SkipAttention::DosaHc2a: n += dosa(c) + hc2a(c); break;
      case SkipAttention::Mst: n += 4 * (c * c + c); break;
    }
  }
  return n;
}

/// Attention-refined skip features Y_0 .. Y_{L-1} from encoder features X_l and the bottleneck.
template <Scalar T>
std::vector<Var<T>> refine_skips(const std::vector<Var<T>>& xs, Var<T> bottleneck, const Generator<T>& g) {
  const std::size_t L = xs.size();
  std::vector<Var<T>> ys(xs);
  switch (g.config.attention) {
    case SkipAttention::None: break;
    case SkipAttention::Dosa:
      for (std::size_t l = 0; l < L; ++l) ys[l] = dosa_forward(xs[l], g.dosa[l]);
      break;
    case SkipAttention::DosaHc2a: {
      Var<T> deeper = bottleneck;
      for (std::size_t l = L; l-- > 0;) {
        ys[l] = hc2a_forward(dosa_forward(xs[l], g.dosa[l]), deeper, g.hc2a[l]);
        deeper = ys[l];
      }
      break;
    }
    case SkipAttention::Mst:
      for (std::size_t l = 0; l < L; ++l) ys[l] = mst_attention_forward(xs[l], g.mst[l]);
      break;
  }
  return ys;
}

/// Pre-softmax class scores, same spatial size as the input.
template <Scalar T>
Var<T> generator_logits(Var<T> x, const Generator<T>& g) {
  g.config.check_input(x.shape());
  const bool batched = x.rank() == 4;
  Var<T> e = batched ? x : reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  e = conv2d(e, g.stem);
  std::vector<Var<T>> xs;
  for (std::size_t l = 0; l < g.config.depth; ++l) {
    xs.push_back(residual_block(e, g.encoder[l]));
    e = downsample(xs.back(), g.down[l]);
  }
  Var<T> d = residual_block(e, g.bottleneck);
  const std::vector<Var<T>> ys = refine_skips(xs, d, g);
  for (std::size_t l = g.config.depth; l-- > 0;) {
    Var<T> u = upsample(d, g.up[l]);
    d = conv2d(concat(std::vector<Var<T>>{u, ys[l]}, 3), g.merge[l]);
    d = residual_block(d, g.decoder[l]);
  }
  Var<T> logits = conv2d(d, g.head);
  return batched ? logits : reshape(logits, Shape{logits.dim(1), logits.dim(2), logits.dim(3)});
}

/// Per-pixel class probabilities.
template <Scalar T>
Var<T> generator_forward(Var<T> x, const Generator<T>& g) {
  Var<T> logits = generator_logits(x, g);
  return softmax(logits, static_cast<long>(logits.rank()) - 1);
}

}  // namespace clisa
