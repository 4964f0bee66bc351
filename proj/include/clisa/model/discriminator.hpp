#pragma once

// Conditional patch discriminator: the image and a class-probability map are stacked along
// channels and reduced by stride-2 conv blocks to a grid of real/fake logits.

#include <string>
#include <vector>

#include "clisa/layers/conv.hpp"
#include "clisa/layers/norm.hpp"

namespace clisa {

struct DiscriminatorConfig {
  std::size_t input_channels = 4;
  std::size_t num_classes = 2;
  std::size_t base_channels = 16;
  std::size_t blocks = 3;
  double slope = 0.2;

  void validate() const {
    if (blocks == 0 || blocks > 8) throw ContractError("discriminator blocks must be in [1, 8]");
    if (base_channels == 0) throw ContractError("discriminator base_channels must be positive");
  }
};

template <Scalar T>
struct Discriminator {
  DiscriminatorConfig config;
  std::vector<Conv2dParams<T>> convs;   // stride 2
  std::vector<BatchNormParams<T>> norms;  // blocks after the first
  Conv2dParams<T> out;                  // 3x3 -> 1 logit

  static Discriminator make(const DiscriminatorConfig& cfg, Rng& rng) {
    cfg.validate();
    Discriminator d;
    d.config = cfg;
    std::size_t cin = cfg.input_channels + cfg.num_classes;
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      const std::size_t cout = cfg.base_channels << b;
      d.convs.push_back(Conv2dParams<T>::make(3, cin, cout, rng, ConvOptions{2, 1, Padding::Zero}));
      if (b > 0) d.norms.push_back(BatchNormParams<T>::make(cout));
      cin = cout;
    }
    d.out = Conv2dParams<T>::make(3, cin, 1, rng);
    return d;
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    for (std::size_t b = 0; b < convs.size(); ++b) {
      convs[b].visit("block" + std::to_string(b) + ".conv", fn);
      if (b > 0) norms[b - 1].visit("block" + std::to_string(b) + ".norm", fn);
    }
    out.visit("out", fn);
  }

  template <typename Fn>
  void visit_buffers(Fn&& fn) {
    for (std::size_t b = 1; b < convs.size(); ++b) norms[b - 1].visit_buffers("block" + std::to_string(b) + ".norm", fn);
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
  }
};

/// Patch logits N x H/2^b x W/2^b x 1 (rank follows the inputs). Batch statistics are used,
/// and the running estimates updated, only when `training` is set.
template <Scalar T>
Var<T> discriminator_forward(Var<T> x, Var<T> mask, Discriminator<T>& d, bool training) {
  if (x.rank() != mask.rank() || x.rank() < 3 || x.rank() > 4)
    throw DimensionError("discriminator inputs must both be HxWxC or NxHxWxC, got " +
                         shape_str(x.shape()) + " and " + shape_str(mask.shape()));
  const std::size_t r = x.rank();
  for (std::size_t a = 0; a + 1 < r; ++a)
    if (x.dim(a) != mask.dim(a))
      throw DimensionError("discriminator image " + shape_str(x.shape()) + " and mask " +
                           shape_str(mask.shape()) + " are not aligned");
  if (x.dim(r - 1) != d.config.input_channels || mask.dim(r - 1) != d.config.num_classes)
    throw DimensionError("discriminator configured for " + std::to_string(d.config.input_channels) +
                         " bands and " + std::to_string(d.config.num_classes) + " classes, got " +
                         shape_str(x.shape()) + " and " + shape_str(mask.shape()));
  const std::size_t m = std::size_t{1} << d.config.blocks;
  if (x.dim(r - 3) % m || x.dim(r - 2) % m)
    throw DimensionError("discriminator input side must be divisible by " + std::to_string(m) +
                         ", got " + shape_str(x.shape()));
  Var<T> h = concat(std::vector<Var<T>>{x, mask}, static_cast<long>(r) - 1);
  for (std::size_t b = 0; b < d.convs.size(); ++b) {
    h = conv2d(h, d.convs[b]);
    if (b > 0) h = batch_norm(h, d.norms[b - 1], training);
    h = leaky_relu(h, T(d.config.slope));
  }
  return conv2d(h, d.out);
}

}  // namespace clisa
