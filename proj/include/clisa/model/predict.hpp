#pragma once

// Inference helpers: per-pixel argmax labels from generator probabilities.

#include "clisa/model/generator.hpp"

namespace clisa {

/// Index of the largest entry along the last axis, one label per pixel; ties go to the lower class.
template <Scalar T>
std::vector<int> argmax_labels(const Tensor<T>& probs) {
  const std::size_t n = probs.dim(probs.rank() - 1), pixels = probs.size() / n;
  std::vector<int> out(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c)
      if (probs[p * n + c] > probs[p * n + best]) best = c;
    out[p] = int(best);
  }
  return out;
}

/// Class probabilities for a batch, computed without recording parameter gradients.
template <Scalar T>
Tensor<T> predict_probs(const Generator<T>& g, const Tensor<T>& x) {
  Tape<T> tape;
  tape.set_params_require_grad(false);
  return generator_forward(tape.constant(x), g).value();
}

template <Scalar T>
std::vector<int> predict_labels(const Generator<T>& g, const Tensor<T>& x) {
  return argmax_labels(predict_probs(g, x));
}

}  // namespace clisa
