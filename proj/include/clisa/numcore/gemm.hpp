#pragma once

// Dense row-major products through Eigen's blocked GEMM kernels.

#include <Eigen/Core>

#include "clisa/numcore/tensor.hpp"

namespace clisa::gemm {

template <Scalar T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <Scalar T>
Eigen::Map<const RowMat<T>> view(const T* p, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMat<T>>(p, Eigen::Index(rows), Eigen::Index(cols));
}

template <Scalar T>
Eigen::Map<RowMat<T>> view(T* p, std::size_t rows, std::size_t cols) {
  return Eigen::Map<RowMat<T>>(p, Eigen::Index(rows), Eigen::Index(cols));
}

/// C[m x n] += op(A) op(B), where op transposes when asked; A is stored m x k (or k x m
/// transposed) and B k x n (or n x k).
template <Scalar T>
void accumulate(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  auto C = view(c, m, n);
  if (!trans_a && !trans_b) C.noalias() += view(a, m, k) * view(b, k, n);
  else if (!trans_a) C.noalias() += view(a, m, k) * view(b, n, k).transpose();
  else if (!trans_b) C.noalias() += view(a, k, m).transpose() * view(b, k, n);
  else C.noalias() += view(a, k, m).transpose() * view(b, n, k).transpose();
}

}  // namespace clisa::gemm
