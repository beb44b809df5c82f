#pragma once

#include <functional>
#include <stdexcept>

#include "dpnet/tensor.hpp"

namespace dpnet {

// Materializes a linear operator column by column into a dense (out x in)
// matrix by applying it to every basis vector. Strictly a correctness oracle:
// refuses operators with more than `cap` elements on either side.
inline Tensor materialize_dense(const std::function<Tensor(const Tensor&)>& op,
                                const std::vector<int>& in_dims,
                                std::size_t cap = 10000) {
  Tensor basis(in_dims);
  const std::size_t n_in = basis.numel();
  if (n_in > cap)
    throw std::invalid_argument("materialize_dense: input size " + std::to_string(n_in) +
                                " exceeds cap " + std::to_string(cap));

  basis[0] = 1.0;
  Tensor first = op(basis);
  const std::size_t n_out = first.numel();
  if (n_out > cap)
    throw std::invalid_argument("materialize_dense: output size " + std::to_string(n_out) +
                                " exceeds cap " + std::to_string(cap));

  Tensor mat({static_cast<int>(n_out), static_cast<int>(n_in)});
  for (std::size_t j = 0; j < n_in; ++j) {
    if (j > 0) {
      basis[j - 1] = 0.0;
      basis[j] = 1.0;
      first = op(basis);
    }
    for (std::size_t i = 0; i < n_out; ++i) mat[i * n_in + j] = first[i];
  }
  return mat;
}

// mat^T * mat-style helpers for oracle tests.
inline Tensor dense_transpose(const Tensor& m) {
  Tensor t({m.dim(1), m.dim(0)});
  for (int i = 0; i < m.dim(0); ++i)
    for (int j = 0; j < m.dim(1); ++j) t.at2(j, i) = m.at2(i, j);
  return t;
}

inline Tensor dense_matvec(const Tensor& m, const Tensor& x) {
  if (static_cast<std::size_t>(m.dim(1)) != x.numel())
    throw std::invalid_argument("dense_matvec: shape mismatch");
  Tensor y({m.dim(0)});
  for (int i = 0; i < m.dim(0); ++i) {
    double s = 0.0;
    for (int j = 0; j < m.dim(1); ++j) s += m.at2(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

}  // namespace dpnet
