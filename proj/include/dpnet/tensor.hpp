#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpnet {

// Dense row-major tensor of doubles, up to 4 dimensions. All feature maps,
// images, and filter banks in this library are Tensors; shape errors throw
// std::invalid_argument.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    std::size_t n = 1;
    for (int d : dims_) {
      if (d <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, 0.0);
  }

  Tensor(std::initializer_list<int> dims) : Tensor(std::vector<int>(dims)) {}

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.dims_); }

  const std::vector<int>& dims() const { return dims_; }
  int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(dims_.size()); }
  std::size_t numel() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Indexing helpers for the common ranks. Row-major: last index contiguous.
  double& at2(int i, int j) { return data_[idx2(i, j)]; }
  double at2(int i, int j) const { return data_[idx2(i, j)]; }
  double& at3(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  double at3(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
  double& at4(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  double at4(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * dims_[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k) * dims_[3] + l;
  }

  // Pointer to the start of row j of plane i (rank-3 tensors).
  double* row3(int i, int j) { return data_.data() + idx3(i, j, 0); }
  const double* row3(int i, int j) const { return data_.data() + idx3(i, j, 0); }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<int> dims_;
  std::vector<double> data_;
};

inline void check_same_dims(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_dims(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

inline double dot(const Tensor& a, const Tensor& b) {
  check_same_dims(a, b, "dot");
  double s = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.numel(); ++i) s += pa[i] * pb[i];
  return s;
}

inline double sqnorm(const Tensor& a) {
  double s = 0.0;
  const double* p = a.data();
  for (std::size_t i = 0; i < a.numel(); ++i) s += p[i] * p[i];
  return s;
}

// y += alpha * x
inline void axpy(double alpha, const Tensor& x, Tensor& y) {
  check_same_dims(x, y, "axpy");
  const double* px = x.data();
  double* py = y.data();
  for (std::size_t i = 0; i < x.numel(); ++i) py[i] += alpha * px[i];
}

inline void scale(Tensor& x, double alpha) {
  double* p = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) p[i] *= alpha;
}

// Count of exactly-zero entries' complement: ||x||_0.
inline std::size_t count_nonzero(const Tensor& x) {
  std::size_t n = 0;
  const double* p = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) n += (p[i] != 0.0);
  return n;
}

inline bool all_finite(const Tensor& x) {
  const double* p = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

}  // namespace dpnet
