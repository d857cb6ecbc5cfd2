#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "poserec/error.hpp"

namespace poserec {

// Dense row-major tensor of 64-bit floats. Shapes are dynamic; rank is
// whatever the producing op says it is.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims)
      : dims_(std::move(dims)), data_(count(dims_), 0.0) {}

  Tensor(std::vector<std::size_t> dims, std::vector<double> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != count(dims_)) {
      throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                       " does not match dims " + dims_str());
    }
  }

  static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }

  static Tensor full(std::vector<std::size_t> dims, double v) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const double* raw() const { return data_.data(); }
  double* raw() { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major accessors for the common ranks.
  double& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string dims_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
    os << "]";
    return os.str();
  }

  static std::size_t count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

namespace detail {

// C[m x n] += A[m x k] * B[k x n]; i-k-j order keeps the inner loop contiguous.
inline void mm_accum(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T. Contiguous dot products.
inline void mm_abt_accum(const double* a, const double* b, double* c, std::size_t m,
                         std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n].
inline void mm_atb_accum(const double* a, const double* b, double* c, std::size_t m,
                         std::size_t k, std::size_t n) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * m;
    const double* brow = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible operands " + a.dims_str() + " and " + b.dims_str());
  }
  Tensor c({a.dim(0), b.dim(1)});
  detail::mm_accum(a.raw(), b.raw(), c.raw(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

// Max-subtracted softmax over a length-n vector.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() != 1 || x.size() == 0) {
    throw ShapeError("softmax: expected nonempty vector, got " + x.dims_str());
  }
  Tensor y({x.size()});
  double mx = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    z += y[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] /= z;
  return y;
}

inline constexpr double kDegenerateNorm = 1e-12;

// Cosine similarity; near-zero vectors are an error rather than a silent 0
// so downstream softmax weights never see fabricated values.
inline double cosine_sim(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || !a.same_dims(b)) {
    throw ShapeError("cosine_sim: operands " + a.dims_str() + " and " + b.dims_str());
  }
  const double na = detail::norm(a.data());
  const double nb = detail::norm(b.data());
  if (na < kDegenerateNorm || nb < kDegenerateNorm) {
    throw NumericError("cosine_sim: degenerate vector (norm below 1e-12)");
  }
  return detail::dot(a.data(), b.data()) / (na * nb);
}

}  // namespace poserec
