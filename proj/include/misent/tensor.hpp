#pragma once

#include <cstddef>
#include <vector>

namespace misent {

// Dense row-major matrix. No views, no striding; the backward passes are
// written against contiguous rows.
template <typename Real>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real value = Real{0})
      : rows_(rows), cols_(cols), d_(rows * cols, value) {}

  Real& operator()(std::size_t i, std::size_t j) { return d_[i * cols_ + j]; }
  const Real& operator()(std::size_t i, std::size_t j) const {
    return d_[i * cols_ + j];
  }

  Real* row(std::size_t i) { return d_.data() + i * cols_; }
  const Real* row(std::size_t i) const { return d_.data() + i * cols_; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return d_.size(); }
  Real* data() { return d_.data(); }
  const Real* data() const { return d_.data(); }
  void fill(Real v) { d_.assign(d_.size(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<Real> d_;
};

// (d0, d1, d2) tensor, row-major; row(i, j) is the contiguous d2-slice.
template <typename Real>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t d0, std::size_t d1, std::size_t d2, Real value = Real{0})
      : d0_(d0), d1_(d1), d2_(d2), d_(d0 * d1 * d2, value) {}

  Real& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return d_[(i * d1_ + j) * d2_ + k];
  }
  const Real& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return d_[(i * d1_ + j) * d2_ + k];
  }

  Real* row(std::size_t i, std::size_t j) {
    return d_.data() + (i * d1_ + j) * d2_;
  }
  const Real* row(std::size_t i, std::size_t j) const {
    return d_.data() + (i * d1_ + j) * d2_;
  }

  std::size_t dim0() const { return d0_; }
  std::size_t dim1() const { return d1_; }
  std::size_t dim2() const { return d2_; }
  std::size_t size() const { return d_.size(); }
  Real* data() { return d_.data(); }
  const Real* data() const { return d_.data(); }
  void fill(Real v) { d_.assign(d_.size(), v); }

 private:
  std::size_t d0_ = 0, d1_ = 0, d2_ = 0;
  std::vector<Real> d_;
};

template <typename Real>
inline Real dot(const Real* a, const Real* b, std::size_t n) {
  Real s = Real{0};
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename Real>
inline void axpy(Real alpha, const Real* x, Real* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace misent
