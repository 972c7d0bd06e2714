#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spreadout/error.hpp"

namespace spreadout {

/// Dense row-major matrix of doubles. Rows are contiguous so a row can be
/// handed out as a span.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != m.cols_) throw ShapeError("Matrix::from_rows: ragged rows");
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return std::sqrt(s);
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(where) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

/// Rows of `parts` stacked top to bottom. All parts must share a column count.
inline Matrix vstack(std::span<const Matrix* const> parts) {
  std::size_t rows = 0;
  std::size_t cols = parts.empty() ? 0 : parts.front()->cols();
  for (const Matrix* p : parts) {
    if (p->cols() != cols && p->rows() != 0) throw ShapeError("vstack: column mismatch");
    rows += p->rows();
  }
  Matrix out(rows, cols);
  std::size_t r0 = 0;
  for (const Matrix* p : parts) {
    for (std::size_t r = 0; r < p->rows(); ++r) {
      auto src = p->row(r);
      std::copy(src.begin(), src.end(), out.row(r0 + r).begin());
    }
    r0 += p->rows();
  }
  return out;
}

/// Rows [begin, begin + count) of `m`.
inline Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.rows()) throw ShapeError("slice_rows: range out of bounds");
  Matrix out(count, m.cols());
  for (std::size_t r = 0; r < count; ++r) {
    auto src = m.row(begin + r);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

/// Rows of `m` selected by `idx`, in that order.
template <typename Index>
Matrix gather_rows(const Matrix& m, std::span<const Index> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto i = static_cast<std::size_t>(idx[r]);
    if (i >= m.rows()) throw ShapeError("gather_rows: index out of range");
    auto src = m.row(i);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace spreadout
