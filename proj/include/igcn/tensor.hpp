#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace igcn {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Row-major dense matrix of doubles. Vectors are stored as N x 1 matrices.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("DenseMatrix: " + std::to_string(data_.size()) +
                       " values for shape " + shape_string(rows_, cols_));
    }
  }
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("DenseMatrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static DenseMatrix column(std::span<const double> v) {
    return DenseMatrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const DenseMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape() const { return shape_string(rows_, cols_); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

// Compressed-row sparse matrix. Column indices are strictly increasing in each row.
class SparseMatrix {
 public:
  SparseMatrix() : offsets_(1, 0) {}

  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> offsets,
               std::vector<std::uint32_t> indices, std::vector<double> values)
      : rows_(rows), cols_(cols), offsets_(std::move(offsets)), indices_(std::move(indices)),
        values_(std::move(values)) {
    validate();
  }

  // Duplicate coordinates are summed.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> entries) {
    for (const auto& t : entries) {
      if (t.row >= rows || t.col >= cols) {
        throw ShapeError("SparseMatrix: entry (" + std::to_string(t.row) + "," +
                         std::to_string(t.col) + ") outside " + DenseMatrix::shape_string(rows, cols));
      }
    }
    std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::vector<std::size_t> offsets(rows + 1, 0);
    std::vector<std::uint32_t> indices;
    std::vector<double> values;
    indices.reserve(entries.size());
    values.reserve(entries.size());
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto& t = entries[k];
      if (k > 0 && entries[k - 1].row == t.row && entries[k - 1].col == t.col) {
        values.back() += t.value;
        continue;
      }
      indices.push_back(static_cast<std::uint32_t>(t.col));
      values.push_back(t.value);
      ++offsets[t.row + 1];
    }
    for (std::size_t r = 0; r < rows; ++r) offsets[r + 1] += offsets[r];
    return SparseMatrix(rows, cols, std::move(offsets), std::move(indices), std::move(values));
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<std::size_t> offsets(n + 1);
    std::vector<std::uint32_t> indices(n);
    for (std::size_t i = 0; i <= n; ++i) offsets[i] = i;
    for (std::size_t i = 0; i < n; ++i) indices[i] = static_cast<std::uint32_t>(i);
    return SparseMatrix(n, n, std::move(offsets), std::move(indices), std::vector<double>(n, 1.0));
  }

  // Keeps exact zeros out of the pattern.
  static SparseMatrix from_dense(const DenseMatrix& d) {
    std::vector<Triplet> t;
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < d.cols(); ++c)
        if (d(r, c) != 0.0) t.push_back({r, c, d(r, c)});
    return from_triplets(d.rows(), d.cols(), std::move(t));
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) d(r, indices_[k]) = values_[k];
    return d;
  }

  // Same pattern, new values.
  SparseMatrix with_values(std::vector<double> values) const {
    if (values.size() != values_.size()) {
      throw ShapeError("SparseMatrix::with_values: expected " + std::to_string(values_.size()) +
                       " values, got " + std::to_string(values.size()));
    }
    SparseMatrix out = *this;
    out.values_ = std::move(values);
    return out;
  }

  SparseMatrix transpose() const {
    std::vector<std::size_t> offsets(cols_ + 1, 0);
    for (auto c : indices_) ++offsets[c + 1];
    for (std::size_t c = 0; c < cols_; ++c) offsets[c + 1] += offsets[c];
    std::vector<std::uint32_t> indices(nnz());
    std::vector<double> values(nnz());
    std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
        const std::size_t dst = cursor[indices_[k]]++;
        indices[dst] = static_cast<std::uint32_t>(r);
        values[dst] = values_[k];
      }
    }
    return SparseMatrix(cols_, rows_, std::move(offsets), std::move(indices), std::move(values));
  }

  // Position of (r, c) in the value array, or nnz() when not stored.
  std::size_t find(std::size_t r, std::size_t c) const {
    const auto first = indices_.begin() + static_cast<std::ptrdiff_t>(offsets_[r]);
    const auto last = indices_.begin() + static_cast<std::ptrdiff_t>(offsets_[r + 1]);
    const auto it = std::lower_bound(first, last, static_cast<std::uint32_t>(c));
    if (it == last || *it != c) return nnz();
    return static_cast<std::size_t>(it - indices_.begin());
  }
  double at(std::size_t r, std::size_t c) const {
    const auto k = find(r, c);
    return k == nnz() ? 0.0 : values_[k];
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  std::string shape() const { return DenseMatrix::shape_string(rows_, cols_); }

  const std::vector<std::size_t>& offsets() const { return offsets_; }
  const std::vector<std::uint32_t>& indices() const { return indices_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  std::span<const std::uint32_t> row_indices(std::size_t r) const {
    return {indices_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

  // Throws ShapeError unless the compressed-row arrays are well formed.
  void validate() const {
    if (offsets_.size() != rows_ + 1 || offsets_.front() != 0 || offsets_.back() != indices_.size() ||
        indices_.size() != values_.size()) {
      throw ShapeError("SparseMatrix: inconsistent compressed-row arrays");
    }
    for (std::size_t r = 0; r < rows_; ++r) {
      if (offsets_[r + 1] < offsets_[r]) throw ShapeError("SparseMatrix: offsets not monotone");
      for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
        if (indices_[k] >= cols_) throw ShapeError("SparseMatrix: column index out of range");
        if (k > offsets_[r] && indices_[k] <= indices_[k - 1]) {
          throw ShapeError("SparseMatrix: column indices not strictly increasing in row " +
                           std::to_string(r));
        }
      }
    }
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> indices_;
  std::vector<double> values_;
};

namespace detail {
inline void require(bool ok, const char* op, const std::string& a, const std::string& b) {
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + a + " and " + b);
}
}  // namespace detail

// a * b
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require(a.cols() == b.rows(), "matmul", a.shape(), b.shape());
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      const auto br = b.row(k);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += s * br[j];
    }
  }
  return out;
}

// a^T * b
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require(a.rows() == b.rows(), "matmul_tn", a.shape(), b.shape());
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto ar = a.row(k);
    const auto br = b.row(k);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double s = ar[i];
      if (s == 0.0) continue;
      auto o = out.row(i);
      for (std::size_t j = 0; j < br.size(); ++j) o[j] += s * br[j];
    }
  }
  return out;
}

// a * b^T
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require(a.cols() == b.cols(), "matmul_nt", a.shape(), b.shape());
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) acc += ar[k] * br[k];
      out(i, j) = acc;
    }
  }
  return out;
}

// s * d
inline DenseMatrix spmm(const SparseMatrix& s, const DenseMatrix& d) {
  detail::require(s.cols() == d.rows(), "spmm", s.shape(), d.shape());
  DenseMatrix out(s.rows(), d.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto o = out.row(i);
    const auto idx = s.row_indices(i);
    const auto val = s.row_values(i);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto dr = d.row(idx[k]);
      const double w = val[k];
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += w * dr[j];
    }
  }
  return out;
}

// s^T * d, without materializing the transpose.
inline DenseMatrix spmm_tn(const SparseMatrix& s, const DenseMatrix& d) {
  detail::require(s.rows() == d.rows(), "spmm_tn", s.shape(), d.shape());
  DenseMatrix out(s.cols(), d.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto dr = d.row(i);
    const auto idx = s.row_indices(i);
    const auto val = s.row_values(i);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto o = out.row(idx[k]);
      const double w = val[k];
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += w * dr[j];
    }
  }
  return out;
}

inline DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require(a.same_shape(b), "add", a.shape(), b.shape());
  DenseMatrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += b.values()[i];
  return out;
}

inline DenseMatrix operator*(double s, const DenseMatrix& a) {
  DenseMatrix out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require(a.same_shape(b), "max_abs_diff", a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

inline double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace igcn
