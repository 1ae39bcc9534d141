#pragma once

// Dense row-major kernels for the forward/backward passes.
//
// Shared-model contract: the global model is mutated by many threads with no
// locking. Every scalar load/store on shared storage goes through
// std::atomic_ref with relaxed ordering, so a reader can see a mix of update
// generations across a matrix but never a torn double.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "hetsgd/errors.hpp"

namespace hetsgd {

/// Read-only, non-owning view of a row-major block.
struct MatrixView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> values() const { return {data, rows * cols}; }
  std::span<const double> row(std::size_t r) const { return {data + r * cols, cols}; }

  MatrixView rowRange(std::size_t first, std::size_t count) const {
    detail::require(first + count <= rows, "row range exceeds view");
    return {data + first * cols, count, cols};
  }
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(data_.size() == rows_ * cols_, "data length must equal rows * cols");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ == 0 ? 0 : init.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
      detail::require(r.size() == cols_, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }
  explicit Matrix(MatrixView v) : rows_(v.rows), cols_(v.cols), data_(v.data, v.data + v.rows * v.cols) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  MatrixView view() const noexcept { return {data_.data(), rows_, cols_}; }
  operator MatrixView() const noexcept { return view(); }  // NOLINT(google-explicit-constructor)

  bool sameShape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Plain loads for worker-private data.
struct PrivateAccess {
  static double load(const double& x) noexcept { return x; }
};

/// Word-atomic relaxed loads for the concurrently mutated global model.
struct SharedAccess {
  static double load(const double& x) noexcept {
    // atomic_ref<const T> is C++26; the object is never written through this ref.
    return std::atomic_ref<double>(const_cast<double&>(x)).load(std::memory_order_relaxed);
  }
};

inline void storeShared(double& x, double v) noexcept {
  std::atomic_ref<double>(x).store(v, std::memory_order_relaxed);
}

/// Dense product op(a) * op(b). Each output element accumulates its inner
/// products in increasing k order, whichever loop nest is used, so results
/// are bit-identical across layouts.
template <class Access = PrivateAccess>
Matrix gemm(MatrixView a, MatrixView b, bool transposeA = false, bool transposeB = false) {
  const std::size_t m = transposeA ? a.cols : a.rows;
  const std::size_t inner = transposeA ? a.rows : a.cols;
  const std::size_t innerB = transposeB ? b.cols : b.rows;
  const std::size_t n = transposeB ? b.rows : b.cols;
  if (inner != innerB) throw PreconditionError("gemm: inner dimensions disagree");

  Matrix c(m, n);
  double* out = c.raw();
  auto opA = [&](std::size_t i, std::size_t k) {
    return Access::load(transposeA ? a.data[k * a.cols + i] : a.data[i * a.cols + k]);
  };

  if (transposeB) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b.data + j * b.cols;
        double s = 0.0;
        for (std::size_t k = 0; k < inner; ++k) s += opA(i, k) * Access::load(bj[k]);
        out[i * n + j] = s;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = out + i * n;
      for (std::size_t k = 0; k < inner; ++k) {
        const double aik = opA(i, k);
        const double* bk = b.data + k * b.cols;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aik * Access::load(bk[j]);
      }
    }
  }
  return c;
}

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

inline Matrix sigmoid(MatrixView m) {
  Matrix out(m.rows, m.cols);
  std::ranges::transform(m.values(), out.values().begin(), [](double x) { return sigmoid(x); });
  return out;
}

inline void sigmoidInPlace(Matrix& m) noexcept {
  for (double& x : m.values()) x = sigmoid(x);
}

/// s * (1 - s), for s already passed through the sigmoid.
inline Matrix sigmoidDerivFromOutput(MatrixView s) {
  Matrix out(s.rows, s.cols);
  std::ranges::transform(s.values(), out.values().begin(), [](double v) { return v * (1.0 - v); });
  return out;
}

inline void softmaxRowsInPlace(Matrix& m) noexcept {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double* row = m.raw() + r * m.cols();
    const double mx = *std::max_element(row, row + m.cols());
    double sum = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] /= sum;
  }
}

inline Matrix softmaxRows(MatrixView m) {
  Matrix out(m);
  softmaxRowsInPlace(out);
  return out;
}

/// target += scale * source. Stores are word-atomic so target may be the
/// shared global model; there is no ordering between elements.
inline void axpyInPlace(Matrix& target, MatrixView source, double scale) {
  if (target.rows() != source.rows || target.cols() != source.cols)
    throw PreconditionError("axpyInPlace: shape mismatch");
  double* t = target.raw();
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double cur = SharedAccess::load(t[i]);
    storeShared(t[i], cur + scale * source.data[i]);
  }
}

/// Copy that tolerates concurrent axpyInPlace on the source.
inline Matrix snapshot(const Matrix& shared) {
  Matrix out(shared.rows(), shared.cols());
  const double* s = shared.raw();
  double* o = out.raw();
  for (std::size_t i = 0; i < shared.size(); ++i) o[i] = SharedAccess::load(s[i]);
  return out;
}

}  // namespace hetsgd
