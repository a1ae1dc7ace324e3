#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace skd {

using Index = Eigen::Index;
using Complex = std::complex<double>;

// Row-major to match Tensor's storage, so a Tensor slab maps onto a Matrix
// without reordering.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using ComplexMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ComplexVector = Eigen::VectorXcd;

// Declared value range of observations. Unit-range data is decoded through a
// sigmoid.
enum class ValueRange { unit, unbounded };

// Dense float64 array with a shape. Values are always finite; construction
// rejects NaN and infinities.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor zeros(std::vector<std::size_t> shape);
  // 2-D tensor holding the matrix entries.
  static Tensor from_matrix(const Matrix& m);
  // Tensor with the given shape whose row-major data is taken from m.
  static Tensor from_matrix(const Matrix& m, std::vector<std::size_t> shape);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<const double> values() const noexcept { return values_; }
  const double* data() const noexcept { return values_.data(); }

  double at(std::initializer_list<std::size_t> index) const;

  // Views the data as rows x cols, where rows * cols == size().
  Eigen::Map<const Matrix> as_matrix(Index rows, Index cols) const;
  // Views a rank-2 tensor as a matrix; a rank-3 tensor (a, b, c) as (a*b) x c.
  Eigen::Map<const Matrix> as_matrix() const;

  Tensor reshaped(std::vector<std::size_t> shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

// Throws NumericError naming `what` when any entry is not finite.
void require_finite(const Matrix& m, const char* what);
void require_finite(const ComplexMatrix& m, const char* what);

}  // namespace skd
