#include "skd/tensor.hpp"

#include "skd/error.hpp"

#include <cmath>
#include <string>

namespace skd {

std::size_t shape_product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_product(shape_) != values_.size()) {
    throw ShapeError("tensor shape product " + std::to_string(shape_product(shape_)) +
                     " does not match value count " + std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw NumericError("tensor value at flat index " + std::to_string(i) + " is not finite");
    }
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  auto n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::from_matrix(const Matrix& m) {
  return from_matrix(m, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
}

Tensor Tensor::from_matrix(const Matrix& m, std::vector<std::size_t> shape) {
  std::vector<double> values(m.data(), m.data() + m.size());
  return Tensor(std::move(shape), std::move(values));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range");
  return shape_[axis];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank does not match tensor rank");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return values_[flat];
}

Eigen::Map<const Matrix> Tensor::as_matrix(Index rows, Index cols) const {
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != values_.size()) {
    throw ShapeError("cannot view tensor of size " + std::to_string(values_.size()) + " as " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  return {values_.data(), rows, cols};
}

Eigen::Map<const Matrix> Tensor::as_matrix() const {
  if (shape_.size() == 2) return as_matrix(Index(shape_[0]), Index(shape_[1]));
  if (shape_.size() == 3) return as_matrix(Index(shape_[0] * shape_[1]), Index(shape_[2]));
  throw ShapeError("as_matrix needs a rank-2 or rank-3 tensor, got rank " +
                   std::to_string(shape_.size()));
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_product(shape) != values_.size()) throw ShapeError("reshape changes element count");
  Tensor out;
  out.shape_ = std::move(shape);
  out.values_ = values_;
  return out;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + " contains non-finite values");
}

void require_finite(const ComplexMatrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + " contains non-finite values");
}

}  // namespace skd
