#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tinyclap/errors.hpp"

namespace tinyclap {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense row-major n-d array. A rank-0 tensor (empty shape) holds one value.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using MatrixMap = Eigen::Map<RowMajorMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMajorMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector<Scalar>::Zero(shape_size(shape_))) {}

  Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
      throw ContractError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                          to_string(shape_));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    data_.resize(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), data_.data());
    if (shape_size(shape_) != data_.size())
      throw ContractError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                          to_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }
  static Tensor scalar(Scalar value) { return Tensor(Shape{}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)); }
  Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return shape_.empty() && data_.size() == 0; }

  Vector<Scalar>& data() noexcept { return data_; }
  const Vector<Scalar>& data() const noexcept { return data_; }
  Scalar* raw() noexcept { return data_.data(); }
  const Scalar* raw() const noexcept { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Value of a rank-0 (or single-element) tensor.
  Scalar item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  /// View the flat buffer as a rows x cols row-major matrix.
  MatrixMap matrix(Index rows, Index cols) { return MatrixMap(raw(), rows, cols); }
  ConstMatrixMap matrix(Index rows, Index cols) const { return ConstMatrixMap(raw(), rows, cols); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ContractError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_.size() == b.data_.size() &&
           std::equal(a.raw(), a.raw() + a.size(), b.raw());
  }

 private:
  Shape shape_;
  Vector<Scalar> data_;
};

/// Throws a ContractError naming both shapes when they differ.
inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ContractError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const std::string& where) {
  if (!t.all_finite()) throw NumericError(where + ": non-finite values in output of shape " + to_string(t.shape()));
}

}  // namespace tinyclap
