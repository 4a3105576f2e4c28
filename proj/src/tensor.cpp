#include "grcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "grcn/error.hpp"

namespace grcn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_dims(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_size(shape_))
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size())
    throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " + shape_string(shape_));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range for shape " + shape_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[flat_index(index)]; }

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_size(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  check_dims(shape);
  shape_ = std::move(shape);
  return std::move(*this);
}

Tensor Tensor::slice0(std::size_t index) const {
  if (shape_.empty() || index >= shape_[0])
    throw DimensionError("slice0 index out of range for shape " + shape_string(shape_));
  Shape sub(shape_.begin() + 1, shape_.end());
  const std::size_t n = shape_size(sub);
  auto first = data_.begin() + static_cast<std::ptrdiff_t>(index * n);
  return Tensor(std::move(sub), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack0(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack0 of an empty list");
  const Shape& inner = parts.front().shape();
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const auto& p : parts) {
    if (p.shape() != inner)
      throw DimensionError("stack0 shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(inner));
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace grcn
