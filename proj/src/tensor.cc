#include "lcp/tensor.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "lcp/errors.h"

namespace lcp {

std::size_t shape_product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape product " +
                     std::to_string(shape_product(shape_)));
  }
}

std::size_t Tensor::row_size() const {
  return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0];
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t n = row_size();
  return std::span<double>(data_).subspan(i * n, n);
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t n = row_size();
  return std::span<const double>(data_).subspan(i * n, n);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace lcp
