#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace polypforge::nn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Images use NCHW layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  Tensor reshaped(Shape shape) const;

  /// Copies samples [begin, end) along the leading axis.
  Tensor slice_batch(std::int64_t begin, std::int64_t end) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Concatenates tensors along the leading (batch) axis.
Tensor concat_batch(std::span<const Tensor> parts);

}  // namespace polypforge::nn
