#include "polypforge/nn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "polypforge/error.hpp"

namespace polypforge::nn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_numel(shape_) == static_cast<std::int64_t>(data_.size()),
          ErrorKind::size_mismatch,
          "tensor data length does not match shape " + shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == numel(), ErrorKind::size_mismatch,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_batch(std::int64_t begin, std::int64_t end) const {
  require(!shape_.empty() && begin >= 0 && begin <= end && end <= shape_[0],
          ErrorKind::invalid_argument, "batch slice out of range");
  const std::int64_t stride = shape_[0] == 0 ? 0 : numel() / shape_[0];
  Shape shape = shape_;
  shape[0] = end - begin;
  std::vector<double> data(data_.begin() + begin * stride, data_.begin() + end * stride);
  return Tensor(std::move(shape), std::move(data));
}

Tensor concat_batch(std::span<const Tensor> parts) {
  require(!parts.empty(), ErrorKind::empty_input, "concat_batch of nothing");
  Shape shape = parts.front().shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == shape.size() &&
                std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1),
            ErrorKind::size_mismatch, "concat_batch shape mismatch");
    total += p.dim(0);
  }
  shape[0] = total;
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(shape_numel(shape)));
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace polypforge::nn
