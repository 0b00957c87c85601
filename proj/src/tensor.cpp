#include "featclust/tensor.hpp"

#include <cmath>
#include <string>

#include "featclust/error.hpp"

namespace featclust {

namespace {

void check_shape(const TensorShape& shape) {
  if (shape.height == 0 || shape.width == 0 || shape.channels == 0) {
    throw ValidationError("tensor dimensions must be >= 1, got " +
                          std::to_string(shape.height) + "x" + std::to_string(shape.width) +
                          "x" + std::to_string(shape.channels));
  }
}

}  // namespace

Tensor::Tensor(TensorShape shape, DType dtype)
    : shape_(shape), dtype_(dtype), data_(shape.elements(), 0.0F) {
  check_shape(shape_);
}

Tensor::Tensor(TensorShape shape, DType dtype, std::vector<float> data)
    : shape_(shape), dtype_(dtype), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_.elements()) {
    throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape (" + std::to_string(shape_.elements()) + ")");
  }
  validate();
}

void Tensor::validate() const {
  for (std::size_t n = 0; n < data_.size(); ++n) {
    const float v = data_[n];
    if (!std::isfinite(v)) {
      throw ValidationError("tensor element " + std::to_string(n) + " is not finite");
    }
    if (dtype_ == DType::kNonNegative && v < 0.0F) {
      throw ValidationError("non-negative tensor has negative element " + std::to_string(n) +
                            " (" + std::to_string(v) + ")");
    }
  }
}

}  // namespace featclust
