#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace featclust {

/// Element contract of a stored tensor. Feature tensors hold post-ReLU
/// activations and must be non-negative; gradient tensors are signed.
enum class DType : std::uint8_t {
  kNonNegative = 0,
  kSigned = 1,
};

struct TensorShape {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;

  std::size_t cells() const { return std::size_t{height} * width; }
  std::size_t elements() const { return cells() * channels; }
  bool operator==(const TensorShape&) const = default;
};

/// Dense h x w x C grid of 32-bit floats in row-major (i, j, c) order.
///
/// Construction validates the element contract: every value is finite, and
/// kNonNegative tensors contain no negative values.
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  Tensor(TensorShape shape, DType dtype);
  Tensor(TensorShape shape, DType dtype, std::vector<float> data);

  const TensorShape& shape() const { return shape_; }
  std::uint32_t height() const { return shape_.height; }
  std::uint32_t width() const { return shape_.width; }
  std::uint32_t channels() const { return shape_.channels; }
  DType dtype() const { return dtype_; }

  std::span<const float> data() const { return data_; }

  float at(std::size_t i, std::size_t j, std::size_t c) const {
    return data_[index(i, j, c)];
  }
  /// Unchecked write; callers keep the dtype contract (see validate()).
  void set(std::size_t i, std::size_t j, std::size_t c, float value) {
    data_[index(i, j, c)] = value;
  }

  /// Channel vector at spatial location (i, j).
  std::span<const float> vector_at(std::size_t i, std::size_t j) const {
    return std::span<const float>(data_).subspan(index(i, j, 0), shape_.channels);
  }
  std::span<float> mutable_vector_at(std::size_t i, std::size_t j) {
    return std::span<float>(data_).subspan(index(i, j, 0), shape_.channels);
  }

  /// Re-checks the dtype contract after in-place edits. Throws ValidationError.
  void validate() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t index(std::size_t i, std::size_t j, std::size_t c) const {
    return (i * shape_.width + j) * shape_.channels + c;
  }

  TensorShape shape_;
  DType dtype_ = DType::kNonNegative;
  std::vector<float> data_;
};

}  // namespace featclust
