#pragma once

#include <filesystem>

#include "featclust/tensor.hpp"

namespace featclust {

// CLT1 layout (all little-endian):
//   bytes 0..3   magic "CLT1"
//   bytes 4..15  u32 height, u32 width, u32 channels
//   byte  16     dtype tag (0 = non-negative f32, 1 = signed f32)
//   then height*width*channels f32 values in (i, j, c) order.
inline constexpr std::size_t kTensorHeaderBytes = 17;

struct TensorHeader {
  TensorShape shape;
  DType dtype = DType::kNonNegative;
};

void write_tensor(const Tensor& tensor, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

/// Reads only the fixed-size header; used to validate manifests without
/// loading payloads.
TensorHeader read_tensor_header(const std::filesystem::path& path);

}  // namespace featclust
