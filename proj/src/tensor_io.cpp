#include "featclust/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "featclust/error.hpp"

namespace featclust {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'L', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFU));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

TensorHeader parse_header(const unsigned char* bytes, const std::filesystem::path& path) {
  if (std::memcmp(bytes, kMagic.data(), kMagic.size()) != 0) {
    throw FormatError(path.string() + ": bad magic, not a CLT1 tensor");
  }
  TensorHeader header;
  header.shape.height = get_u32(bytes + 4);
  header.shape.width = get_u32(bytes + 8);
  header.shape.channels = get_u32(bytes + 12);
  const unsigned tag = bytes[16];
  if (tag > 1) {
    throw FormatError(path.string() + ": unknown dtype tag " + std::to_string(tag));
  }
  header.dtype = static_cast<DType>(tag);
  if (header.shape.elements() == 0) {
    throw FormatError(path.string() + ": zero-sized dimension in header");
  }
  return header;
}

}  // namespace

void write_tensor(const Tensor& tensor, const std::filesystem::path& path) {
  tensor.validate();
  const auto& shape = tensor.shape();
  std::string buffer;
  buffer.reserve(kTensorHeaderBytes + shape.elements() * 4);
  buffer.append(kMagic.data(), kMagic.size());
  put_u32(buffer, shape.height);
  put_u32(buffer, shape.width);
  put_u32(buffer, shape.channels);
  buffer.push_back(static_cast<char>(tensor.dtype()));
  for (float v : tensor.data()) put_u32(buffer, std::bit_cast<std::uint32_t>(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

TensorHeader read_tensor_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor " + path.string());
  std::array<unsigned char, kTensorHeaderBytes> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError(path.string() + ": truncated header");
  }
  return parse_header(bytes.data(), path);
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kTensorHeaderBytes) throw FormatError(path.string() + ": truncated header");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const TensorHeader header = parse_header(raw, path);

  const std::size_t count = header.shape.elements();
  const std::size_t expected = kTensorHeaderBytes + count * 4;
  if (bytes.size() < expected) {
    throw FormatError(path.string() + ": truncated payload (" + std::to_string(bytes.size()) +
                      " of " + std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) throw FormatError(path.string() + ": trailing bytes after payload");

  std::vector<float> data(count);
  for (std::size_t n = 0; n < count; ++n) {
    data[n] = std::bit_cast<float>(get_u32(raw + kTensorHeaderBytes + 4 * n));
  }
  try {
    return Tensor(header.shape, header.dtype, std::move(data));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace featclust
