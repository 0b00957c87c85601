#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "featclust/error.hpp"
#include "featclust/tensor_io.hpp"
#include "generators.hpp"

using namespace featclust;

namespace {

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("tensor_io") {
  TEST_CASE("1x1x2 tensor has the documented byte layout") {
    gen::TempDir dir("tio");
    write_tensor(Tensor({1, 1, 2}, DType::kNonNegative, {0.5F, 1.0F}), dir / "t.clt");
    const auto bytes = file_bytes(dir / "t.clt");
    const std::vector<unsigned char> expected = {'C', 'L', 'T', '1', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 0,
                                                 0x00, 0x00, 0x00, 0x3F, 0x00, 0x00, 0x80, 0x3F};
    CHECK(bytes == expected);
    CHECK(bytes.size() == kTensorHeaderBytes + 8);
  }

  TEST_CASE("32x32x512 tensor payload is 2,097,152 bytes") {
    gen::TempDir dir("tio");
    write_tensor(Tensor({32, 32, 512}, DType::kNonNegative), dir / "big.clt");
    CHECK(std::filesystem::file_size(dir / "big.clt") == kTensorHeaderBytes + 2097152);
  }

  TEST_CASE("round trip is bit-exact for random tensors") {
    gen::TempDir dir("tio");
    gen::Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const auto dtype = rng.coin() ? DType::kSigned : DType::kNonNegative;
      std::vector<float> data(static_cast<std::size_t>(rng.integer(1, 5)) * 3 * 2);
      for (float& x : data) {
        // Include subnormals, signed zeros and extreme magnitudes.
        switch (rng.integer(0, 4)) {
          case 0: x = std::numeric_limits<float>::denorm_min() * static_cast<float>(rng.integer(1, 100)); break;
          case 1: x = dtype == DType::kSigned ? -0.0F : 0.0F; break;
          case 2: x = std::numeric_limits<float>::max() / static_cast<float>(rng.integer(1, 10)); break;
          default: x = static_cast<float>(rng.uniform(0.0, 1e6)); break;
        }
        if (dtype == DType::kSigned && rng.coin()) x = -x;
      }
      const auto h = static_cast<std::uint32_t>(data.size() / 6);
      const Tensor t({h, 3, 2}, dtype, data);
      write_tensor(t, dir / "r.clt");
      const Tensor back = read_tensor(dir / "r.clt");
      REQUIRE(back.shape() == t.shape());
      CHECK(back.dtype() == t.dtype());
      CHECK(std::memcmp(back.data().data(), t.data().data(), t.data().size() * sizeof(float)) == 0);
    }
  }

  TEST_CASE("header-only read") {
    gen::TempDir dir("tio");
    write_tensor(Tensor({4, 5, 6}, DType::kSigned), dir / "h.clt");
    const TensorHeader h = read_tensor_header(dir / "h.clt");
    CHECK(h.shape == TensorShape{4, 5, 6});
    CHECK(h.dtype == DType::kSigned);
  }

  TEST_CASE("NaN and infinity are rejected") {
    CHECK_THROWS_AS(Tensor({1, 1, 1}, DType::kSigned, {std::nanf("")}), ValidationError);
    CHECK_THROWS_AS(Tensor({1, 1, 1}, DType::kSigned, {std::numeric_limits<float>::infinity()}), ValidationError);
  }

  TEST_CASE("non-negative tensors reject negative values") {
    CHECK_THROWS_AS(Tensor({1, 1, 1}, DType::kNonNegative, {-1.0F}), ValidationError);
    CHECK_NOTHROW(Tensor({1, 1, 1}, DType::kSigned, {-1.0F}));
  }

  TEST_CASE("zero dimensions and wrong data length are rejected") {
    CHECK_THROWS_AS(Tensor({0, 1, 1}, DType::kNonNegative), ValidationError);
    CHECK_THROWS_AS(Tensor({1, 1, 2}, DType::kNonNegative, {1.0F}), ValidationError);
  }

  TEST_CASE("malformed files") {
    gen::TempDir dir("tio");
    write_tensor(Tensor({1, 1, 2}, DType::kNonNegative, {0.5F, 1.0F}), dir / "ok.clt");
    const auto good = file_bytes(dir / "ok.clt");

    SUBCASE("bad magic is a format error") {
      auto b = good;
      std::memcpy(b.data(), "XXXX", 4);
      write_bytes(dir / "bad.clt", b);
      CHECK_THROWS_AS(read_tensor(dir / "bad.clt"), FormatError);
    }
    SUBCASE("truncated payload") {
      auto b = good;
      b.pop_back();
      write_bytes(dir / "bad.clt", b);
      CHECK_THROWS_AS(read_tensor(dir / "bad.clt"), FormatError);
    }
    SUBCASE("truncated header") {
      write_bytes(dir / "bad.clt", std::vector<unsigned char>(good.begin(), good.begin() + 10));
      CHECK_THROWS_AS(read_tensor_header(dir / "bad.clt"), FormatError);
    }
    SUBCASE("trailing bytes") {
      auto b = good;
      b.push_back(0);
      write_bytes(dir / "bad.clt", b);
      CHECK_THROWS_AS(read_tensor(dir / "bad.clt"), FormatError);
    }
    SUBCASE("unknown dtype tag") {
      auto b = good;
      b[16] = 7;
      write_bytes(dir / "bad.clt", b);
      CHECK_THROWS_AS(read_tensor(dir / "bad.clt"), FormatError);
    }
    SUBCASE("dtype 0 containing -1.0 is a validation error") {
      auto b = good;
      const float minus_one = -1.0F;
      std::memcpy(b.data() + 17, &minus_one, 4);
      write_bytes(dir / "bad.clt", b);
      CHECK_THROWS_AS(read_tensor(dir / "bad.clt"), ValidationError);
    }
    SUBCASE("missing file is an I/O error") {
      CHECK_THROWS_AS(read_tensor(dir / "absent.clt"), IoError);
    }
  }

  TEST_CASE("writer refuses tensors that break the contract after in-place edits") {
    gen::TempDir dir("tio");
    Tensor t({1, 1, 1}, DType::kNonNegative);
    t.set(0, 0, 0, -2.0F);
    CHECK_THROWS_AS(write_tensor(t, dir / "x.clt"), ValidationError);
    t.set(0, 0, 0, std::nanf(""));
    CHECK_THROWS_AS(write_tensor(t, dir / "x.clt"), ValidationError);
  }
}
