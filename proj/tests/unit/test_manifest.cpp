#include <doctest.h>

#include "featclust/error.hpp"
#include "featclust/keyvalue.hpp"
#include "featclust/manifest.hpp"
#include "featclust/tensor_io.hpp"
#include "generators.hpp"

using namespace featclust;

namespace {

const char* kHeader =
    "slide_id = S1\n"
    "tile_size_px = 512\n"
    "stride_px = 256\n"
    "cell_size_px = 16\n"
    "level_downsample = 2\n";

void write_feature(const std::filesystem::path& p, std::uint32_t cells = 32, std::uint32_t c = 4) {
  write_tensor(Tensor({cells, cells, c}, DType::kNonNegative), p);
}

}  // namespace

TEST_SUITE("manifest") {
  TEST_CASE("tile on the stride lattice is accepted") {
    gen::TempDir dir("man");
    write_feature(dir / "a.clt");
    write_text_file(dir / "m.txt", std::string(kHeader) + "\n256 512 a.clt 1 0.9 -\n");
    const SlideManifest m = load_manifest(dir / "m.txt");
    REQUIRE(m.tiles.size() == 1);
    CHECK(m.slide_id == "S1");
    CHECK(m.tiles[0].origin_x_px == 256);
    CHECK(m.tiles[0].origin_y_px == 512);
    CHECK(m.tiles[0].label == 1);
    CHECK(m.tiles[0].prediction_score == doctest::Approx(0.9));
    CHECK_FALSE(m.tiles[0].gradient_path.has_value());
    CHECK(m.tiles[0].tensor_path == dir / "a.clt");
    CHECK(m.tensor_shape == TensorShape{32, 32, 4});
    CHECK(m.level_downsample == 2.0);
    CHECK(m.label_source == LabelSource::kModelPrediction);
    CHECK(m.cells_per_tile() == 32);
  }

  TEST_CASE("tile off the lattice is rejected") {
    gen::TempDir dir("man");
    write_feature(dir / "a.clt");
    write_text_file(dir / "m.txt", std::string(kHeader) + "\n100 0 a.clt\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir / "m.txt"), doctest::Contains("stride lattice"), ValidationError);
  }

  TEST_CASE("stride that does not divide the tile size is rejected") {
    SlideManifest m;
    m.slide_id = "S";
    m.stride_px = 300;
    CHECK_THROWS_AS(validate_geometry(m), ValidationError);
  }

  TEST_CASE("cell size must divide the tile size and the stride") {
    SlideManifest m;
    m.slide_id = "S";
    m.cell_size_px = 24;
    CHECK_THROWS_AS(validate_geometry(m), ValidationError);
    m.cell_size_px = 16;
    CHECK_NOTHROW(validate_geometry(m));
  }

  TEST_CASE("missing tensor file is reported") {
    gen::TempDir dir("man");
    write_text_file(dir / "m.txt", std::string(kHeader) + "\n0 0 nope.clt\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir / "m.txt"), doctest::Contains("nope.clt"), ValidationError);
  }

  TEST_CASE("tensor shape must match tile_size_px / cell_size_px") {
    gen::TempDir dir("man");
    write_feature(dir / "a.clt", 16);
    write_text_file(dir / "m.txt", std::string(kHeader) + "\n0 0 a.clt\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.txt"), ValidationError);
  }

  TEST_CASE("gradient tensor must have the feature shape") {
    gen::TempDir dir("man");
    write_feature(dir / "a.clt");
    write_tensor(Tensor({32, 32, 5}, DType::kSigned), dir / "g.clt");
    write_text_file(dir / "m.txt", std::string(kHeader) + "\n0 0 a.clt 0 0.1 g.clt\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.txt"), ValidationError);
  }

  TEST_CASE("channel counts must agree across tiles") {
    gen::TempDir dir("man");
    write_feature(dir / "a.clt", 32, 4);
    write_feature(dir / "b.clt", 32, 5);
    write_text_file(dir / "m.txt", std::string(kHeader) + "\n0 0 a.clt\n256 0 b.clt\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.txt"), ValidationError);
  }

  TEST_CASE("duplicate origins are rejected") {
    gen::TempDir dir("man");
    write_feature(dir / "a.clt");
    write_text_file(dir / "m.txt", std::string(kHeader) + "\n0 0 a.clt\n0 0 a.clt\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.txt"), ValidationError);
  }

  TEST_CASE("malformed lines and headers") {
    CHECK_THROWS_AS(parse_manifest(std::string(kHeader) + "\n0 0\n", ".", "m"), FormatError);
    CHECK_THROWS_AS(parse_manifest(std::string(kHeader) + "\n0 x a.clt\n", ".", "m"), FormatError);
    CHECK_THROWS_AS(parse_manifest(std::string(kHeader) + "\n0 0 a.clt 2\n", ".", "m"), ValidationError);
    CHECK_THROWS_AS(parse_manifest("slide_id = S\n\n0 0 a.clt\n", ".", "m"), ValidationError);
    CHECK_THROWS_AS(parse_manifest(std::string(kHeader) + "label_source = maybe\n\n", ".", "m"), FormatError);
  }

  TEST_CASE("save then load reproduces the manifest") {
    gen::TempDir dir("man");
    std::filesystem::create_directories(dir / "tensors");
    write_feature(dir / "tensors" / "a.clt");
    write_feature(dir / "tensors" / "b.clt");
    write_tensor(Tensor({32, 32, 4}, DType::kSigned), dir / "g.clt");
    SlideManifest m;
    m.slide_id = "S9";
    m.level_downsample = 4.0;
    m.label_source = LabelSource::kAnnotation;
    m.tiles.push_back({0, 0, dir / "tensors" / "a.clt", 1, 0.75, dir / "g.clt", std::nullopt});
    m.tiles.push_back({256, 256, dir / "tensors" / "b.clt", std::nullopt, std::nullopt, std::nullopt, std::nullopt});
    save_manifest(m, dir / "m.txt");
    const std::string text = read_text_file(dir / "m.txt");
    CHECK(text.find("tensors/a.clt") != std::string::npos);
    const SlideManifest back = load_manifest(dir / "m.txt");
    CHECK(back.slide_id == "S9");
    CHECK(back.label_source == LabelSource::kAnnotation);
    CHECK(back.level_downsample == 4.0);
    REQUIRE(back.tiles.size() == 2);
    CHECK(back.tiles[0].label == 1);
    CHECK(back.tiles[0].prediction_score == 0.75);
    CHECK(back.tiles[0].gradient_path == dir / "g.clt");
    CHECK_FALSE(back.tiles[1].label.has_value());
    CHECK(back.tiles[1].tensor_path == dir / "tensors" / "b.clt");
  }

  TEST_CASE("key-value parsing") {
    const KeyValues kv = KeyValues::parse("# comment\na = 1\n b=2.5 \n", "test");
    CHECK(kv.get_int("a") == 1);
    CHECK(kv.get_double("b") == 2.5);
    CHECK(kv.get_or("c", "x") == "x");
    CHECK_THROWS_AS(kv.get("c"), ValidationError);
    CHECK_THROWS_AS(KeyValues::parse("a = 1\na = 2\n", "test"), FormatError);
    CHECK_THROWS_AS(KeyValues::parse("no equals sign\n", "test"), FormatError);
    CHECK_THROWS_AS(parse_int("12x", "n"), FormatError);
    CHECK(parse_double(format_double(0.1 + 0.2), "x") == 0.1 + 0.2);
  }
}
