#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "featclust/tensor.hpp"

namespace featclust {

enum class LabelSource { kModelPrediction, kAnnotation, kNone };

std::string to_string(LabelSource source);
LabelSource parse_label_source(const std::string& text);

struct TileRecord {
  std::int64_t origin_x_px = 0;
  std::int64_t origin_y_px = 0;
  std::filesystem::path tensor_path;
  /// 1 = the model predicts cancer.
  std::optional<int> label;
  std::optional<double> prediction_score;
  std::optional<std::filesystem::path> gradient_path;
  /// RGB tile image used by the tissue filter and for compositing.
  std::optional<std::filesystem::path> image_path;
};

struct SlideManifest {
  std::string slide_id;
  /// Bookkeeping only; no computation depends on it.
  double level_downsample = 1.0;
  std::int64_t tile_size_px = 512;
  std::int64_t stride_px = 256;
  std::int64_t cell_size_px = 16;
  LabelSource label_source = LabelSource::kNone;
  /// Feature-map shape shared by every tile (filled in by load_manifest).
  TensorShape tensor_shape;
  std::vector<TileRecord> tiles;

  std::int64_t cells_per_tile() const { return tile_size_px / cell_size_px; }
};

/// Checks geometry only (no file access): lattice alignment, divisibility and
/// duplicate origins. Throws ValidationError.
void validate_geometry(const SlideManifest& manifest);

/// Parses a manifest. Relative paths resolve against the manifest's directory.
/// Tensor headers are read to verify shapes; payloads are not loaded.
SlideManifest load_manifest(const std::filesystem::path& path);

SlideManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                             const std::string& origin);

/// Writes paths relative to the manifest's directory when they live under it.
void save_manifest(const SlideManifest& manifest, const std::filesystem::path& path);

}  // namespace featclust
