#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "featclust/cell_grid.hpp"
#include "featclust/manifest.hpp"
#include "featclust/nmf.hpp"
#include "featclust/tensor.hpp"

namespace featclust {

/// Default width, in feature cells, of the discarded tile outline.
inline constexpr int kDefaultMargin = 2;

/// Lattice cell of feature location (i, j) of a tile. Throws ValidationError
/// when the tile origin is not a multiple of the cell size.
CellCoord cell_to_slide_coords(const TileRecord& tile, std::int64_t i, std::int64_t j,
                               std::int64_t cell_size_px);

struct TrimmedTensor {
  Tensor interior;
  /// Offset of interior(0, 0) inside the original tensor, on both axes.
  int offset = 0;
};

TrimmedTensor trim_border(const Tensor& tensor, int margin = kDefaultMargin);

/// Lattice cells of a tile's trimmed interior, in the interior's row-major order.
std::vector<CellCoord> tile_interior_cells(const SlideManifest& manifest, const TileRecord& tile,
                                           int margin);

/// Averages trimmed per-tile feature vectors onto the slide lattice.
/// `tensors[n]` belongs to `manifest.tiles[n]`. Sums are accumulated in
/// double precision in a canonical tile order, so the result is bit-identical
/// for every tile permutation and thread count.
SlideFeatureGrid aggregate_slide(const SlideManifest& manifest, std::span<const Tensor> tensors,
                                 int margin = kDefaultMargin, int threads = 1);

/// Same as aggregate_slide for one-channel tile maps (e.g. GradCAM).
SlideSaliencyGrid aggregate_scalar_maps(const SlideManifest& manifest,
                                        std::span<const Tensor> maps, int margin,
                                        int threads = 1);

struct EquivarianceProbe {
  /// Mean cosine similarity between feature vectors that different tiles
  /// produce for the same lattice cell; nullopt without overlapping cells.
  std::optional<double> mean_cosine;
  std::size_t pairs = 0;
};

/// Diagnostic: how consistent overlapping tiles are about shared locations.
EquivarianceProbe equivariance_probe(const SlideManifest& manifest,
                                     std::span<const Tensor> tensors, int margin);

struct SlideInference {
  WeightGrid weights;
  InferResult details;
};

/// Fixed-basis inference on every present cell of a feature grid.
SlideInference infer_slide_weights(const SlideFeatureGrid& grid, const FactorModel& model,
                                   const InferConfig& config);

}  // namespace featclust
