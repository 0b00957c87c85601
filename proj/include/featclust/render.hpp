#pragma once

#include <span>
#include <vector>

#include "featclust/cell_grid.hpp"
#include "featclust/image.hpp"
#include "featclust/manifest.hpp"

namespace featclust {

/// One display color per class; unassigned cells are transparent.
struct Palette {
  std::vector<Rgb> colors;

  /// Ten fixed distinct hues, extended with golden-angle hues beyond ten.
  static Palette default_for(int k);
  const Rgb& operator[](int cls) const { return colors.at(static_cast<std::size_t>(cls)); }
};

struct RenderOptions {
  /// Per-class intensity mapped to full opacity (nearest-rank quantile of
  /// the class's positive weights on the slide).
  double quantile = 0.99;
  /// Output pixels per lattice cell; 0 uses the grid's cell_size_px.
  int scale = 0;
};

/// Opacity in [0, 255] for weight w under normalization value q.
std::uint8_t heat_alpha(double weight, double q);

/// Normalization value of one class over the grid's present cells (0 when
/// the class has no positive weight).
double class_normalizer(const WeightGrid& weights, int cls, double quantile);

// Classes are 0-based here; file names and logs use 1-based numbering.
RgbaImage render_class_heatmap(const WeightGrid& weights, int cls, const Palette& palette,
                               const RenderOptions& options = {});

/// All classes over-composited in class order (class 1 at the bottom).
RgbaImage render_blended(const WeightGrid& weights, const Palette& palette,
                         const RenderOptions& options = {});

/// Solid color of the argmax class per cell; all-zero cells transparent.
RgbaImage render_clustering(const WeightGrid& weights, const Palette& palette,
                            const RenderOptions& options = {});

/// Alpha-composites the overlay onto the tissue image with an extra global
/// opacity. The overlay is upscaled (nearest neighbor) by the integer factor
/// tissue size / overlay size, which must agree on both axes.
RgbImage composite_over_tissue(const RgbaImage& overlay, const RgbImage& tissue, double opacity);

/// Pastes tile images onto a white canvas covering `bounds` at one image
/// pixel per slide pixel. `images[n]` belongs to manifest.tiles[n]; empty
/// images are skipped.
RgbImage build_tissue_mosaic(const SlideManifest& manifest, std::span<const RgbImage> images,
                             const GridBounds& bounds);

/// Box-filter downsampling by an integer factor (each output pixel is the
/// rounded mean of a factor x factor block). Dimensions must be divisible.
RgbImage downsample_box(const RgbImage& image, int factor);

}  // namespace featclust
