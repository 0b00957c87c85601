#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "featclust/cell_grid.hpp"
#include "featclust/image.hpp"
#include "featclust/keyvalue.hpp"
#include "featclust/manifest.hpp"
#include "featclust/nmf.hpp"
#include "featclust/tensor.hpp"

namespace featclust {

// ---------------------------------------------------------------------------
// Planted factorization V = max(0, W* H* + noise)

struct PlantedSpec {
  std::uint64_t seed = 1;
  int rows = 500;
  int channels = 64;
  int k = 6;
  double noise_sigma = 0.0;
  /// Probability that a row carries a second, weaker class.
  double secondary_prob = 0.5;
  /// Fraction of basis entries forced to zero.
  double basis_sparsity = 0.3;
};

struct PlantedMatrix {
  Matrix V;
  Matrix W;  // rows x k
  Matrix H;  // k x channels, unit-norm rows
  /// Class with the largest planted weight in each row.
  std::vector<int> dominant;
};

PlantedMatrix gen_planted_matrix(const PlantedSpec& spec);

/// Permutation mapping learned classes to planted classes (out[learned] =
/// planted) that maximizes the summed cosine similarity of the class vectors.
/// Exhaustive up to K = 8, greedy beyond.
std::vector<int> match_classes(const Matrix& learned_basis, const Matrix& planted_basis);

// ---------------------------------------------------------------------------
// Synthetic slides

enum class FeatureSource { kPlanted, kExtractor };

struct SynthSpec {
  std::uint64_t seed = 7;
  int n_slides = 8;
  /// Tiles per slide, laid out row-major on a square-ish stride lattice.
  int n_tiles = 36;
  int tile_size_px = 512;
  int stride_px = 256;
  /// Feature cells per tile side (w = h).
  int cells = 32;
  int channels = 64;
  int k = 6;
  double noise_sigma = 0.02;
  /// Strength of the component shared by classes with the same label sign.
  double basis_overlap = 0.15;
  /// Per-channel multiplicative distortion of each tile's outer ring.
  double border_jitter = 0.3;
  int border_width = 2;
  /// Probability that a region is background (no tissue).
  double background_fraction = 0.15;
  /// Regions per slide; 0 derives the count from region_density.
  int regions = 0;
  /// Regions per tile area when `regions` is 0.
  double region_density = 1.0;
  /// Positive-label classes a slide may contain (rotating across slides);
  /// 0 allows all of them. Other classes may appear on every slide.
  int slide_positive_classes = 1;
  /// Share of tissue regions drawn from the slide's positive classes.
  double positive_fraction = 0.4;
  /// Linear label rule over the tile's mean planted class intensities.
  std::vector<double> label_weights{-0.4, 0.4, -0.4, 0.5, 0.4, -0.4};
  double label_threshold = 0.1;
  /// Spread of the zero-mean spatial perturbation added to gradients.
  double gradient_noise = 0.5;
  bool write_gradients = true;
  bool write_images = true;
  FeatureSource feature_source = FeatureSource::kPlanted;

  void validate() const;
  static SynthSpec from_keyvalues(const KeyValues& kv);
  std::string to_text() const;
};

struct SynthSlide {
  /// Tile paths are relative ("tensors/t000.clt", ...) until written.
  SlideManifest manifest;
  std::vector<Tensor> features;
  std::vector<Tensor> gradients;  // empty when write_gradients is false
  std::vector<RgbImage> images;   // empty when write_images is false
  /// Lattice covered by the tiles and the planted class of each cell in
  /// row-major order (-1 = background).
  GridBounds lattice;
  std::vector<int> truth_class;
  /// Planted intensity of the cell's class (0 for background).
  std::vector<double> truth_intensity;

  int truth_at(const CellCoord& c) const;
};

struct SynthDataset {
  SynthSpec spec;
  Matrix planted_basis;
  /// Direction whose dot product with a feature vector gives the planted
  /// saliency; the gradients' spatial mean equals it.
  Eigen::VectorXd saliency_direction;
  std::vector<SynthSlide> slides;
};

/// Unit-norm K x C basis: one channel block per class plus a shared component
/// within each label-sign group.
Matrix synth_basis(const SynthSpec& spec);

SynthSlide gen_slide(const SynthSpec& spec, const Matrix& basis,
                     const Eigen::VectorXd& saliency_direction, int slide_index);

SynthDataset gen_dataset(const SynthSpec& spec);

/// Writes <dir>/synth_spec.txt, planted_basis.clt, truth.tsv and one
/// directory per slide holding manifest.txt, tensors/, gradients/, images/.
/// Returns the manifest paths.
std::vector<std::filesystem::path> write_dataset(const SynthDataset& data,
                                                 const std::filesystem::path& dir);

/// RGB tile of the slide's region texture at the given origin.
RgbImage render_synth_tile(const SynthSpec& spec, const SynthSlide& slide, std::int64_t origin_x,
                           std::int64_t origin_y);

// ---------------------------------------------------------------------------
// Toy convolutional feature extractor

/// Fixed random filters: 3x3 conv + ReLU + 4x4 average pool, twice, then a
/// 1x1 conv + ReLU. Edge-replicate padding, so constant inputs give constant
/// outputs. Downsamples by 16.
class ToyFeatureExtractor {
 public:
  static constexpr int kDownsample = 16;

  ToyFeatureExtractor(std::uint64_t seed, int out_channels);

  Tensor operator()(const RgbImage& tile) const;
  int out_channels() const { return out_channels_; }

 private:
  int out_channels_;
  std::vector<float> conv1_;  // 8 x 3 x 3 x 3
  std::vector<float> conv2_;  // 16 x 8 x 3 x 3
  std::vector<float> conv3_;  // out x 16
};

}  // namespace featclust
