#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "featclust/stats.hpp"
#include "featclust/tensor.hpp"

namespace featclust {

/// Rectified GradCAM intensities on a tile's feature lattice.
struct SaliencyGrid {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major, >= 0

  float at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }
  /// One-channel non-negative tensor, e.g. for trimming and aggregation.
  Tensor to_tensor() const;
};

/// GradCAM: alpha_c is the spatial mean of the gradient in channel c and
/// out(i, j) = max(0, sum_c alpha_c * A(i, j, c)). No normalization.
SaliencyGrid gradcam(const Tensor& activations, const Tensor& gradients);

struct IouResult {
  double iou = 0.0;
  /// Neither map had a positive cell; iou is reported as 0.
  bool empty_union = false;
};

/// IoU of {w > eps} and {s > eps} over aligned cells.
IouResult iou_positive(std::span<const double> class_weights, std::span<const double> saliency,
                       double eps = 0.0);

/// One tile's aligned maps: `weights` is cells x K row-major.
struct TileComparison {
  int label = 0;  // predicted label, 1 = cancer
  int k = 0;
  std::vector<double> weights;
  std::vector<double> saliency;

  std::size_t cells() const { return saliency.size(); }
  std::vector<double> class_map(int cls) const;
};

/// Zeroes class weights at or below their class threshold and saliency at or
/// below `saliency_threshold`, so the strict > 0 tests downstream apply them.
void suppress_small_values(TileComparison& tile, std::span<const double> class_thresholds,
                           double saliency_threshold);

struct ClassCorrelation {
  RunningStats benign;
  RunningStats cancer;
  /// Tiles skipped because either map was constant.
  std::size_t skipped_benign = 0;
  std::size_t skipped_cancer = 0;
};

/// Per-class Pearson correlation between class weights and saliency, computed
/// per tile and summarized (mean, std) within each predicted-label group.
std::vector<ClassCorrelation> saliency_correlation(std::span<const TileComparison> tiles, int k);

struct ClassComparison {
  RunningStats iou;
  std::size_t empty_union = 0;
  ClassCorrelation correlation;
};

struct ComparisonReport {
  int k = 0;
  std::size_t tiles = 0;
  std::vector<ClassComparison> classes;
};

ComparisonReport compare_saliency(std::span<const TileComparison> tiles, int k, double eps = 0.0);

/// Tab-separated table: class, IoU mean/std, benign and cancer correlation
/// mean/std, plus the bookkeeping counts. Classes are 1-based.
std::string format_comparison_tsv(const ComparisonReport& report);

}  // namespace featclust
