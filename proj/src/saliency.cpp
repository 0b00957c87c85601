#include "featclust/saliency.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "featclust/error.hpp"

namespace featclust {

Tensor SaliencyGrid::to_tensor() const {
  return Tensor({static_cast<std::uint32_t>(height), static_cast<std::uint32_t>(width), 1},
                DType::kNonNegative, values);
}

SaliencyGrid gradcam(const Tensor& activations, const Tensor& gradients) {
  if (activations.shape() != gradients.shape()) {
    throw ValidationError("gradcam: activation and gradient shapes differ");
  }
  if (activations.dtype() != DType::kNonNegative) {
    throw ValidationError("gradcam: activations must be a non-negative tensor");
  }
  const std::size_t h = activations.height();
  const std::size_t w = activations.width();
  const std::size_t channels = activations.channels();

  std::vector<double> alpha(channels, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto g = gradients.vector_at(i, j);
      for (std::size_t c = 0; c < channels; ++c) alpha[c] += g[c];
    }
  for (double& a : alpha) a /= static_cast<double>(h * w);

  SaliencyGrid out{static_cast<int>(w), static_cast<int>(h), std::vector<float>(h * w, 0.0F)};
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto a = activations.vector_at(i, j);
      double sum = 0.0;
      for (std::size_t c = 0; c < channels; ++c) sum += alpha[c] * a[c];
      out.values[i * w + j] = static_cast<float>(std::max(0.0, sum));
    }
  return out;
}

IouResult iou_positive(std::span<const double> class_weights, std::span<const double> saliency,
                       double eps) {
  if (class_weights.size() != saliency.size()) {
    throw ValidationError("iou_positive: maps are not aligned (" +
                          std::to_string(class_weights.size()) + " vs " +
                          std::to_string(saliency.size()) + " cells)");
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t n = 0; n < saliency.size(); ++n) {
    const bool a = class_weights[n] > eps;
    const bool b = saliency[n] > eps;
    inter += static_cast<std::size_t>(a && b);
    uni += static_cast<std::size_t>(a || b);
  }
  if (uni == 0) return {0.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

std::vector<double> TileComparison::class_map(int cls) const {
  std::vector<double> out(cells());
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n] = weights[n * static_cast<std::size_t>(k) + static_cast<std::size_t>(cls)];
  }
  return out;
}

void suppress_small_values(TileComparison& tile, std::span<const double> class_thresholds,
                           double saliency_threshold) {
  const auto k = static_cast<std::size_t>(tile.k);
  if (class_thresholds.size() != k) throw ValidationError("suppress_small_values: need one threshold per class");
  for (std::size_t n = 0; n < tile.weights.size(); ++n) {
    if (tile.weights[n] <= class_thresholds[n % k]) tile.weights[n] = 0.0;
  }
  for (double& s : tile.saliency) {
    if (s <= saliency_threshold) s = 0.0;
  }
}

namespace {

void check_tile(const TileComparison& tile, int k) {
  if (tile.k != k) throw ValidationError("saliency comparison: tile class count mismatch");
  if (tile.weights.size() != tile.saliency.size() * static_cast<std::size_t>(k)) {
    throw ValidationError("saliency comparison: weight and saliency maps are not aligned");
  }
  if (tile.cells() < 2) throw ValidationError("saliency comparison: tile has fewer than 2 cells");
}

}  // namespace

std::vector<ClassCorrelation> saliency_correlation(std::span<const TileComparison> tiles, int k) {
  if (k < 1) throw ValidationError("saliency_correlation: k must be >= 1");
  std::vector<ClassCorrelation> out(static_cast<std::size_t>(k));
  for (const auto& tile : tiles) {
    check_tile(tile, k);
    for (int cls = 0; cls < k; ++cls) {
      auto& entry = out[static_cast<std::size_t>(cls)];
      const auto corr = pearson(tile.class_map(cls), tile.saliency);
      const bool cancer = tile.label == 1;
      if (!corr) {
        ++(cancer ? entry.skipped_cancer : entry.skipped_benign);
        continue;
      }
      (cancer ? entry.cancer : entry.benign).add(*corr);
    }
  }
  return out;
}

ComparisonReport compare_saliency(std::span<const TileComparison> tiles, int k, double eps) {
  ComparisonReport report;
  report.k = k;
  report.tiles = tiles.size();
  report.classes.resize(static_cast<std::size_t>(std::max(k, 0)));
  const auto corr = saliency_correlation(tiles, k);
  for (int cls = 0; cls < k; ++cls) {
    auto& entry = report.classes[static_cast<std::size_t>(cls)];
    entry.correlation = corr[static_cast<std::size_t>(cls)];
    for (const auto& tile : tiles) {
      const IouResult r = iou_positive(tile.class_map(cls), tile.saliency, eps);
      entry.iou.add(r.iou);
      entry.empty_union += static_cast<std::size_t>(r.empty_union);
    }
  }
  return report;
}

std::string format_comparison_tsv(const ComparisonReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "class\tiou_mean\tiou_std\tcorr_benign_mean\tcorr_benign_std\tcorr_cancer_mean\t"
         "corr_cancer_std\tn_benign\tn_cancer\tskipped_benign\tskipped_cancer\tempty_union\n";
  for (std::size_t cls = 0; cls < report.classes.size(); ++cls) {
    const auto& c = report.classes[cls];
    out << cls + 1 << '\t' << c.iou.mean() << '\t' << c.iou.stddev() << '\t'
        << c.correlation.benign.mean() << '\t' << c.correlation.benign.stddev() << '\t'
        << c.correlation.cancer.mean() << '\t' << c.correlation.cancer.stddev() << '\t'
        << c.correlation.benign.count() << '\t' << c.correlation.cancer.count() << '\t'
        << c.correlation.skipped_benign << '\t' << c.correlation.skipped_cancer << '\t'
        << c.empty_union << '\n';
  }
  return out.str();
}

}  // namespace featclust
