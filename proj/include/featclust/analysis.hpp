#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "featclust/nmf.hpp"

namespace featclust {

/// Per-tile aggregate of a class's weight map used as surrogate input.
enum class FeatureKind { kSum, kCoverage, kMax, kAvgPositive };

inline constexpr FeatureKind kAllFeatureKinds[] = {FeatureKind::kSum, FeatureKind::kCoverage,
                                                   FeatureKind::kMax, FeatureKind::kAvgPositive};

std::string to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& text);

struct TileClassFeatures {
  std::vector<double> sum_weights;
  /// Fraction of the tile's cells whose class weight is positive.
  std::vector<double> coverage;
  std::vector<double> max_weight;
  /// Mean of the positive weights; 0 when the class has no positive cell.
  std::vector<double> avg_positive_weight;
  int label = 0;

  const std::vector<double>& get(FeatureKind kind) const;
};

/// Builds the four feature kinds from a tile's cell weights (cells x K,
/// row-major). A weight counts as positive when it exceeds the class's
/// threshold; an empty `thresholds` means strictly > 0.
TileClassFeatures tile_class_features(std::span<const double> weights, int k, int label,
                                      std::span<const double> thresholds = {});

/// Per-class positivity thresholds: rel_eps times the nearest-rank p99 of
/// that class's positive weights. rel_eps = 0 gives all-zero thresholds.
std::vector<double> relative_positive_thresholds(std::span<const double> weights, int k,
                                                 double rel_eps);

struct CorrelationEntry {
  double mean = 0.0;
  double std = 0.0;
  std::size_t samples = 0;
  /// Correlation was undefined (constant column) in every sample.
  bool missing = true;
};

struct CorrelationMatrix {
  int k = 0;
  std::vector<CorrelationEntry> entries;  // k x k row-major

  const CorrelationEntry& at(int a, int b) const {
    return entries[static_cast<std::size_t>(a) * static_cast<std::size_t>(k) +
                   static_cast<std::size_t>(b)];
  }
};

struct BootstrapConfig {
  int resamples = 100;
  int batch_size = 1000;
  std::uint64_t seed = 0;
};

/// Pearson correlation between class feature columns across tiles, repeated
/// on bootstrap batches (drawn with replacement) to give mean and std.
CorrelationMatrix weight_correlation_matrix(std::span<const TileClassFeatures> tiles,
                                            FeatureKind kind, const BootstrapConfig& config);

/// Alternative reading: correlation between class weight maps over the cells
/// of each tile, summarized across tiles. Each entry of `tile_weights` is
/// cells x K row-major.
CorrelationMatrix weight_correlation_per_tile(std::span<const std::vector<double>> tile_weights,
                                              int k);

/// Cosine similarity between class vectors (rows of the basis).
Matrix class_cosine_similarity(const Matrix& basis);
Matrix class_cosine_similarity(const FactorModel& model);

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  // Zero denominators: the metric is reported as 0 (AUC as 0.5) and flagged.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool auc_undefined = false;
};

/// AUC as the Mann-Whitney statistic with half credit for tied scores.
double auc_mann_whitney(std::span<const double> scores, std::span<const int> labels);

/// Metrics at a decision threshold (score >= threshold is positive).
Metrics metric_suite(std::span<const double> scores, std::span<const int> labels,
                     double threshold = 0.5);

struct SurrogateConfig {
  double l2 = 1e-4;
  int max_iters = 100;
  double tol = 1e-10;
  double threshold = 0.5;
};

/// L2-regularized logistic regression on standardized features.
struct LogisticFit {
  std::vector<double> coefficients;  // standardized space
  double intercept = 0.0;
  std::vector<double> feature_mean;
  std::vector<double> feature_std;  // 0 for constant columns (ignored)
  std::vector<double> loss_history;  // regularized mean NLL per iterate
  int iterations = 0;
  bool converged = false;

  double predict(std::span<const double> x) const;
};

/// Damped Newton (IRLS) with step halving, so the loss never increases.
/// `features` is n x d. Throws ValidationError on single-label data or when
/// every column is constant.
LogisticFit fit_logistic(const Matrix& features, std::span<const int> labels,
                         const SurrogateConfig& config);

struct SurrogateModel {
  FeatureKind kind = FeatureKind::kSum;
  LogisticFit fit;
  Metrics metrics;  // on the fitting data

  const std::vector<double>& coefficients() const { return fit.coefficients; }
};

SurrogateModel fit_surrogate(std::span<const TileClassFeatures> tiles, FeatureKind kind,
                             const SurrogateConfig& config = {});

}  // namespace featclust
