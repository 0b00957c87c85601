#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace featclust {

/// Single-pass mean / variance accumulator (Welford), mergeable across
/// workers. stddev() is the population standard deviation.
class RunningStats {
 public:
  void add(double x);
  void merge(const RunningStats& other);

  std::size_t count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const { return count_ == 0 ? 0.0 : m2_ / static_cast<double>(count_); }
  double stddev() const;

 private:
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Pearson correlation; nullopt when either input is constant.
/// Throws ValidationError on length mismatch or fewer than 2 samples.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

/// Cosine of the angle between two vectors; nullopt when either is zero.
std::optional<double> cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Nearest-rank quantile: the ceil(p * n)-th smallest value (p in (0, 1]).
double quantile_nearest_rank(std::vector<double> values, double p);

/// SplitMix64 finalizer; derives independent stream seeds from (seed, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace featclust
