#include "featclust/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "featclust/error.hpp"
#include "featclust/stats.hpp"

namespace featclust {

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kSum:
      return "sum";
    case FeatureKind::kCoverage:
      return "coverage";
    case FeatureKind::kMax:
      return "max";
    case FeatureKind::kAvgPositive:
      return "avg_positive";
  }
  return "sum";
}

FeatureKind parse_feature_kind(const std::string& text) {
  for (FeatureKind kind : kAllFeatureKinds)
    if (to_string(kind) == text) return kind;
  throw ValidationError("unknown feature kind '" + text +
                        "' (expected sum, coverage, max or avg_positive)");
}

const std::vector<double>& TileClassFeatures::get(FeatureKind kind) const {
  switch (kind) {
    case FeatureKind::kSum:
      return sum_weights;
    case FeatureKind::kCoverage:
      return coverage;
    case FeatureKind::kMax:
      return max_weight;
    case FeatureKind::kAvgPositive:
      return avg_positive_weight;
  }
  return sum_weights;
}

TileClassFeatures tile_class_features(std::span<const double> weights, int k, int label,
                                      std::span<const double> thresholds) {
  if (k < 1) throw ValidationError("tile_class_features: k must be >= 1");
  const auto kk = static_cast<std::size_t>(k);
  if (weights.empty() || weights.size() % kk != 0) {
    throw ValidationError("tile_class_features: weight array is not cells x K");
  }
  if (!thresholds.empty() && thresholds.size() != kk) {
    throw ValidationError("tile_class_features: need one threshold per class");
  }
  const std::size_t cells = weights.size() / kk;
  TileClassFeatures f;
  f.label = label;
  f.sum_weights.assign(kk, 0.0);
  f.coverage.assign(kk, 0.0);
  f.max_weight.assign(kk, 0.0);
  f.avg_positive_weight.assign(kk, 0.0);
  std::vector<std::size_t> positive(kk, 0);
  std::vector<double> positive_sum(kk, 0.0);
  for (std::size_t n = 0; n < cells; ++n) {
    for (std::size_t c = 0; c < kk; ++c) {
      const double w = weights[n * kk + c];
      f.sum_weights[c] += w;
      f.max_weight[c] = std::max(f.max_weight[c], w);
      if (w > (thresholds.empty() ? 0.0 : thresholds[c])) {
        ++positive[c];
        positive_sum[c] += w;
      }
    }
  }
  for (std::size_t c = 0; c < kk; ++c) {
    f.coverage[c] = static_cast<double>(positive[c]) / static_cast<double>(cells);
    f.avg_positive_weight[c] =
        positive[c] == 0 ? 0.0 : positive_sum[c] / static_cast<double>(positive[c]);
  }
  return f;
}

std::vector<double> relative_positive_thresholds(std::span<const double> weights, int k,
                                                 double rel_eps) {
  if (k < 1) throw ValidationError("relative_positive_thresholds: k must be >= 1");
  if (rel_eps < 0.0) throw ValidationError("positive epsilon must be >= 0");
  const auto kk = static_cast<std::size_t>(k);
  std::vector<double> out(kk, 0.0);
  if (rel_eps == 0.0) return out;
  for (std::size_t c = 0; c < kk; ++c) {
    std::vector<double> positive;
    for (std::size_t n = c; n < weights.size(); n += kk)
      if (weights[n] > 0.0) positive.push_back(weights[n]);
    if (!positive.empty()) out[c] = rel_eps * quantile_nearest_rank(std::move(positive), 0.99);
  }
  return out;
}

namespace {

CorrelationMatrix finalize(int k, const std::vector<RunningStats>& stats) {
  CorrelationMatrix m;
  m.k = k;
  m.entries.resize(stats.size());
  for (std::size_t n = 0; n < stats.size(); ++n) {
    auto& e = m.entries[n];
    e.samples = stats[n].count();
    e.missing = e.samples == 0;
    if (!e.missing) {
      e.mean = stats[n].mean();
      e.std = stats[n].stddev();
    }
  }
  for (int a = 0; a < k; ++a) {
    auto& d = m.entries[static_cast<std::size_t>(a * k + a)];
    if (!d.missing) {
      d.mean = 1.0;
      d.std = 0.0;
    }
  }
  return m;
}

}  // namespace

CorrelationMatrix weight_correlation_matrix(std::span<const TileClassFeatures> tiles,
                                            FeatureKind kind, const BootstrapConfig& config) {
  if (tiles.size() < 2) throw ValidationError("weight_correlation_matrix: need >= 2 tiles");
  if (config.resamples < 1 || config.batch_size < 2) {
    throw ValidationError("weight_correlation_matrix: need >= 1 resample of >= 2 tiles");
  }
  const int k = static_cast<int>(tiles[0].get(kind).size());
  const auto kk = static_cast<std::size_t>(k);
  std::vector<RunningStats> stats(kk * kk);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::vector<double>> columns(kk, std::vector<double>(batch));
  for (int r = 0; r < config.resamples; ++r) {
    std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(r)));
    std::uniform_int_distribution<std::size_t> pick(0, tiles.size() - 1);
    for (std::size_t n = 0; n < batch; ++n) {
      const auto& f = tiles[pick(rng)].get(kind);
      if (f.size() != kk) throw ValidationError("weight_correlation_matrix: ragged features");
      for (std::size_t c = 0; c < kk; ++c) columns[c][n] = f[c];
    }
    for (std::size_t a = 0; a < kk; ++a) {
      for (std::size_t b = a; b < kk; ++b) {
        if (const auto corr = pearson(columns[a], columns[b])) {
          stats[a * kk + b].add(*corr);
          if (a != b) stats[b * kk + a].add(*corr);
        }
      }
    }
  }
  return finalize(k, stats);
}

CorrelationMatrix weight_correlation_per_tile(std::span<const std::vector<double>> tile_weights,
                                              int k) {
  if (k < 1) throw ValidationError("weight_correlation_per_tile: k must be >= 1");
  const auto kk = static_cast<std::size_t>(k);
  std::vector<RunningStats> stats(kk * kk);
  for (const auto& w : tile_weights) {
    if (w.size() % kk != 0 || w.size() / kk < 2) {
      throw ValidationError("weight_correlation_per_tile: tile needs >= 2 cells of K weights");
    }
    const std::size_t cells = w.size() / kk;
    std::vector<std::vector<double>> maps(kk, std::vector<double>(cells));
    for (std::size_t n = 0; n < cells; ++n)
      for (std::size_t c = 0; c < kk; ++c) maps[c][n] = w[n * kk + c];
    for (std::size_t a = 0; a < kk; ++a)
      for (std::size_t b = a; b < kk; ++b)
        if (const auto corr = pearson(maps[a], maps[b])) {
          stats[a * kk + b].add(*corr);
          if (a != b) stats[b * kk + a].add(*corr);
        }
  }
  return finalize(k, stats);
}

Matrix class_cosine_similarity(const Matrix& basis) {
  const Eigen::Index k = basis.rows();
  Eigen::VectorXd norms(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    norms(a) = basis.row(a).norm();
    if (!(norms(a) > 0.0)) {
      throw ValidationError("class_cosine_similarity: class " + std::to_string(a + 1) +
                            " has an all-zero class vector");
    }
  }
  Matrix s = Matrix::Identity(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a + 1; b < k; ++b) {
      const double v = std::clamp(basis.row(a).dot(basis.row(b)) / (norms(a) * norms(b)), 0.0, 1.0);
      s(a, b) = v;
      s(b, a) = v;
    }
  }
  return s;
}

Matrix class_cosine_similarity(const FactorModel& model) {
  return class_cosine_similarity(model.basis());
}

double auc_mann_whitney(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j+1 share their average.
    const double rank = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) {
        positive_rank_sum += rank;
        ++positives;
      }
    }
    i = j + 1;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) return 0.5;
  const double np = static_cast<double>(positives);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

Metrics metric_suite(std::span<const double> scores, std::span<const int> labels,
                     double threshold) {
  if (scores.size() != labels.size()) {
    throw ValidationError("metric_suite: " + std::to_string(scores.size()) + " scores for " +
                          std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) throw ValidationError("metric_suite: no samples");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t n = 0; n < scores.size(); ++n) {
    if (labels[n] != 0 && labels[n] != 1) throw ValidationError("metric_suite: labels must be 0/1");
    const bool predicted = scores[n] >= threshold;
    const bool actual = labels[n] == 1;
    tp += static_cast<std::size_t>(predicted && actual);
    fp += static_cast<std::size_t>(predicted && !actual);
    tn += static_cast<std::size_t>(!predicted && !actual);
    fn += static_cast<std::size_t>(!predicted && actual);
  }
  Metrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  m.precision_undefined = tp + fp == 0;
  m.precision = m.precision_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall_undefined = tp + fn == 0;
  m.recall = m.recall_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f1_undefined = m.precision + m.recall == 0.0;
  m.f1 = m.f1_undefined ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  m.auc_undefined = tp + fn == 0 || tn + fp == 0;
  m.auc = auc_mann_whitney(scores, labels);
  return m;
}

namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Regularized mean negative log-likelihood; beta(0) is the unpenalized intercept.
double logistic_loss(const Matrix& x, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                     double l2) {
  const Eigen::VectorXd z = x * beta;
  double nll = 0.0;
  for (Eigen::Index n = 0; n < z.size(); ++n) nll += softplus(z(n)) - y(n) * z(n);
  nll /= static_cast<double>(z.size());
  return nll + 0.5 * l2 * beta.tail(beta.size() - 1).squaredNorm();
}

}  // namespace

double LogisticFit::predict(std::span<const double> x) const {
  if (x.size() != coefficients.size()) throw ValidationError("predict: feature count mismatch");
  double z = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (feature_std[j] > 0.0) z += coefficients[j] * (x[j] - feature_mean[j]) / feature_std[j];
  }
  return sigmoid(z);
}

LogisticFit fit_logistic(const Matrix& features, std::span<const int> labels,
                         const SurrogateConfig& config) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw ValidationError("fit_logistic: feature rows and labels differ in length");
  }
  if (config.l2 < 0.0 || config.max_iters < 1) throw ValidationError("fit_logistic: bad config");
  std::size_t positives = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("fit_logistic: labels must be 0/1");
    positives += static_cast<std::size_t>(y);
  }
  if (positives == 0 || positives == labels.size()) {
    throw ValidationError("fit_logistic: labels contain a single class");
  }

  LogisticFit fit;
  fit.feature_mean.assign(static_cast<std::size_t>(d), 0.0);
  fit.feature_std.assign(static_cast<std::size_t>(d), 0.0);
  Matrix x(n, d + 1);
  x.col(0).setOnes();
  bool any_variation = false;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mean = features.col(j).mean();
    const double sd = std::sqrt((features.col(j).array() - mean).square().mean());
    fit.feature_mean[static_cast<std::size_t>(j)] = mean;
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
      fit.feature_std[static_cast<std::size_t>(j)] = sd;
      x.col(j + 1) = (features.col(j).array() - mean) / sd;
      any_variation = true;
    } else {
      x.col(j + 1).setZero();
    }
  }
  if (!any_variation) throw ValidationError("fit_logistic: degenerate data, every feature is constant");

  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) y(r) = labels[static_cast<std::size_t>(r)];
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, config.l2);
  penalty(0) = 0.0;

  double loss = logistic_loss(x, y, beta, config.l2);
  fit.loss_history.push_back(loss);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int it = 0; it < config.max_iters; ++it) {
    const Eigen::VectorXd z = x * beta;
    Eigen::VectorXd p(n);
    Eigen::VectorXd s(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      p(r) = sigmoid(z(r));
      s(r) = std::max(p(r) * (1.0 - p(r)), 1e-12);
    }
    const Eigen::VectorXd grad = inv_n * (x.transpose() * (p - y)) + penalty.cwiseProduct(beta);
    Matrix hess = inv_n * (x.transpose() * s.asDiagonal() * x);
    hess.diagonal() += penalty;
    // Constant (zeroed) columns keep the Hessian singular without a ridge.
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);

    double t = 1.0;
    Eigen::VectorXd candidate = beta - step;
    double candidate_loss = logistic_loss(x, y, candidate, config.l2);
    for (int halving = 0; halving < 40 && !(candidate_loss <= loss); ++halving) {
      t *= 0.5;
      candidate = beta - t * step;
      candidate_loss = logistic_loss(x, y, candidate, config.l2);
    }
    fit.iterations = it + 1;
    if (!(candidate_loss <= loss)) {
      // No descent along the Newton direction: at the optimum up to rounding.
      fit.converged = true;
      break;
    }
    const double decrease = loss - candidate_loss;
    beta = candidate;
    loss = candidate_loss;
    fit.loss_history.push_back(loss);
    if (decrease <= config.tol * (1.0 + std::abs(loss)) ||
        grad.lpNorm<Eigen::Infinity>() <= config.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.intercept = beta(0);
  fit.coefficients.assign(beta.data() + 1, beta.data() + beta.size());
  return fit;
}

SurrogateModel fit_surrogate(std::span<const TileClassFeatures> tiles, FeatureKind kind,
                             const SurrogateConfig& config) {
  if (tiles.empty()) throw ValidationError("fit_surrogate: no tiles");
  const auto k = static_cast<Eigen::Index>(tiles[0].get(kind).size());
  Matrix x(static_cast<Eigen::Index>(tiles.size()), k);
  std::vector<int> labels(tiles.size());
  for (std::size_t n = 0; n < tiles.size(); ++n) {
    const auto& f = tiles[n].get(kind);
    if (static_cast<Eigen::Index>(f.size()) != k) throw ValidationError("fit_surrogate: ragged features");
    for (Eigen::Index c = 0; c < k; ++c) x(static_cast<Eigen::Index>(n), c) = f[static_cast<std::size_t>(c)];
    labels[n] = tiles[n].label;
  }
  SurrogateModel model;
  model.kind = kind;
  model.fit = fit_logistic(x, labels, config);
  std::vector<double> scores(tiles.size());
  for (std::size_t n = 0; n < tiles.size(); ++n) scores[n] = model.fit.predict(tiles[n].get(kind));
  model.metrics = metric_suite(scores, labels, config.threshold);
  return model;
}

}  // namespace featclust
