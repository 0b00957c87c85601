#include "featclust/nmf.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "featclust/error.hpp"
#include "featclust/keyvalue.hpp"
#include "featclust/tensor_io.hpp"

namespace featclust {

namespace {

void require_nonnegative_finite(const Matrix& m, const char* what) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double v = m(r, c);
      if (!std::isfinite(v)) {
        throw ValidationError(std::string(what) + " has a non-finite entry at (" +
                              std::to_string(r) + ", " + std::to_string(c) + ")");
      }
      if (v < 0.0) {
        throw ValidationError(std::string(what) + " has a negative entry at (" +
                              std::to_string(r) + ", " + std::to_string(c) + ")");
      }
    }
  }
}

// Uniform on (0, 1].
double unit_open_low(std::mt19937_64& rng) {
  return 1.0 - std::generate_canonical<double, 53>(rng);
}

void update_weights(const Matrix& V, Matrix& W, const Matrix& H) {
  const Matrix numer = V * H.transpose();
  const Matrix gram = H * H.transpose();
  const Matrix denom = W * gram;
  W.array() *= numer.array() / (denom.array() + kNmfEpsilon);
}

void update_basis(const Matrix& V, const Matrix& W, Matrix& H) {
  const Matrix numer = W.transpose() * V;
  const Matrix gram = W.transpose() * W;
  const Matrix denom = gram * H;
  H.array() *= numer.array() / (denom.array() + kNmfEpsilon);
}

bool decreased_enough(double previous, double current, double rel_tol) {
  if (current <= 0.0) return false;
  return (previous - current) >= rel_tol * previous;
}

std::filesystem::path strip_clt(const std::filesystem::path& stem) {
  auto p = stem;
  if (p.extension() == ".clt" || p.extension() == ".txt") p.replace_extension();
  return p;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(strip_clt(stem).string() + suffix);
}

}  // namespace

FactorModel::FactorModel(Matrix basis, std::uint64_t seed, int train_iterations,
                         double final_objective)
    : basis_(std::move(basis)),
      seed_(seed),
      train_iterations_(train_iterations),
      final_objective_(final_objective) {
  if (basis_.rows() < 1 || basis_.cols() < 1) throw ValidationError("factor model is empty");
  require_nonnegative_finite(basis_, "factor model basis");
}

double objective(const Matrix& V, const Matrix& W, const Matrix& H) {
  if (W.rows() != V.rows() || H.cols() != V.cols() || W.cols() != H.rows()) {
    throw ValidationError("objective: shape mismatch V " + std::to_string(V.rows()) + "x" +
                          std::to_string(V.cols()) + ", W " + std::to_string(W.rows()) + "x" +
                          std::to_string(W.cols()) + ", H " + std::to_string(H.rows()) + "x" +
                          std::to_string(H.cols()));
  }
  return (V - W * H).squaredNorm();
}

TrainResult nmf_train(const Matrix& V, int k, const NmfConfig& config,
                      const IterationObserver& observer) {
  if (k < 1) throw ValidationError("nmf_train: k must be >= 1");
  if (V.rows() < k) {
    throw ValidationError("nmf_train: k = " + std::to_string(k) + " exceeds row count " +
                          std::to_string(V.rows()));
  }
  if (V.cols() < 1) throw ValidationError("nmf_train: V has no columns");
  if (config.max_iters < 0) throw ValidationError("nmf_train: max_iters must be >= 0");
  require_nonnegative_finite(V, "nmf_train input");
  const double mean = V.mean();
  if (!(mean > 0.0)) throw ValidationError("nmf_train: input matrix is all zeros");

  const double scale = std::sqrt(mean / k);
  std::mt19937_64 rng(config.seed);
  Matrix W(V.rows(), k);
  Matrix H(k, V.cols());
  for (Eigen::Index r = 0; r < W.rows(); ++r)
    for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = scale * unit_open_low(rng);
  for (Eigen::Index r = 0; r < H.rows(); ++r)
    for (Eigen::Index c = 0; c < H.cols(); ++c) H(r, c) = scale * unit_open_low(rng);

  std::vector<double> history{objective(V, W, H)};
  std::vector<std::string> events;
  bool converged = history.back() == 0.0;
  int iteration = 0;
  while (!converged && iteration < config.max_iters) {
    ++iteration;
    update_weights(V, W, H);
    update_basis(V, W, H);
    for (Eigen::Index row = 0; row < H.rows(); ++row) {
      if (H.row(row).maxCoeff() > 0.0) continue;
      for (Eigen::Index c = 0; c < H.cols(); ++c) H(row, c) = scale * unit_open_low(rng);
      events.push_back("iteration " + std::to_string(iteration) + ": class " +
                       std::to_string(row + 1) + " collapsed to zero, re-seeded");
    }
    const double current = objective(V, W, H);
    if (observer) observer(IterationState{iteration, current, &W, &H});
    converged = current == 0.0 || !decreased_enough(history.back(), current, config.rel_tol);
    history.push_back(current);
  }

  // Unit-norm class vectors; W absorbs the scale so W H is unchanged.
  for (Eigen::Index row = 0; row < H.rows(); ++row) {
    const double norm = H.row(row).norm();
    if (norm <= 0.0) continue;
    H.row(row) /= norm;
    W.col(row) *= norm;
  }
  H = H.cast<float>().cast<double>();
  const double final_objective = objective(V, W, H);

  return TrainResult{FactorModel(std::move(H), config.seed, iteration, final_objective),
                     std::move(W), std::move(history), converged, std::move(events)};
}

InferResult nmf_infer(const FactorModel& model, const Matrix& V, const InferConfig& config) {
  if (V.cols() != model.channels()) {
    throw ValidationError("nmf_infer: input has " + std::to_string(V.cols()) +
                          " channels, model expects " + std::to_string(model.channels()));
  }
  if (config.max_iters < 0) throw ValidationError("nmf_infer: max_iters must be >= 0");
  require_nonnegative_finite(V, "nmf_infer input");

  const Matrix& H = model.basis();
  const Eigen::VectorXd gram_row_sums = (H * H.transpose()).rowwise().sum();
  Matrix W = V * H.transpose();
  for (Eigen::Index c = 0; c < W.cols(); ++c) W.col(c) /= gram_row_sums(c) + kNmfEpsilon;

  InferResult result;
  result.objective_history.push_back(objective(V, W, H));
  bool converged = result.objective_history.back() == 0.0;
  for (int it = 0; !converged && it < config.max_iters; ++it) {
    update_weights(V, W, H);
    const double current = objective(V, W, H);
    converged = current == 0.0 ||
                !decreased_enough(result.objective_history.back(), current, config.rel_tol);
    result.objective_history.push_back(current);
  }
  result.converged = converged;
  result.weights = std::move(W);
  return result;
}

int argmax_row(const double* weights, int k) {
  int best = kUnassigned;
  double best_value = 0.0;
  for (int c = 0; c < k; ++c) {
    if (weights[c] > best_value) {
      best_value = weights[c];
      best = c;
    }
  }
  return best;
}

std::vector<int> argmax_cluster(const Matrix& weights) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = weights;
  std::vector<int> out(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    out[static_cast<std::size_t>(r)] = argmax_row(rows.row(r).data(), static_cast<int>(rows.cols()));
  }
  return out;
}

void save_model(const FactorModel& model, const std::filesystem::path& stem) {
  const auto k = static_cast<std::uint32_t>(model.k());
  const auto c = static_cast<std::uint32_t>(model.channels());
  std::vector<float> data(std::size_t{k} * c);
  for (std::uint32_t r = 0; r < k; ++r)
    for (std::uint32_t col = 0; col < c; ++col)
      data[std::size_t{r} * c + col] = static_cast<float>(model.basis()(r, col));
  write_tensor(Tensor({k, c, 1}, DType::kNonNegative, std::move(data)), with_suffix(stem, ".clt"));

  std::ostringstream meta;
  meta << "k = " << model.k() << '\n'
       << "channels = " << model.channels() << '\n'
       << "seed = " << model.seed() << '\n'
       << "train_iterations = " << model.train_iterations() << '\n'
       << "final_objective = " << format_double(model.final_objective()) << '\n';
  write_text_file(with_suffix(stem, ".txt"), meta.str());
}

FactorModel load_model(const std::filesystem::path& stem) {
  const Tensor t = read_tensor(with_suffix(stem, ".clt"));
  const KeyValues meta = KeyValues::load(with_suffix(stem, ".txt"));
  if (t.channels() != 1 || meta.get_int("k") != t.height() ||
      meta.get_int("channels") != t.width()) {
    throw FormatError(strip_clt(stem).string() + ": model tensor shape disagrees with metadata");
  }
  Matrix basis(t.height(), t.width());
  for (std::uint32_t r = 0; r < t.height(); ++r)
    for (std::uint32_t c = 0; c < t.width(); ++c) basis(r, c) = t.at(r, c, 0);
  const std::string seed_text = meta.get("seed");
  std::uint64_t seed = 0;
  try {
    seed = std::stoull(seed_text);
  } catch (const std::exception&) {
    throw FormatError(strip_clt(stem).string() + ": bad seed '" + seed_text + "'");
  }
  return FactorModel(std::move(basis), seed, static_cast<int>(meta.get_int("train_iterations")),
                     meta.get_double("final_objective"));
}

}  // namespace featclust
