#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace featclust {

using Matrix = Eigen::MatrixXd;

/// Division guard in the multiplicative updates.
inline constexpr double kNmfEpsilon = 1e-12;

/// Returned by argmax_cluster for rows whose weights are all zero.
inline constexpr int kUnassigned = -1;

struct NmfConfig {
  int max_iters = 200;
  double rel_tol = 1e-4;
  std::uint64_t seed = 0;
};

struct InferConfig {
  int max_iters = 100;
  double rel_tol = 1e-4;
};

/// Trained NMF basis: K class vectors (rows) over C channels. Immutable once
/// built; safe to share between threads.
class FactorModel {
 public:
  FactorModel(Matrix basis, std::uint64_t seed, int train_iterations, double final_objective);

  int k() const { return static_cast<int>(basis_.rows()); }
  int channels() const { return static_cast<int>(basis_.cols()); }
  const Matrix& basis() const { return basis_; }
  std::uint64_t seed() const { return seed_; }
  int train_iterations() const { return train_iterations_; }
  double final_objective() const { return final_objective_; }

 private:
  Matrix basis_;
  std::uint64_t seed_;
  int train_iterations_;
  double final_objective_;
};

/// Snapshot passed to the optional per-iteration observer of nmf_train.
struct IterationState {
  int iteration = 0;  // 1-based
  double objective = 0.0;
  const Matrix* weights = nullptr;
  const Matrix* basis = nullptr;
};

using IterationObserver = std::function<void(const IterationState&)>;

struct TrainResult {
  FactorModel model;
  Matrix weights;  // n x K
  /// Objective after each iteration; entry 0 is the objective at initialization.
  std::vector<double> objective_history;
  bool converged = false;
  /// Human-readable notes, e.g. re-seeded dead classes.
  std::vector<std::string> events;
};

struct InferResult {
  Matrix weights;  // n x K
  std::vector<double> objective_history;
  bool converged = false;
};

/// Squared Frobenius norm ||V - W H||^2.
double objective(const Matrix& V, const Matrix& W, const Matrix& H);

/// Lee-Seung multiplicative updates. On return the basis rows have unit L2
/// norm (the scale is moved into W) and are rounded to float precision so the
/// in-memory model matches its serialized form.
TrainResult nmf_train(const Matrix& V, int k, const NmfConfig& config,
                      const IterationObserver& observer = {});

/// Solves for W with the model's basis held fixed.
InferResult nmf_infer(const FactorModel& model, const Matrix& V, const InferConfig& config);

/// Index of the largest weight per row (lowest index on ties); kUnassigned for
/// all-zero rows. Indices are 0-based; user-facing output adds 1.
std::vector<int> argmax_cluster(const Matrix& weights);
int argmax_row(const double* weights, int k);

/// Writes `<stem>.clt` (K x C x 1 tensor) and `<stem>.txt` (metadata).
void save_model(const FactorModel& model, const std::filesystem::path& stem);
FactorModel load_model(const std::filesystem::path& stem);

}  // namespace featclust
