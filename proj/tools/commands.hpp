#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "featclust/aggregation.hpp"
#include "featclust/analysis.hpp"
#include "featclust/manifest.hpp"
#include "featclust/tissue.hpp"

namespace featclust::cli {

namespace fs = std::filesystem;

/// Line-oriented log on stderr: `[level] event key=value ...`, or one JSON
/// object per line with --json.
class Logger {
 public:
  Logger(std::ostream& out, bool json) : out_(out), json_(json) {}

  void info(const std::string& event, const nlohmann::json& fields = nlohmann::json::object()) {
    write("info", event, fields);
  }
  void warn(const std::string& event, const nlohmann::json& fields = nlohmann::json::object()) {
    write("warn", event, fields);
  }
  void error(const std::string& event, const nlohmann::json& fields = nlohmann::json::object()) {
    write("error", event, fields);
  }

 private:
  void write(const char* level, const std::string& event, const nlohmann::json& fields);

  std::ostream& out_;
  bool json_;
};

/// Runs fn(0..n-1) on up to `threads` workers; fn must only touch its own slot.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

struct TissueOptions {
  bool enabled = true;
  TissueMaskConfig mask;
};

/// A manifest plus the tiles that pass the tissue filter.
struct LoadedSlide {
  SlideManifest manifest;
  /// Indices into manifest.tiles, ascending.
  std::vector<std::size_t> kept;
  /// Feature tensors of the kept tiles (empty unless requested).
  std::vector<Tensor> tensors;
};

LoadedSlide load_slide(const fs::path& manifest_path, const TissueOptions& tissue, bool load_tensors);

/// `<dir>/<slide>.kept.tsv` lists the tiles infer used.
fs::path kept_list_path(const fs::path& dir, const std::string& slide_id);
void write_kept_list(const LoadedSlide& slide, const fs::path& dir);
/// Restricts slide.kept to the tiles in the kept list when it exists.
void apply_kept_list(LoadedSlide& slide, const fs::path& dir);

fs::path weights_stem(const fs::path& dir, const std::string& slide_id);

struct CommonOptions {
  int threads = 1;
};

struct SynthOptions {
  fs::path spec_file;  // empty: defaults
  fs::path out;
};

struct TrainOptions {
  std::vector<fs::path> manifests;
  int k = 6;
  std::uint64_t seed = 0;
  int max_iters = 200;
  double rel_tol = 1e-4;
  int margin = kDefaultMargin;
  TissueOptions tissue;
  fs::path out;
};

struct InferOptions {
  std::vector<fs::path> manifests;
  fs::path model;
  int max_iters = 100;
  double rel_tol = 1e-4;
  int margin = kDefaultMargin;
  TissueOptions tissue;
  fs::path out;
};

struct RenderCliOptions {
  fs::path weights_dir;
  /// Optional; tile images enable the tissue composites.
  std::vector<fs::path> manifests;
  std::string mode = "all";  // class | blend | cluster | all
  double quantile = 0.99;
  double opacity = 0.6;
  /// Resolution of the tissue composites.
  int tissue_px_per_cell = 4;
  fs::path out;
};

struct AnalyzeOptions {
  std::vector<fs::path> manifests;
  fs::path weights_dir;
  fs::path model;
  int margin = kDefaultMargin;
  std::size_t sample_size = 10000;
  std::uint64_t seed = 0;
  FeatureKind feature_kind = FeatureKind::kSum;
  double positive_eps = 0.0;
  std::string correlation_mode = "bootstrap";  // bootstrap | per-tile
  int resamples = 100;
  int batch_size = 1000;
  SurrogateConfig surrogate;
  fs::path out;
};

struct CompareOptions {
  std::vector<fs::path> manifests;
  fs::path weights_dir;
  int margin = kDefaultMargin;
  double positive_eps = 0.0;
  bool per_slide = false;
  fs::path out;
};

// Each returns the process exit code; errors are thrown.
int run_synth(const SynthOptions& o, const CommonOptions& common, Logger& log);
int run_train(const TrainOptions& o, const CommonOptions& common, Logger& log);
int run_infer(const InferOptions& o, const CommonOptions& common, Logger& log);
int run_render(const RenderCliOptions& o, const CommonOptions& common, Logger& log);
int run_analyze(const AnalyzeOptions& o, const CommonOptions& common, Logger& log);
int run_compare(const CompareOptions& o, const CommonOptions& common, Logger& log);

}  // namespace featclust::cli
