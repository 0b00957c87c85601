#include "cli.hpp"

#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "commands.hpp"
#include "featclust/error.hpp"

namespace featclust::cli {

namespace {

std::vector<fs::path> to_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

void add_tissue_options(CLI::App* cmd, TissueOptions& t) {
  cmd->add_option("--saturation-min", t.mask.saturation_min, "Tissue pixel minimum HSV saturation")
      ->capture_default_str();
  cmd->add_option("--value-max", t.mask.value_max, "Tissue pixel maximum HSV value")->capture_default_str();
  cmd->add_option("--min-tissue-fraction", t.mask.min_tissue_fraction, "Tissue fraction needed to keep a tile")
      ->capture_default_str();
  cmd->add_flag("!--no-tissue-filter", t.enabled, "Keep every tile regardless of its image");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& log_stream) {
  CLI::App app{"Non-negative factorization of CNN feature maps on whole-slide tiles"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file with option values (flags on the command line win)");

  CommonOptions common;
  common.threads = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  bool json = false;
  app.add_option("--threads", common.threads, "Worker threads (slides processed in parallel)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--json", json, "Emit log lines as JSON objects");

  std::string out;
  std::vector<std::string> manifests;
  std::string model;
  std::string weights_dir;
  std::string spec_file;

  // synth
  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with planted ground truth");
  synth_cmd->add_option("--spec", spec_file, "Synthetic spec file (key = value lines)");
  synth_cmd->add_option("--out", out, "Output directory")->required();

  // train
  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Fit the NMF basis on trimmed tile feature vectors");
  train_cmd->add_option("--manifests", manifests, "Slide manifests")->required();
  train_cmd->add_option("--k", train.k, "Number of classes")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train.seed, "Initialization seed")->capture_default_str();
  train_cmd->add_option("--max-iters", train.max_iters, "Iteration cap")->capture_default_str();
  train_cmd->add_option("--rel-tol", train.rel_tol, "Relative objective decrease to stop at")->capture_default_str();
  train_cmd->add_option("--margin", train.margin, "Trimmed tile outline in cells")->capture_default_str();
  add_tissue_options(train_cmd, train.tissue);
  train_cmd->add_option("--out", out, "Output directory (model.clt, model.txt, train_log.tsv)")->required();

  // infer
  InferOptions infer;
  auto* infer_cmd = app.add_subcommand("infer", "Compute per-slide class weight grids with a fixed basis");
  infer_cmd->add_option("--manifests", manifests, "Slide manifests")->required();
  infer_cmd->add_option("--model", model, "Model stem or file written by train")->required();
  infer_cmd->add_option("--max-iters", infer.max_iters, "Iteration cap")->capture_default_str();
  infer_cmd->add_option("--rel-tol", infer.rel_tol, "Relative objective decrease to stop at")->capture_default_str();
  infer_cmd->add_option("--margin", infer.margin, "Trimmed tile outline in cells")->capture_default_str();
  add_tissue_options(infer_cmd, infer.tissue);
  infer_cmd->add_option("--out", out, "Output directory for weight grids")->required();

  // render
  RenderCliOptions render;
  auto* render_cmd = app.add_subcommand("render", "Write class heatmaps, blended and cluster overlays");
  render_cmd->add_option("--weights-dir", weights_dir, "Directory written by infer")->required();
  render_cmd->add_option("--manifests", manifests, "Manifests with tile images for tissue composites");
  render_cmd->add_option("--mode", render.mode, "class, blend, cluster or all")->capture_default_str();
  render_cmd->add_option("--quantile", render.quantile, "Per-class weight quantile drawn fully opaque")
      ->capture_default_str();
  render_cmd->add_option("--opacity", render.opacity, "Overlay opacity on tissue composites")->capture_default_str();
  render_cmd->add_option("--tissue-px-per-cell", render.tissue_px_per_cell,
                         "Resolution of tissue composites (must divide the cell size)")
      ->capture_default_str();
  render_cmd->add_option("--out", out, "Output directory for PNG files")->required();

  // analyze
  AnalyzeOptions analyze;
  std::string feature_kind = "sum";
  auto* analyze_cmd = app.add_subcommand("analyze", "Class correlation, cosine similarity and surrogate model");
  analyze_cmd->add_option("--manifests", manifests, "Slide manifests")->required();
  analyze_cmd->add_option("--weights-dir", weights_dir, "Directory written by infer")->required();
  analyze_cmd->add_option("--model", model, "Model stem or file written by train")->required();
  analyze_cmd->add_option("--margin", analyze.margin, "Trimmed tile outline in cells")->capture_default_str();
  analyze_cmd->add_option("--sample-size", analyze.sample_size, "Tiles sampled for the analysis")
      ->capture_default_str();
  analyze_cmd->add_option("--seed", analyze.seed, "Sampling and bootstrap seed")->capture_default_str();
  analyze_cmd->add_option("--feature-kind", feature_kind, "sum, coverage, max or avg_positive")
      ->capture_default_str()
      ->check(CLI::IsMember({"sum", "coverage", "max", "avg_positive"}));
  analyze_cmd->add_option("--positive-eps", analyze.positive_eps,
                          "A weight is positive above this fraction of its class's p99 weight")
      ->capture_default_str();
  analyze_cmd->add_option("--correlation-mode", analyze.correlation_mode, "bootstrap or per-tile")
      ->capture_default_str()
      ->check(CLI::IsMember({"bootstrap", "per-tile"}));
  analyze_cmd->add_option("--resamples", analyze.resamples, "Bootstrap resamples")->capture_default_str();
  analyze_cmd->add_option("--batch-size", analyze.batch_size, "Tiles per bootstrap resample")->capture_default_str();
  analyze_cmd->add_option("--l2", analyze.surrogate.l2, "Surrogate L2 strength")->capture_default_str();
  analyze_cmd->add_option("--surrogate-iters", analyze.surrogate.max_iters, "Surrogate Newton iteration cap")
      ->capture_default_str();
  analyze_cmd->add_option("--out", out, "Output directory for reports")->required();

  // compare
  CompareOptions compare;
  auto* compare_cmd = app.add_subcommand("compare", "Compare class weights with GradCAM saliency");
  compare_cmd->add_option("--manifests", manifests, "Slide manifests with gradient tensors")->required();
  compare_cmd->add_option("--weights-dir", weights_dir, "Directory written by infer")->required();
  compare_cmd->add_option("--margin", compare.margin, "Trimmed tile outline in cells")->capture_default_str();
  compare_cmd->add_option("--positive-eps", compare.positive_eps,
                          "A value is positive above this fraction of its map's p99 value")
      ->capture_default_str();
  compare_cmd->add_flag("--per-slide", compare.per_slide, "IoU on whole-slide grids instead of per tile");
  compare_cmd->add_option("--out", out, "Output directory for the comparison table")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream err;
    const int code = app.exit(e, std::cout, err);
    log_stream << err.str();
    return code == 0 ? 0 : 2;
  }

  Logger log(log_stream, json);
  try {
    if (*synth_cmd) {
      synth.spec_file = spec_file;
      synth.out = out;
      return run_synth(synth, common, log);
    }
    if (*train_cmd) {
      train.manifests = to_paths(manifests);
      train.out = out;
      return run_train(train, common, log);
    }
    if (*infer_cmd) {
      infer.manifests = to_paths(manifests);
      infer.model = model;
      infer.out = out;
      return run_infer(infer, common, log);
    }
    if (*render_cmd) {
      render.weights_dir = weights_dir;
      render.manifests = to_paths(manifests);
      render.out = out;
      return run_render(render, common, log);
    }
    if (*analyze_cmd) {
      analyze.manifests = to_paths(manifests);
      analyze.weights_dir = weights_dir;
      analyze.model = model;
      analyze.feature_kind = parse_feature_kind(feature_kind);
      analyze.out = out;
      return run_analyze(analyze, common, log);
    }
    if (*compare_cmd) {
      compare.manifests = to_paths(manifests);
      compare.weights_dir = weights_dir;
      compare.out = out;
      return run_compare(compare, common, log);
    }
  } catch (const ValidationError& e) {
    log.error("invalid_input", {{"message", e.what()}});
    return 2;
  } catch (const IoError& e) {
    log.error("io_failure", {{"message", e.what()}});
    return 3;
  } catch (const NumericalError& e) {
    log.error("numerical_failure", {{"message", e.what()}});
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    log.error("io_failure", {{"message", e.what()}});
    return 3;
  }
  return 2;
}

}  // namespace featclust::cli
