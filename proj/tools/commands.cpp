#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "featclust/error.hpp"
#include "featclust/image.hpp"
#include "featclust/keyvalue.hpp"
#include "featclust/nmf.hpp"
#include "featclust/render.hpp"
#include "featclust/saliency.hpp"
#include "featclust/stats.hpp"
#include "featclust/synth.hpp"
#include "featclust/tensor_io.hpp"

namespace featclust::cli {

void Logger::write(const char* level, const std::string& event, const nlohmann::json& fields) {
  if (json_) {
    nlohmann::json line = fields;
    line["level"] = level;
    line["event"] = event;
    out_ << line.dump() << '\n';
    return;
  }
  out_ << '[' << level << "] " << event;
  for (const auto& [key, value] : fields.items()) {
    out_ << ' ' << key << '=' << (value.is_string() ? value.get<std::string>() : value.dump());
  }
  out_ << '\n';
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  // Report the first failure in index order so errors do not depend on timing.
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

std::string fmt(double v, int digits = 6) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string tile_name(const SlideManifest& m, const TileRecord& t) {
  return m.slide_id + " tile (" + std::to_string(t.origin_x_px) + ", " + std::to_string(t.origin_y_px) + ")";
}

/// Cells x K weights of a tile's trimmed interior, read from the slide grid.
std::vector<double> tile_weights(const SlideManifest& m, const TileRecord& tile, const WeightGrid& grid,
                                 int margin) {
  const auto cells = tile_interior_cells(m, tile, margin);
  const std::size_t k = grid.channels();
  std::vector<double> out;
  out.reserve(cells.size() * k);
  for (const auto& c : cells) {
    const auto n = grid.find(c);
    if (!n) {
      throw ValidationError(tile_name(m, tile) + ": cell (" + std::to_string(c.gx) + ", " +
                            std::to_string(c.gy) + ") has no weights; was infer run with the same margin?");
    }
    const auto v = grid.values(*n);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

WeightGrid load_weights(const fs::path& dir, const std::string& slide_id) {
  return load_grid<GridKind::kWeights>(weights_stem(dir, slide_id));
}

void write_matrix_tensor(const Matrix& m, const fs::path& path, DType dtype) {
  std::vector<float> values;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) values.push_back(static_cast<float>(m(r, c)));
  write_tensor(Tensor({static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), 1}, dtype,
                      std::move(values)),
               path);
}

}  // namespace

LoadedSlide load_slide(const fs::path& manifest_path, const TissueOptions& tissue, bool load_tensors) {
  LoadedSlide s;
  s.manifest = load_manifest(manifest_path);
  for (std::size_t n = 0; n < s.manifest.tiles.size(); ++n) {
    const TileRecord& tile = s.manifest.tiles[n];
    if (tissue.enabled && tile.image_path) {
      if (!tissue_filter(read_png_rgb(*tile.image_path), tissue.mask).keep) continue;
    }
    s.kept.push_back(n);
  }
  if (load_tensors) {
    for (std::size_t n : s.kept) s.tensors.push_back(read_tensor(s.manifest.tiles[n].tensor_path));
  }
  return s;
}

fs::path kept_list_path(const fs::path& dir, const std::string& slide_id) {
  return dir / (slide_id + ".kept.tsv");
}

fs::path weights_stem(const fs::path& dir, const std::string& slide_id) {
  return dir / (slide_id + ".weights");
}

void write_kept_list(const LoadedSlide& slide, const fs::path& dir) {
  std::ostringstream out;
  out << "origin_x\torigin_y\n";
  for (std::size_t n : slide.kept) {
    const auto& t = slide.manifest.tiles[n];
    out << t.origin_x_px << '\t' << t.origin_y_px << '\n';
  }
  write_text_file(kept_list_path(dir, slide.manifest.slide_id), out.str());
}

void apply_kept_list(LoadedSlide& slide, const fs::path& dir) {
  const fs::path path = kept_list_path(dir, slide.manifest.slide_id);
  if (!fs::exists(path)) return;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::pair<std::int64_t, std::int64_t>> origins;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ": malformed line '" + line + "'");
    origins.emplace_back(parse_int(line.substr(0, tab), path.string()),
                         parse_int(line.substr(tab + 1), path.string()));
  }
  std::sort(origins.begin(), origins.end());
  std::vector<std::size_t> kept;
  for (std::size_t n = 0; n < slide.manifest.tiles.size(); ++n) {
    const auto& t = slide.manifest.tiles[n];
    if (std::binary_search(origins.begin(), origins.end(), std::make_pair(t.origin_x_px, t.origin_y_px))) {
      kept.push_back(n);
    }
  }
  if (kept.size() != origins.size()) {
    throw ValidationError(path.string() + ": lists tiles that are not in the manifest");
  }
  slide.kept = std::move(kept);
}

// ---------------------------------------------------------------------------

int run_synth(const SynthOptions& o, const CommonOptions&, Logger& log) {
  SynthSpec spec;
  if (!o.spec_file.empty()) spec = SynthSpec::from_keyvalues(KeyValues::load(o.spec_file));
  spec.validate();
  const SynthDataset data = gen_dataset(spec);
  const auto manifests = write_dataset(data, o.out);
  std::size_t positives = 0;
  std::size_t tiles = 0;
  for (const auto& s : data.slides) {
    for (const auto& t : s.manifest.tiles) {
      ++tiles;
      positives += static_cast<std::size_t>(t.label.value_or(0) == 1);
    }
  }
  log.info("synth.done", {{"out", o.out.string()},
                          {"slides", manifests.size()},
                          {"tiles", tiles},
                          {"positive_tiles", positives}});
  return 0;
}

int run_train(const TrainOptions& o, const CommonOptions& common, Logger& log) {
  if (o.manifests.empty()) throw ValidationError("train: at least one manifest is required");
  if (o.k < 1) throw ValidationError("train: k must be >= 1");
  std::vector<LoadedSlide> slides(o.manifests.size());
  parallel_for(slides.size(), common.threads,
               [&](std::size_t n) { slides[n] = load_slide(o.manifests[n], o.tissue, true); });

  std::size_t rows = 0;
  std::uint32_t channels = 0;
  std::vector<std::vector<TrimmedTensor>> trimmed(slides.size());
  for (std::size_t s = 0; s < slides.size(); ++s) {
    const auto& slide = slides[s];
    if (channels == 0) channels = slide.manifest.tensor_shape.channels;
    if (!slide.tensors.empty() && slide.manifest.tensor_shape.channels != channels) {
      throw ValidationError("train: " + slide.manifest.slide_id + " has " +
                            std::to_string(slide.manifest.tensor_shape.channels) + " channels, expected " +
                            std::to_string(channels));
    }
    for (const Tensor& t : slide.tensors) {
      trimmed[s].push_back(trim_border(t, o.margin));
      rows += trimmed[s].back().interior.shape().cells();
    }
    log.info("train.slide", {{"slide", slide.manifest.slide_id},
                             {"tiles", slide.manifest.tiles.size()},
                             {"kept", slide.kept.size()}});
  }
  if (rows == 0) throw ValidationError("train: empty training set (no tiles passed the tissue filter)");

  Matrix V(static_cast<Eigen::Index>(rows), channels);
  Eigen::Index r = 0;
  for (const auto& slide_tiles : trimmed) {
    for (const auto& t : slide_tiles) {
      const auto data = t.interior.data();
      const std::size_t cells = t.interior.shape().cells();
      for (std::size_t cell = 0; cell < cells; ++cell, ++r) {
        for (std::uint32_t c = 0; c < channels; ++c) V(r, c) = data[cell * channels + c];
      }
    }
  }
  trimmed.clear();

  NmfConfig cfg;
  cfg.max_iters = o.max_iters;
  cfg.rel_tol = o.rel_tol;
  cfg.seed = o.seed;
  const TrainResult result = nmf_train(V, o.k, cfg);
  for (const auto& e : result.events) log.warn("train.event", {{"message", e}});

  ensure_dir(o.out);
  save_model(result.model, o.out / "model");
  std::ostringstream history;
  history << "iteration\tobjective\n";
  for (std::size_t i = 0; i < result.objective_history.size(); ++i) {
    history << i << '\t' << format_double(result.objective_history[i]) << '\n';
  }
  write_text_file(o.out / "train_log.tsv", history.str());
  log.info("train.done", {{"rows", rows},
                          {"channels", channels},
                          {"k", o.k},
                          {"iterations", result.model.train_iterations()},
                          {"objective", result.model.final_objective()},
                          {"converged", result.converged}});
  return 0;
}

int run_infer(const InferOptions& o, const CommonOptions& common, Logger& log) {
  if (o.manifests.empty()) throw ValidationError("infer: at least one manifest is required");
  const FactorModel model = load_model(o.model);
  ensure_dir(o.out);
  InferConfig cfg;
  cfg.max_iters = o.max_iters;
  cfg.rel_tol = o.rel_tol;
  std::vector<nlohmann::json> reports(o.manifests.size());
  parallel_for(o.manifests.size(), common.threads, [&](std::size_t n) {
    LoadedSlide slide = load_slide(o.manifests[n], o.tissue, true);
    const std::string& id = slide.manifest.slide_id;
    if (slide.manifest.tensor_shape.channels != static_cast<std::uint32_t>(model.channels())) {
      throw ValidationError("infer: " + id + " has " + std::to_string(slide.manifest.tensor_shape.channels) +
                            " channels but the model expects " + std::to_string(model.channels()));
    }
    if (slide.kept.empty()) throw ValidationError("infer: no tile of " + id + " passed the tissue filter");
    SlideManifest kept_manifest = slide.manifest;
    kept_manifest.tiles.clear();
    for (std::size_t t : slide.kept) kept_manifest.tiles.push_back(slide.manifest.tiles[t]);
    const SlideFeatureGrid grid = aggregate_slide(kept_manifest, slide.tensors, o.margin, 1);
    const SlideInference inf = infer_slide_weights(grid, model, cfg);
    save_grid(inf.weights, weights_stem(o.out, id));
    write_kept_list(slide, o.out);
    reports[n] = {{"slide", id},
                  {"cells", grid.size()},
                  {"kept", slide.kept.size()},
                  {"iterations", inf.details.objective_history.size() - 1},
                  {"converged", inf.details.converged}};
  });
  for (const auto& r : reports) log.info("infer.slide", r);
  return 0;
}

namespace {

std::vector<std::string> weight_slide_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("weights directory " + dir.string() + " does not exist");
  std::vector<std::string> ids;
  const std::string suffix = ".weights.grid";
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw ValidationError("no *.weights.grid files in " + dir.string());
  return ids;
}

}  // namespace

int run_render(const RenderCliOptions& o, const CommonOptions& common, Logger& log) {
  const bool do_class = o.mode == "class" || o.mode == "all";
  const bool do_blend = o.mode == "blend" || o.mode == "all";
  const bool do_cluster = o.mode == "cluster" || o.mode == "all";
  if (!do_class && !do_blend && !do_cluster) {
    throw ValidationError("render: unknown mode '" + o.mode + "' (class, blend, cluster, all)");
  }
  if (!(o.opacity >= 0.0 && o.opacity <= 1.0)) throw ValidationError("render: opacity must be in [0, 1]");
  if (o.tissue_px_per_cell < 1) throw ValidationError("render: tissue pixels per cell must be >= 1");
  const auto ids = weight_slide_ids(o.weights_dir);
  std::map<std::string, fs::path> manifest_for;
  for (const auto& path : o.manifests) manifest_for[load_manifest(path).slide_id] = path;
  ensure_dir(o.out);

  RenderOptions ropt;
  ropt.quantile = o.quantile;
  std::vector<std::size_t> written(ids.size(), 0);
  parallel_for(ids.size(), common.threads, [&](std::size_t n) {
    const std::string& id = ids[n];
    const WeightGrid grid = load_weights(o.weights_dir, id);
    const int k = static_cast<int>(grid.channels());
    const Palette palette = Palette::default_for(k);
    RgbImage tissue;
    if (const auto it = manifest_for.find(id); it != manifest_for.end()) {
      TissueOptions no_filter;
      no_filter.enabled = false;
      LoadedSlide slide = load_slide(it->second, no_filter, false);
      apply_kept_list(slide, o.weights_dir);
      std::vector<RgbImage> images(slide.manifest.tiles.size());
      bool any = false;
      for (std::size_t t : slide.kept) {
        if (const auto& p = slide.manifest.tiles[t].image_path) {
          images[t] = read_png_rgb(*p);
          any = true;
        }
      }
      if (any) {
        if (grid.cell_size_px() % o.tissue_px_per_cell != 0) {
          throw ValidationError("render: tissue pixels per cell must divide the cell size " +
                                std::to_string(grid.cell_size_px()));
        }
        const auto factor = static_cast<int>(grid.cell_size_px() / o.tissue_px_per_cell);
        tissue = downsample_box(build_tissue_mosaic(slide.manifest, images, grid.bounds()), factor);
      }
    }
    RenderOptions cell_scale = ropt;
    cell_scale.scale = 1;
    // Overlays at cell_size_px pixels per cell; composites upscale a
    // one-pixel-per-cell overlay onto the downsampled tissue mosaic.
    auto emit = [&](const auto& draw, const std::string& mode) {
      const std::string base = id + "." + mode + "." + std::to_string(k);
      write_png(draw(ropt), o.out / (base + ".png"));
      ++written[n];
      if (!tissue.empty()) {
        write_png(composite_over_tissue(draw(cell_scale), tissue, o.opacity), o.out / (base + ".tissue.png"));
        ++written[n];
      }
    };
    if (do_class) {
      for (int c = 0; c < k; ++c) {
        emit([&](const RenderOptions& r) { return render_class_heatmap(grid, c, palette, r); },
             "class" + std::to_string(c + 1));
      }
    }
    if (do_blend) emit([&](const RenderOptions& r) { return render_blended(grid, palette, r); }, "blend");
    if (do_cluster) emit([&](const RenderOptions& r) { return render_clustering(grid, palette, r); }, "cluster");
  });
  for (std::size_t n = 0; n < ids.size(); ++n) log.info("render.slide", {{"slide", ids[n]}, {"files", written[n]}});
  return 0;
}

// ---------------------------------------------------------------------------

namespace {

struct TileSample {
  std::vector<double> weights;  // cells x K
  int label = 0;
};

/// Labeled kept tiles of every slide, in manifest order.
std::vector<TileSample> collect_labeled_tiles(const std::vector<fs::path>& manifests, const fs::path& weights_dir,
                                              int margin, int threads, int& k) {
  std::vector<std::vector<TileSample>> per_slide(manifests.size());
  std::vector<int> ks(manifests.size(), 0);
  parallel_for(manifests.size(), threads, [&](std::size_t n) {
    TissueOptions no_filter;
    no_filter.enabled = false;
    LoadedSlide slide = load_slide(manifests[n], no_filter, false);
    apply_kept_list(slide, weights_dir);
    const WeightGrid grid = load_weights(weights_dir, slide.manifest.slide_id);
    ks[n] = static_cast<int>(grid.channels());
    for (std::size_t t : slide.kept) {
      const TileRecord& tile = slide.manifest.tiles[t];
      if (!tile.label) continue;
      per_slide[n].push_back({tile_weights(slide.manifest, tile, grid, margin), *tile.label});
    }
  });
  k = 0;
  std::vector<TileSample> out;
  for (std::size_t n = 0; n < per_slide.size(); ++n) {
    if (k == 0) k = ks[n];
    if (ks[n] != k) throw ValidationError("weight grids disagree on the class count");
    for (auto& t : per_slide[n]) out.push_back(std::move(t));
  }
  return out;
}

std::vector<double> flatten_weights(const std::vector<TileSample>& tiles) {
  std::vector<double> all;
  for (const auto& t : tiles) all.insert(all.end(), t.weights.begin(), t.weights.end());
  return all;
}

std::string sign_char(double v) { return v > 0.0 ? "+" : (v < 0.0 ? "-" : "0"); }

}  // namespace

int run_analyze(const AnalyzeOptions& o, const CommonOptions& common, Logger& log) {
  if (o.manifests.empty()) throw ValidationError("analyze: at least one manifest is required");
  if (o.sample_size < 2) throw ValidationError("analyze: sample size must be >= 2");
  if (o.correlation_mode != "bootstrap" && o.correlation_mode != "per-tile") {
    throw ValidationError("analyze: correlation mode must be bootstrap or per-tile");
  }
  const FactorModel model = load_model(o.model);
  int k = 0;
  std::vector<TileSample> tiles = collect_labeled_tiles(o.manifests, o.weights_dir, o.margin, common.threads, k);
  if (tiles.size() < 2) throw ValidationError("analyze: fewer than 2 labeled tiles");
  if (k != model.k()) throw ValidationError("analyze: weight grids have " + std::to_string(k) +
                                            " classes but the model has " + std::to_string(model.k()));
  const std::size_t available = tiles.size();
  if (tiles.size() > o.sample_size) {
    // Seeded uniform sample without replacement; keeps the label imbalance
    // in expectation and the original order.
    std::vector<std::size_t> idx(tiles.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(o.seed, 0x5A));
    for (std::size_t i = 0; i < o.sample_size; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(o.sample_size);
    std::sort(idx.begin(), idx.end());
    std::vector<TileSample> sampled;
    for (std::size_t i : idx) sampled.push_back(std::move(tiles[i]));
    tiles = std::move(sampled);
  }

  const auto thresholds = relative_positive_thresholds(flatten_weights(tiles), k, o.positive_eps);
  std::vector<TileClassFeatures> features;
  features.reserve(tiles.size());
  for (const auto& t : tiles) features.push_back(tile_class_features(t.weights, k, t.label, thresholds));
  std::size_t positives = 0;
  for (const auto& f : features) positives += static_cast<std::size_t>(f.label == 1);

  ensure_dir(o.out);

  // Surrogates for every feature kind; the selected one is reported in full.
  std::ostringstream signs;
  signs << "feature_kind\tauc\tconverged";
  for (int c = 0; c < k; ++c) signs << "\tsign_" << c + 1;
  signs << '\n';
  SurrogateModel selected;
  bool selected_converged = true;
  for (FeatureKind kind : kAllFeatureKinds) {
    const SurrogateModel m = fit_surrogate(features, kind, o.surrogate);
    signs << to_string(kind) << '\t' << fmt(m.metrics.auc) << '\t' << (m.fit.converged ? "true" : "false");
    for (double c : m.coefficients()) signs << '\t' << sign_char(c);
    signs << '\n';
    if (kind == o.feature_kind) {
      selected = m;
      selected_converged = m.fit.converged;
    }
  }
  write_text_file(o.out / "surrogate_signs.tsv", signs.str());

  std::ostringstream coef;
  coef << "class\tcoefficient\n";
  for (int c = 0; c < k; ++c) coef << c + 1 << '\t' << fmt(selected.coefficients()[static_cast<std::size_t>(c)]) << '\n';
  coef << "intercept\t" << fmt(selected.fit.intercept) << '\n';
  write_text_file(o.out / "surrogate.tsv", coef.str());

  const Metrics& mt = selected.metrics;
  std::ostringstream summary;
  summary << "feature_kind = " << to_string(o.feature_kind) << '\n'
          << "tiles_available = " << available << '\n'
          << "tiles_used = " << features.size() << '\n'
          << "positive_tiles = " << positives << '\n'
          << "positive_eps = " << format_double(o.positive_eps) << '\n'
          << "accuracy = " << fmt(mt.accuracy) << '\n'
          << "precision = " << fmt(mt.precision) << '\n'
          << "recall = " << fmt(mt.recall) << '\n'
          << "f1 = " << fmt(mt.f1) << '\n'
          << "auc = " << fmt(mt.auc) << '\n'
          << "precision_undefined = " << (mt.precision_undefined ? "true" : "false") << '\n'
          << "recall_undefined = " << (mt.recall_undefined ? "true" : "false") << '\n'
          << "f1_undefined = " << (mt.f1_undefined ? "true" : "false") << '\n'
          << "auc_undefined = " << (mt.auc_undefined ? "true" : "false") << '\n'
          << "surrogate_iterations = " << selected.fit.iterations << '\n'
          << "surrogate_converged = " << (selected_converged ? "true" : "false") << '\n'
          << "correlation_mode = " << o.correlation_mode << '\n';
  write_text_file(o.out / "analysis_summary.txt", summary.str());

  // Class weight correlation.
  CorrelationMatrix corr;
  if (o.correlation_mode == "bootstrap") {
    BootstrapConfig bc;
    bc.resamples = o.resamples;
    bc.batch_size = o.batch_size;
    bc.seed = o.seed;
    corr = weight_correlation_matrix(features, o.feature_kind, bc);
  } else {
    std::vector<std::vector<double>> maps;
    for (const auto& t : tiles) maps.push_back(t.weights);
    corr = weight_correlation_per_tile(maps, k);
  }
  std::ostringstream ct;
  ct << "class_a\tclass_b\tmean\tstd\tsamples\tmissing\n";
  Matrix cm(k, k);
  Matrix cs(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      const auto& e = corr.at(a, b);
      ct << a + 1 << '\t' << b + 1 << '\t' << fmt(e.mean) << '\t' << fmt(e.std) << '\t' << e.samples << '\t'
         << (e.missing ? "true" : "false") << '\n';
      cm(a, b) = e.mean;
      cs(a, b) = e.std;
    }
  }
  write_text_file(o.out / "correlation.tsv", ct.str());
  write_matrix_tensor(cm, o.out / "correlation_mean.clt", DType::kSigned);
  write_matrix_tensor(cs, o.out / "correlation_std.clt", DType::kNonNegative);

  const Matrix cos = class_cosine_similarity(model);
  std::ostringstream cost;
  cost << "class";
  for (int c = 0; c < k; ++c) cost << '\t' << c + 1;
  cost << '\n';
  for (int a = 0; a < k; ++a) {
    cost << a + 1;
    for (int b = 0; b < k; ++b) cost << '\t' << fmt(cos(a, b));
    cost << '\n';
  }
  write_text_file(o.out / "cosine.tsv", cost.str());
  write_matrix_tensor(cos, o.out / "cosine.clt", DType::kNonNegative);

  log.info("analyze.done", {{"tiles", features.size()},
                            {"positive_tiles", positives},
                            {"feature_kind", to_string(o.feature_kind)},
                            {"auc", mt.auc},
                            {"surrogate_converged", selected_converged}});
  if (!selected_converged) {
    log.warn("analyze.surrogate_not_converged", {{"iterations", selected.fit.iterations}});
    return 4;
  }
  return 0;
}

int run_compare(const CompareOptions& o, const CommonOptions& common, Logger& log) {
  if (o.manifests.empty()) throw ValidationError("compare: at least one manifest is required");
  if (o.positive_eps < 0.0) throw ValidationError("compare: positive epsilon must be >= 0");

  struct SlideData {
    std::string id;
    std::vector<TileComparison> tiles;
    SlideSaliencyGrid saliency;
    WeightGrid weights;
  };
  std::vector<LoadedSlide> slides(o.manifests.size());
  for (std::size_t n = 0; n < slides.size(); ++n) {
    TissueOptions no_filter;
    no_filter.enabled = false;
    slides[n] = load_slide(o.manifests[n], no_filter, false);
    apply_kept_list(slides[n], o.weights_dir);
  }
  // Fail before any work when gradients are missing, naming every such tile.
  std::vector<std::string> missing;
  for (const auto& s : slides) {
    for (std::size_t t : s.kept) {
      if (!s.manifest.tiles[t].gradient_path) missing.push_back(tile_name(s.manifest, s.manifest.tiles[t]));
    }
  }
  if (!missing.empty()) {
    std::string msg = "compare: " + std::to_string(missing.size()) + " tile(s) have no gradient tensor: ";
    for (std::size_t n = 0; n < missing.size() && n < 10; ++n) msg += (n ? ", " : "") + missing[n];
    if (missing.size() > 10) msg += ", ...";
    throw ValidationError(msg);
  }

  std::vector<SlideData> data(slides.size());
  parallel_for(slides.size(), common.threads, [&](std::size_t n) {
    const LoadedSlide& s = slides[n];
    SlideData& d = data[n];
    d.id = s.manifest.slide_id;
    d.weights = load_weights(o.weights_dir, d.id);
    SlideManifest kept_manifest = s.manifest;
    kept_manifest.tiles.clear();
    std::vector<Tensor> maps;
    for (std::size_t t : s.kept) {
      const TileRecord& tile = s.manifest.tiles[t];
      const Tensor activations = read_tensor(tile.tensor_path);
      const Tensor gradients = read_tensor(*tile.gradient_path);
      const Tensor cam = gradcam(activations, gradients).to_tensor();
      const Tensor interior = trim_border(cam, o.margin).interior;
      TileComparison tc;
      tc.label = tile.label.value_or(0);
      tc.k = static_cast<int>(d.weights.channels());
      tc.weights = tile_weights(s.manifest, tile, d.weights, o.margin);
      tc.saliency.assign(interior.data().begin(), interior.data().end());
      d.tiles.push_back(std::move(tc));
      kept_manifest.tiles.push_back(tile);
      maps.push_back(cam);
    }
    d.saliency = aggregate_scalar_maps(kept_manifest, maps, o.margin, 1);
  });

  const int k = data.empty() ? 0 : static_cast<int>(data.front().weights.channels());
  std::vector<double> all_weights;
  std::vector<double> all_saliency;
  for (const auto& d : data) {
    if (static_cast<int>(d.weights.channels()) != k) throw ValidationError("weight grids disagree on the class count");
    for (const auto& t : d.tiles) {
      all_weights.insert(all_weights.end(), t.weights.begin(), t.weights.end());
      all_saliency.insert(all_saliency.end(), t.saliency.begin(), t.saliency.end());
    }
  }
  const auto thresholds = relative_positive_thresholds(all_weights, k, o.positive_eps);
  const double saliency_threshold = relative_positive_thresholds(all_saliency, 1, o.positive_eps)[0];

  std::vector<TileComparison> tiles;
  for (auto& d : data) {
    for (auto& t : d.tiles) {
      suppress_small_values(t, thresholds, saliency_threshold);
      tiles.push_back(t);
    }
  }
  ComparisonReport report = compare_saliency(tiles, k, 0.0);

  if (o.per_slide) {
    // IoU on whole-slide grids instead of per tile.
    for (int c = 0; c < k; ++c) {
      report.classes[static_cast<std::size_t>(c)].iou = RunningStats();
      report.classes[static_cast<std::size_t>(c)].empty_union = 0;
    }
    for (const auto& d : data) {
      std::vector<double> sal;
      std::vector<std::vector<double>> cls(static_cast<std::size_t>(k));
      for (std::size_t n = 0; n < d.saliency.size(); ++n) {
        const auto w = d.weights.find(d.saliency.cell(n));
        if (!w) continue;
        const double s = d.saliency.values(n)[0];
        sal.push_back(s > saliency_threshold ? s : 0.0);
        const auto v = d.weights.values(*w);
        for (int c = 0; c < k; ++c) {
          const double x = v[static_cast<std::size_t>(c)];
          cls[static_cast<std::size_t>(c)].push_back(x > thresholds[static_cast<std::size_t>(c)] ? x : 0.0);
        }
      }
      for (int c = 0; c < k; ++c) {
        const IouResult r = iou_positive(cls[static_cast<std::size_t>(c)], sal, 0.0);
        report.classes[static_cast<std::size_t>(c)].iou.add(r.iou);
        report.classes[static_cast<std::size_t>(c)].empty_union += static_cast<std::size_t>(r.empty_union);
      }
    }
  }

  ensure_dir(o.out);
  write_text_file(o.out / "gradcam_comparison.tsv", format_comparison_tsv(report));
  for (const auto& d : data) save_grid(d.saliency, o.out / (d.id + ".saliency"));
  log.info("compare.done", {{"tiles", tiles.size()}, {"k", k}, {"iou_mode", o.per_slide ? "slide" : "tile"}});
  return 0;
}

}  // namespace featclust::cli
