// Acceptance run: one [PASS]/[FAIL] line per criterion, exit status 1 if any
// criterion fails. Usage: acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "featclust/aggregation.hpp"
#include "featclust/analysis.hpp"
#include "featclust/keyvalue.hpp"
#include "featclust/nmf.hpp"
#include "featclust/saliency.hpp"
#include "featclust/stats.hpp"
#include "featclust/synth.hpp"
#include "featclust/tensor_io.hpp"
#include "generators.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace featclust;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// End-to-end runs (shared by the surrogate, GradCAM and determinism checks)

struct PipelineRun {
  fs::path root;
  int exit_code = -1;
  std::string failed_step;
  double seconds = 0.0;
};

int cli(const std::vector<std::string>& args, std::ostream& log) {
  std::vector<const char*> argv{"featclust"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return featclust::cli::run_cli(static_cast<int>(argv.size()), argv.data(), log);
}

std::vector<std::string> manifests_under(const fs::path& data) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(data))
    if (fs::exists(e.path() / "manifest.txt")) out.push_back((e.path() / "manifest.txt").string());
  std::sort(out.begin(), out.end());
  return out;
}

PipelineRun run_pipeline(const fs::path& root, int threads) {
  PipelineRun run;
  run.root = root;
  fs::remove_all(root);
  fs::create_directories(root);
  // Logs live beside the outputs, not among them.
  std::ofstream log(root.string() + ".log");
  const std::string t = std::to_string(threads);
  const fs::path data = root / "data", model = root / "model", w = root / "weights";
  const auto start = Clock::now();

  auto step = [&](const std::string& name, std::vector<std::string> args, bool with_manifests) {
    if (run.exit_code > 0) return;
    if (with_manifests) {
      args.push_back("--manifests");
      for (const auto& m : manifests_under(data)) args.push_back(m);
    }
    args.insert(args.begin(), {"--threads", t});
    run.exit_code = cli(args, log);
    if (run.exit_code != 0) run.failed_step = name;
  };
  step("synth", {"synth", "--out", data.string()}, false);
  step("train", {"train", "--k", "6", "--out", model.string()}, true);
  step("infer", {"infer", "--model", (model / "model").string(), "--out", w.string()}, true);
  step("render", {"render", "--weights-dir", w.string(), "--out", (root / "render").string()}, true);
  step("analyze", {"analyze", "--weights-dir", w.string(), "--model", (model / "model").string(), "--positive-eps", "0.05",
                   "--out", (root / "analysis").string()}, true);
  step("compare", {"compare", "--weights-dir", w.string(), "--positive-eps", "0.05", "--out", (root / "compare").string()},
       true);
  run.seconds = seconds_since(start);
  return run;
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Learned class index -> planted class index, by class-vector cosine.
std::vector<int> learned_to_planted(const PipelineRun& run) {
  const FactorModel model = load_model(run.root / "model" / "model");
  const Tensor planted = read_tensor(run.root / "data" / "planted_basis.clt");
  Matrix h(planted.height(), planted.width());
  for (std::uint32_t r = 0; r < planted.height(); ++r)
    for (std::uint32_t c = 0; c < planted.width(); ++c) h(r, c) = planted.at(r, c, 0);
  return match_classes(model.basis(), h);
}

// ---------------------------------------------------------------------------
// Criteria

Outcome nmf_monotone_descent() {
  const auto start = Clock::now();
  gen::Rng rng(2024);
  const int ks[] = {4, 6, 8};
  double worst = 0.0;
  int violations = 0;
  for (int m = 0; m < 50; ++m) {
    const Matrix v = gen::nonneg_matrix(rng, 200, 64);
    const TrainResult r =
        nmf_train(v, ks[m % 3], {.max_iters = 200, .rel_tol = 0.0, .seed = static_cast<std::uint64_t>(m)});
    for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
      const double rise = (r.objective_history[i] - r.objective_history[i - 1]) / r.objective_history[i - 1];
      worst = std::max(worst, rise);
      violations += rise > 1e-10;
    }
  }
  const double secs = seconds_since(start);
  return {violations == 0 && secs < 30.0,
          "50 matrices 200x64, K in {4,6,8}, worst relative rise " + fmt("%.3g", worst) + ", " + fmt("%.1f s", secs)};
}

double relative_error(const Matrix& v, const TrainResult& r) {
  return std::sqrt(objective(v, r.weights, r.model.basis())) / v.norm();
}

Outcome planted_recovery() {
  double worst_err = 0.0, worst_match = 1.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PlantedMatrix clean = gen_planted_matrix({.seed = seed, .rows = 500, .channels = 64, .k = 6});
    const TrainResult r = nmf_train(clean.V, 6, {.max_iters = 500, .rel_tol = 0.0, .seed = seed});
    worst_err = std::max(worst_err, relative_error(clean.V, r));

    const PlantedMatrix noisy =
        gen_planted_matrix({.seed = seed, .rows = 500, .channels = 64, .k = 6, .noise_sigma = 0.01});
    const TrainResult rn = nmf_train(noisy.V, 6, {.max_iters = 500, .rel_tol = 0.0, .seed = seed});
    const InferResult inf = nmf_infer(rn.model, noisy.V, {.max_iters = 200, .rel_tol = 0.0});
    const std::vector<int> map = match_classes(rn.model.basis(), noisy.H);
    const std::vector<int> cluster = argmax_cluster(inf.weights);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < cluster.size(); ++i)
      hits += cluster[i] != kUnassigned && map[static_cast<std::size_t>(cluster[i])] == noisy.dominant[i];
    worst_match = std::min(worst_match, static_cast<double>(hits) / static_cast<double>(cluster.size()));
  }
  return {worst_err <= 1e-2 && worst_match >= 0.95,
          "seeds 1-5, 500x64 K=6: worst noiseless relative error " + fmt("%.2e", worst_err) +
              " (500 iterations), worst argmax agreement at sigma 0.01 " + fmt("%.4f", worst_match)};
}

Outcome fixed_basis_inference() {
  gen::Rng rng(77);
  std::size_t rows = 0, hits = 0;
  std::vector<Matrix> bases;
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    bases.push_back(gen_planted_matrix({.seed = seed, .rows = 6, .channels = 64, .k = 6}).H);
  bases.push_back(synth_basis(SynthSpec{}));
  for (const Matrix& h : bases) {
    const FactorModel model(h, 0, 0, 0.0);
    const int k = model.k();
    Matrix v(20 * k, h.cols());
    std::vector<int> truth;
    for (int r = 0; r < v.rows(); ++r) {
      truth.push_back(r % k);
      v.row(r) = rng.uniform(0.05, 20.0) * h.row(r % k);
    }
    const std::vector<int> got = argmax_cluster(nmf_infer(model, v, {}).weights);
    for (std::size_t i = 0; i < got.size(); ++i) hits += got[i] == truth[i];
    rows += got.size();
  }
  return {hits == rows, std::to_string(hits) + "/" + std::to_string(rows) + " scaled basis rows over 6 bases"};
}

struct Layout {
  SlideManifest manifest;
  std::vector<Tensor> tensors;
};

Layout random_layout(gen::Rng& rng) {
  Layout out;
  out.manifest.slide_id = "acc";
  out.manifest.cell_size_px = 4;
  const int cells = 2 * rng.integer(3, 8);
  out.manifest.tile_size_px = 4 * cells;
  out.manifest.stride_px = out.manifest.tile_size_px / (rng.coin() ? 2 : 1);
  const auto c = static_cast<std::uint32_t>(rng.integer(1, 6));
  const int nx = rng.integer(1, 5), ny = rng.integer(1, 5);
  for (int y = 0; y < ny; ++y) {
    for (int x = 0; x < nx; ++x) {
      if (rng.coin(0.2) && !(x == 0 && y == 0)) continue;
      out.manifest.tiles.push_back({x * out.manifest.stride_px, y * out.manifest.stride_px, "t", {}, {}, {}, {}});
      out.tensors.push_back(gen::tensor(rng, static_cast<std::uint32_t>(cells), static_cast<std::uint32_t>(cells), c));
    }
  }
  return out;
}

Outcome aggregation_oracle() {
  gen::Rng rng(31337);
  int layouts = 0, mismatches = 0, variant_failures = 0;
  for (; layouts < 300; ++layouts) {
    const Layout l = random_layout(rng);
    const int margin = rng.integer(0, static_cast<int>(l.manifest.cells_per_tile() / 2) - 1);
    const SlideFeatureGrid grid = aggregate_slide(l.manifest, l.tensors, margin, 1);

    // The oracle visits tiles in row-major origin order, as generated.
    oracle::CellAccumulator acc;
    for (std::size_t t = 0; t < l.tensors.size(); ++t)
      acc.add_tile(l.manifest.tiles[t], l.tensors[t], l.manifest.cell_size_px, margin);
    bool same = grid.size() == acc.cells.size();
    std::size_t n = 0;
    for (const auto& [key, entry] : acc.cells) {
      if (!same) break;
      const auto& [sum, count] = entry;
      same = grid.cell(n) == CellCoord{key.second, key.first} && grid.count(n) == count;
      for (std::size_t c = 0; same && c < sum.size(); ++c)
        same = grid.values(n)[c] == static_cast<float>(sum[c] / count);
      ++n;
    }
    mismatches += !same;

    std::vector<std::size_t> perm(l.tensors.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Layout shuffled{l.manifest, {}};
    shuffled.manifest.tiles.clear();
    for (std::size_t p : perm) {
      shuffled.manifest.tiles.push_back(l.manifest.tiles[p]);
      shuffled.tensors.push_back(l.tensors[p]);
    }
    variant_failures += !(aggregate_slide(shuffled.manifest, shuffled.tensors, margin, rng.integer(2, 6)) == grid);
  }
  return {mismatches == 0 && variant_failures == 0,
          std::to_string(layouts) + " layouts up to 5x5 tiles: " + std::to_string(mismatches) +
              " oracle mismatches, " + std::to_string(variant_failures) + " permutation/thread differences"};
}

Outcome trim_geometry() {
  gen::Rng rng(8);
  const Tensor t = gen::tensor(rng, 32, 32, 4);
  const TrimmedTensor trimmed = trim_border(t, 2);
  bool ok = trimmed.interior.shape() == TensorShape{28, 28, 4} && trimmed.offset == 2;
  for (std::uint32_t i = 0; ok && i < 28; ++i)
    for (std::uint32_t j = 0; ok && j < 28; ++j) ok = trimmed.interior.at(i, j, 3) == t.at(i + 2, j + 2, 3);

  SlideManifest m;
  m.slide_id = "trim";
  const TileRecord tile{256, 512, "t", {}, {}, {}, {}};
  m.tiles = {tile};
  const CellCoord c35 = cell_to_slide_coords(tile, 3, 5, m.cell_size_px);
  ok = ok && c35 == CellCoord{21, 35};
  const auto cells = tile_interior_cells(m, tile, 2);
  // Interior (1, 3) is tensor (3, 5).
  ok = ok && cells.size() == 28 * 28 && cells.front() == CellCoord{18, 34} && cells[1 * 28 + 3] == CellCoord{21, 35} &&
       cells.back() == CellCoord{16 + 29, 32 + 29};
  const std::vector<Tensor> one{t};
  const SlideFeatureGrid g = aggregate_slide(m, one, 2);
  const auto at = g.find({21, 35});
  ok = ok && g.size() == 28 * 28 && at && g.values(*at)[0] == t.at(3, 5, 0);
  return {ok, "32x32 margin 2 -> 28x28 at offset 2; origin (256,512) cell (3,5) -> (" + std::to_string(c35.gx) + "," +
                  std::to_string(c35.gy) + ")"};
}

Outcome metric_oracles() {
  gen::Rng rng(99);
  int auc_bad = 0, prf_bad = 0, pearson_bad = 0, cos_bad = 0, iou_bad = 0;
  double worst = 0.0;
  auto close = [&](double a, double b) {
    worst = std::max(worst, std::abs(a - b));
    return std::abs(a - b) <= 1e-12;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> scores;
    std::vector<int> labels;
    gen::scored_labels(rng, static_cast<std::size_t>(rng.integer(2, 50)), scores, labels);
    auc_bad += !close(auc_mann_whitney(scores, labels), oracle::auc_pairs(scores, labels));

    const double threshold = rng.uniform();
    const Metrics m = metric_suite(scores, labels, threshold);
    const oracle::Confusion c = oracle::confusion(scores, labels, threshold);
    const double p = c.tp + c.fp == 0 ? 0.0 : double(c.tp) / (c.tp + c.fp);
    const double r = c.tp + c.fn == 0 ? 0.0 : double(c.tp) / (c.tp + c.fn);
    const double f1 = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    prf_bad += !(m.precision == p && m.recall == r && close(m.f1, f1));
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(2, 40));
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.coin(0.05) ? 0.0 : rng.normal();
      b[i] = rng.coin(0.05) ? 0.0 : rng.normal() + 0.5 * a[i];
    }
    const auto pg = pearson(a, b), po = oracle::pearson(a, b);
    pearson_bad += !(pg.has_value() == po.has_value() && (!pg || close(*pg, *po)));
    const auto cg = cosine_similarity(a, b), co = oracle::cosine(a, b);
    cos_bad += !(cg.has_value() == co.has_value() && (!cg || close(*cg, *co)));
    for (double& x : a) x = std::max(0.0, x);
    for (double& x : b) x = std::max(0.0, x);
    const double eps = rng.coin() ? 0.0 : rng.uniform(0.0, 0.5);
    iou_bad += iou_positive(a, b, eps).iou != oracle::iou_sets(a, b, eps);
  }
  const int bad = auc_bad + prf_bad + pearson_bad + cos_bad + iou_bad;
  return {bad == 0, "1000 instances each; failures auc " + std::to_string(auc_bad) + ", precision/recall/f1 " +
                        std::to_string(prf_bad) + ", pearson " + std::to_string(pearson_bad) + ", cosine " +
                        std::to_string(cos_bad) + ", iou " + std::to_string(iou_bad) + "; worst deviation " +
                        fmt("%.2g", worst)};
}

Outcome surrogate_fidelity(const PipelineRun& run) {
  if (run.exit_code != 0) return {false, "pipeline failed at " + run.failed_step};
  const SynthSpec spec = SynthSpec::from_keyvalues(KeyValues::load(run.root / "data" / "synth_spec.txt"));
  const std::vector<int> map = learned_to_planted(run);
  const auto rows = read_tsv(run.root / "analysis" / "surrogate_signs.tsv");
  bool ok = rows.size() == 5;
  double sum_auc = 0.0;
  std::string detail;
  for (std::size_t r = 1; ok && r < rows.size(); ++r) {
    const auto& row = rows[r];
    ok = row.size() == 3 + map.size();
    if (!ok) break;
    // Signs in planted class order.
    std::string planted_signs(map.size(), '?');
    for (std::size_t learned = 0; learned < map.size(); ++learned)
      planted_signs[static_cast<std::size_t>(map[learned])] = row[3 + learned][0];
    for (std::size_t c = 0; c < map.size(); ++c)
      ok = ok && planted_signs[c] == (spec.label_weights[c] > 0.0 ? '+' : '-');
    const double auc = parse_double(row[1], "auc");
    if (row[0] == "sum") sum_auc = auc;
    detail += (detail.empty() ? "" : ", ") + row[0] + " " + planted_signs + " auc " + fmt("%.4f", auc);
  }
  ok = ok && sum_auc >= 0.99;
  return {ok, "expected signs -+-++- by planted class; " + detail};
}

Outcome gradcam_contract(const PipelineRun& run) {
  gen::Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto h = static_cast<std::uint32_t>(rng.integer(1, 8));
    const auto w = static_cast<std::uint32_t>(rng.integer(1, 8));
    const auto c = static_cast<std::uint32_t>(rng.integer(1, 16));
    const Tensor a = gen::tensor(rng, h, w, c);
    const Tensor g = gen::tensor(rng, h, w, c, DType::kSigned);
    const SaliencyGrid s = gradcam(a, g);
    const auto o = oracle::gradcam(a, g);
    for (std::size_t n = 0; n < o.size(); ++n) worst = std::max(worst, std::abs(s.values[n] - o[n]));
  }
  bool ok = worst <= 1e-6;
  std::string detail = "oracle worst deviation " + fmt("%.2g", worst) + " on 1000 tensors <= 8x8x16";
  if (run.exit_code != 0) return {false, detail + "; pipeline failed at " + run.failed_step};

  const SynthSpec spec = SynthSpec::from_keyvalues(KeyValues::load(run.root / "data" / "synth_spec.txt"));
  const std::vector<int> map = learned_to_planted(run);
  const auto rows = read_tsv(run.root / "compare" / "gradcam_comparison.tsv");
  ok = ok && rows.size() == map.size() + 1;
  // Columns: class, iou mean/std, benign mean/std, cancer mean/std, ...
  std::vector<std::string> per_class(map.size());
  for (std::size_t r = 1; ok && r < rows.size(); ++r) {
    const auto learned = static_cast<std::size_t>(parse_int(rows[r][0], "class") - 1);
    const auto planted = static_cast<std::size_t>(map[learned]);
    const double benign = parse_double(rows[r][3], "corr"), cancer = parse_double(rows[r][5], "corr");
    const bool positive = spec.label_weights[planted] > 0.0;
    ok = ok && (positive ? std::min(benign, cancer) >= 0.5 : std::max(benign, cancer) <= 0.1);
    per_class[planted] = std::to_string(planted + 1) + (positive ? "+" : "-") + " " + fmt("%.2f", benign) + "/" +
                         fmt("%.2f", cancer);
  }
  detail += "; correlation benign/cancer by planted class:";
  for (const auto& s : per_class) detail += " " + s;
  return {ok, detail};
}

Outcome end_to_end_determinism(const PipelineRun& a, const PipelineRun& b) {
  if (a.exit_code != 0 || b.exit_code != 0) {
    return {false, "pipeline failed (" + a.failed_step + b.failed_step + ")"};
  }
  std::size_t files = 0, differ = 0;
  std::string first;
  for (const auto& e : fs::recursive_directory_iterator(a.root)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), a.root);
    const fs::path other = b.root / rel;
    std::ifstream fa(e.path(), std::ios::binary), fb(other, std::ios::binary);
    const std::string da{std::istreambuf_iterator<char>(fa), {}}, db{std::istreambuf_iterator<char>(fb), {}};
    if (!fs::exists(other) || da != db) {
      ++differ;
      if (first.empty()) first = rel.string();
    }
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b.root)) files_b += e.is_regular_file();
  const bool ok = differ == 0 && files == files_b && files > 0 && a.seconds < 300.0 && b.seconds < 300.0;
  return {ok, std::to_string(files) + " files compared across --threads 1 and 4, " + std::to_string(differ) +
                  " differ" + (first.empty() ? "" : " (first: " + first + ")") + "; runs took " +
                  fmt("%.0f s", a.seconds) + " and " + fmt("%.0f s", b.seconds)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "featclust_acceptance";
  fs::create_directories(work);

  const PipelineRun first = run_pipeline(work / "run_threads1", 1);
  const PipelineRun second = run_pipeline(work / "run_threads4", 4);

  struct Named {
    const char* name;
    Outcome outcome;
  };
  const Named results[] = {
      {"nmf monotone descent", nmf_monotone_descent()},
      {"planted factor recovery", planted_recovery()},
      {"fixed-basis inference", fixed_basis_inference()},
      {"aggregation oracle", aggregation_oracle()},
      {"trim geometry", trim_geometry()},
      {"metric oracles", metric_oracles()},
      {"surrogate fidelity pattern", surrogate_fidelity(first)},
      {"gradcam contract", gradcam_contract(first)},
      {"end-to-end determinism", end_to_end_determinism(first, second)},
  };
  int failed = 0;
  for (const auto& r : results) {
    std::printf("[%s] %s: %s\n", r.outcome.pass ? "PASS" : "FAIL", r.name, r.outcome.detail.c_str());
    failed += !r.outcome.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(results)) - failed, std::size(results));
  return failed == 0 ? 0 : 1;
}
