#include "featclust/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "featclust/error.hpp"
#include "featclust/image.hpp"
#include "featclust/stats.hpp"
#include "featclust/tensor_io.hpp"

namespace featclust {

namespace fs = std::filesystem;

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void normalize_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) m.row(r) /= n;
  }
}

std::vector<double> resized_label_weights(const SynthSpec& spec) {
  std::vector<double> w = spec.label_weights;
  w.resize(static_cast<std::size_t>(spec.k), 0.0);
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------

PlantedMatrix gen_planted_matrix(const PlantedSpec& spec) {
  if (spec.rows < 1 || spec.channels < 1 || spec.k < 1 || spec.k > spec.rows) {
    throw ValidationError("gen_planted_matrix: need rows >= k >= 1 and channels >= 1");
  }
  if (spec.noise_sigma < 0.0) throw ValidationError("gen_planted_matrix: noise_sigma must be >= 0");
  std::mt19937_64 rng(spec.seed);
  PlantedMatrix p;
  p.H = Matrix::Zero(spec.k, spec.channels);
  for (int r = 0; r < spec.k; ++r) {
    do {
      for (int c = 0; c < spec.channels; ++c) {
        p.H(r, c) = uniform(rng, 0.0, 1.0) < spec.basis_sparsity ? 0.0 : uniform(rng, 0.0, 1.0);
      }
    } while (p.H.row(r).maxCoeff() <= 0.0);
  }
  normalize_rows(p.H);

  p.W = Matrix::Zero(spec.rows, spec.k);
  p.dominant.resize(static_cast<std::size_t>(spec.rows));
  std::uniform_int_distribution<int> pick(0, spec.k - 1);
  for (int r = 0; r < spec.rows; ++r) {
    const int d = pick(rng);
    p.dominant[static_cast<std::size_t>(r)] = d;
    p.W(r, d) = uniform(rng, 1.0, 2.0);
    if (spec.k > 1 && uniform(rng, 0.0, 1.0) < spec.secondary_prob) {
      int s = pick(rng);
      while (s == d) s = pick(rng);
      p.W(r, s) = uniform(rng, 0.0, 0.3) * p.W(r, d);
    }
  }
  p.V = p.W * p.H;
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Eigen::Index c = 0; c < p.V.cols(); ++c)
      for (Eigen::Index r = 0; r < p.V.rows(); ++r) p.V(r, c) = std::max(0.0, p.V(r, c) + noise(rng));
  }
  return p;
}

std::vector<int> match_classes(const Matrix& learned, const Matrix& planted) {
  if (learned.rows() != planted.rows() || learned.cols() != planted.cols()) {
    throw ValidationError("match_classes: basis shapes differ");
  }
  const int k = static_cast<int>(learned.rows());
  Matrix cos(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      const double na = learned.row(a).norm();
      const double nb = planted.row(b).norm();
      cos(a, b) = (na > 0 && nb > 0) ? learned.row(a).dot(planted.row(b)) / (na * nb) : 0.0;
    }
  std::vector<int> perm(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
  if (k <= 8) {
    std::vector<int> best = perm;
    double best_score = -1.0;
    do {
      double s = 0.0;
      for (int a = 0; a < k; ++a) s += cos(a, perm[static_cast<std::size_t>(a)]);
      if (s > best_score) {
        best_score = s;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }
  std::vector<bool> used(static_cast<std::size_t>(k), false);
  for (int a = 0; a < k; ++a) {
    int arg = -1;
    for (int b = 0; b < k; ++b)
      if (!used[static_cast<std::size_t>(b)] && (arg < 0 || cos(a, b) > cos(a, arg))) arg = b;
    used[static_cast<std::size_t>(arg)] = true;
    perm[static_cast<std::size_t>(a)] = arg;
  }
  return perm;
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("synth spec: " + m); };
  if (n_slides < 1) fail("n_slides must be >= 1");
  if (n_tiles < 1) fail("n_tiles must be >= 1");
  if (tile_size_px < 1 || stride_px < 1 || cells < 1) fail("geometry values must be positive");
  if (tile_size_px % stride_px != 0) fail("stride_px must divide tile_size_px");
  if (tile_size_px % cells != 0) fail("cells must divide tile_size_px");
  if (stride_px % (tile_size_px / cells) != 0) fail("stride_px must be a multiple of the cell size");
  if (k < 1 || channels < k) fail("need 1 <= k <= channels");
  if (noise_sigma < 0.0 || basis_overlap < 0.0 || border_jitter < 0.0 || border_jitter >= 1.0 ||
      gradient_noise < 0.0) {
    fail("noise_sigma, basis_overlap, gradient_noise must be >= 0 and border_jitter in [0, 1)");
  }
  if (border_width < 0 || 2 * border_width >= cells) fail("border_width too large");
  if (background_fraction < 0.0 || background_fraction > 1.0) fail("background_fraction outside [0, 1]");
  if (regions < 0) fail("regions must be >= 0");
  if (!(region_density > 0.0)) fail("region_density must be > 0");
  if (slide_positive_classes < 0) fail("slide_positive_classes must be >= 0");
  if (positive_fraction < 0.0 || positive_fraction > 1.0) fail("positive_fraction outside [0, 1]");
  if (feature_source == FeatureSource::kExtractor &&
      tile_size_px / cells != ToyFeatureExtractor::kDownsample) {
    fail("the toy extractor needs tile_size_px / cells = 16");
  }
}

SynthSpec SynthSpec::from_keyvalues(const KeyValues& kv) {
  SynthSpec s;
  for (const auto& [key, value] : kv.entries()) {
    const std::string what = "synth spec " + key;
    auto as_int = [&] { return static_cast<int>(parse_int(value, what)); };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw FormatError(what + ": expected true/false");
    };
    if (key == "seed") s.seed = static_cast<std::uint64_t>(parse_int(value, what));
    else if (key == "n_slides") s.n_slides = as_int();
    else if (key == "n_tiles") s.n_tiles = as_int();
    else if (key == "tile_size_px") s.tile_size_px = as_int();
    else if (key == "stride_px") s.stride_px = as_int();
    else if (key == "cells") s.cells = as_int();
    else if (key == "channels") s.channels = as_int();
    else if (key == "k") s.k = as_int();
    else if (key == "noise_sigma") s.noise_sigma = parse_double(value, what);
    else if (key == "basis_overlap") s.basis_overlap = parse_double(value, what);
    else if (key == "border_jitter") s.border_jitter = parse_double(value, what);
    else if (key == "border_width") s.border_width = as_int();
    else if (key == "background_fraction") s.background_fraction = parse_double(value, what);
    else if (key == "regions") s.regions = as_int();
    else if (key == "region_density") s.region_density = parse_double(value, what);
    else if (key == "slide_positive_classes") s.slide_positive_classes = as_int();
    else if (key == "positive_fraction") s.positive_fraction = parse_double(value, what);
    else if (key == "label_threshold") s.label_threshold = parse_double(value, what);
    else if (key == "gradient_noise") s.gradient_noise = parse_double(value, what);
    else if (key == "write_gradients") s.write_gradients = as_bool();
    else if (key == "write_images") s.write_images = as_bool();
    else if (key == "feature_source") {
      if (value == "planted") s.feature_source = FeatureSource::kPlanted;
      else if (value == "extractor") s.feature_source = FeatureSource::kExtractor;
      else throw FormatError(what + ": expected planted or extractor");
    } else if (key == "label_weights") {
      s.label_weights.clear();
      std::istringstream in(value);
      for (std::string item; std::getline(in, item, ',');) {
        const auto first = item.find_first_not_of(' ');
        const auto last = item.find_last_not_of(' ');
        if (first == std::string::npos) throw FormatError(what + ": empty entry");
        s.label_weights.push_back(parse_double(item.substr(first, last - first + 1), what));
      }
    } else {
      throw FormatError("synth spec: unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

std::string SynthSpec::to_text() const {
  std::ostringstream out;
  out << "seed = " << seed << '\n'
      << "n_slides = " << n_slides << '\n'
      << "n_tiles = " << n_tiles << '\n'
      << "tile_size_px = " << tile_size_px << '\n'
      << "stride_px = " << stride_px << '\n'
      << "cells = " << cells << '\n'
      << "channels = " << channels << '\n'
      << "k = " << k << '\n'
      << "noise_sigma = " << format_double(noise_sigma) << '\n'
      << "basis_overlap = " << format_double(basis_overlap) << '\n'
      << "border_jitter = " << format_double(border_jitter) << '\n'
      << "border_width = " << border_width << '\n'
      << "background_fraction = " << format_double(background_fraction) << '\n'
      << "regions = " << regions << '\n'
      << "region_density = " << format_double(region_density) << '\n'
      << "slide_positive_classes = " << slide_positive_classes << '\n'
      << "positive_fraction = " << format_double(positive_fraction) << '\n'
      << "label_weights = ";
  for (std::size_t n = 0; n < label_weights.size(); ++n) {
    out << (n ? ", " : "") << format_double(label_weights[n]);
  }
  out << '\n'
      << "label_threshold = " << format_double(label_threshold) << '\n'
      << "gradient_noise = " << format_double(gradient_noise) << '\n'
      << "write_gradients = " << (write_gradients ? "true" : "false") << '\n'
      << "write_images = " << (write_images ? "true" : "false") << '\n'
      << "feature_source = " << (feature_source == FeatureSource::kPlanted ? "planted" : "extractor")
      << '\n';
  return out.str();
}

Matrix synth_basis(const SynthSpec& spec) {
  std::mt19937_64 rng(derive_seed(spec.seed, 0xB0));
  const auto weights = resized_label_weights(spec);
  Matrix groups(3, spec.channels);
  for (Eigen::Index g = 0; g < 3; ++g)
    for (Eigen::Index c = 0; c < spec.channels; ++c)
      groups(g, c) = uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : uniform(rng, 0.0, 1.0);

  Matrix h = Matrix::Zero(spec.k, spec.channels);
  for (int cls = 0; cls < spec.k; ++cls) {
    const int lo = cls * spec.channels / spec.k;
    const int hi = (cls + 1) * spec.channels / spec.k;
    for (int c = lo; c < hi; ++c) h(cls, c) = uniform(rng, 0.5, 1.5);
    const double w = weights[static_cast<std::size_t>(cls)];
    const int group = w > 0.0 ? 0 : (w < 0.0 ? 1 : 2);
    h.row(cls) += spec.basis_overlap * groups.row(group);
  }
  normalize_rows(h);
  return h;
}

namespace {

Eigen::VectorXd saliency_direction_for(const SynthSpec& spec, const Matrix& basis) {
  const auto weights = resized_label_weights(spec);
  Eigen::VectorXd positive(spec.k);
  for (int c = 0; c < spec.k; ++c) positive(c) = std::max(0.0, weights[static_cast<std::size_t>(c)]);
  // Minimum-norm direction with basis * direction = positive label weights.
  const Matrix gram = basis * basis.transpose();
  return basis.transpose() * gram.ldlt().solve(positive);
}

struct Region {
  double x = 0.0;
  double y = 0.0;
  int cls = -1;
  double base = 1.0;
  double period = 16.0;
  double angle = 0.0;
  double phase = 0.0;
};

constexpr Rgb kTissueColors[] = {{150, 60, 160}, {220, 120, 170}, {110, 50, 130}, {200, 90, 120},
                                 {170, 100, 200}, {230, 160, 190}, {90, 40, 110},  {190, 70, 150}};

}  // namespace

int SynthSlide::truth_at(const CellCoord& c) const {
  const std::int64_t x = c.gx - lattice.min_gx;
  const std::int64_t y = c.gy - lattice.min_gy;
  if (x < 0 || y < 0 || x >= lattice.width || y >= lattice.height) return -1;
  return truth_class[static_cast<std::size_t>(y * lattice.width + x)];
}

RgbImage render_synth_tile(const SynthSpec& spec, const SynthSlide& slide, std::int64_t origin_x,
                           std::int64_t origin_y) {
  const std::int64_t cs = spec.tile_size_px / spec.cells;
  RgbImage img(spec.tile_size_px, spec.tile_size_px);
  for (int y = 0; y < spec.tile_size_px; ++y) {
    const std::int64_t sy = origin_y + y;
    for (int x = 0; x < spec.tile_size_px; ++x) {
      const std::int64_t sx = origin_x + x;
      const int cls = slide.truth_at({sx / cs, sy / cs});
      std::uint8_t* p = img.at(x, y);
      if (cls < 0) {
        p[0] = p[1] = p[2] = 246;
        continue;
      }
      // Stripes with a class-specific period and orientation.
      const Rgb& base = kTissueColors[cls % 8];
      const double period = 6.0 + 5.0 * cls;
      const double angle = std::numbers::pi * cls / std::max(spec.k, 1);
      const double t =
          0.5 + 0.5 * std::sin(2.0 * std::numbers::pi *
                               (static_cast<double>(sx) * std::cos(angle) +
                                static_cast<double>(sy) * std::sin(angle)) / period);
      for (int ch = 0; ch < 3; ++ch) {
        p[ch] = static_cast<std::uint8_t>(std::lround(base[static_cast<std::size_t>(ch)] * (0.7 + 0.3 * t)));
      }
    }
  }
  return img;
}

SynthSlide gen_slide(const SynthSpec& spec, const Matrix& basis,
                     const Eigen::VectorXd& saliency_direction, int slide_index) {
  spec.validate();
  if (basis.rows() != spec.k || basis.cols() != spec.channels) {
    throw ValidationError("gen_slide: basis shape does not match the spec");
  }
  const std::uint64_t slide_seed = derive_seed(spec.seed, 1000 + static_cast<std::uint64_t>(slide_index));
  std::mt19937_64 rng(slide_seed);
  const std::int64_t cs = spec.tile_size_px / spec.cells;
  const std::int64_t stride_cells = spec.stride_px / cs;
  const int tiles_x = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.n_tiles))));
  const int tiles_y = (spec.n_tiles + tiles_x - 1) / tiles_x;

  SynthSlide slide;
  slide.lattice = {0, 0, (tiles_x - 1) * stride_cells + spec.cells,
                   (tiles_y - 1) * stride_cells + spec.cells};
  const std::int64_t lw = slide.lattice.width;
  const std::int64_t lh = slide.lattice.height;

  const auto label_weights = resized_label_weights(spec);

  // Voronoi regions, each one class (or background) with a smooth intensity.
  const int n_regions = spec.regions > 0
                            ? spec.regions
                            : std::max<int>(2, static_cast<int>(std::lround(
                                                   spec.region_density * static_cast<double>(lw * lh) /
                                                   (spec.cells * spec.cells))));
  // Each slide uses every non-positive class plus a rotating subset of the
  // positive ones; positive_fraction of the tissue regions are positive.
  std::vector<int> others;
  std::vector<int> positive;
  for (int c = 0; c < spec.k; ++c) {
    (label_weights[static_cast<std::size_t>(c)] > 0.0 ? positive : others).push_back(c);
  }
  std::vector<int> slide_positive;
  if (!positive.empty()) {
    const int n_pos = static_cast<int>(positive.size());
    const int take = spec.slide_positive_classes == 0 ? n_pos : std::min(spec.slide_positive_classes, n_pos);
    for (int n = 0; n < take; ++n) {
      slide_positive.push_back(positive[static_cast<std::size_t>((slide_index * take + n) % n_pos)]);
    }
  }
  auto draw_class = [&]() {
    if (uniform(rng, 0.0, 1.0) < spec.background_fraction) return -1;
    const bool pos = others.empty() || (!slide_positive.empty() && uniform(rng, 0.0, 1.0) < spec.positive_fraction);
    const std::vector<int>& pool = pos ? slide_positive : others;
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };
  std::vector<Region> regions(static_cast<std::size_t>(n_regions));
  for (auto& r : regions) {
    r.x = uniform(rng, 0.0, static_cast<double>(lw));
    r.y = uniform(rng, 0.0, static_cast<double>(lh));
    r.cls = draw_class();
    r.base = uniform(rng, 0.6, 1.4);
    r.period = uniform(rng, 8.0, 24.0);
    r.angle = uniform(rng, 0.0, std::numbers::pi);
    r.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  slide.truth_class.resize(static_cast<std::size_t>(lw * lh));
  slide.truth_intensity.resize(static_cast<std::size_t>(lw * lh));
  for (std::int64_t gy = 0; gy < lh; ++gy) {
    for (std::int64_t gx = 0; gx < lw; ++gx) {
      const double cx = static_cast<double>(gx) + 0.5;
      const double cy = static_cast<double>(gy) + 0.5;
      std::size_t nearest = 0;
      double best = 0.0;
      for (std::size_t r = 0; r < regions.size(); ++r) {
        const double d = (regions[r].x - cx) * (regions[r].x - cx) + (regions[r].y - cy) * (regions[r].y - cy);
        if (r == 0 || d < best) {
          best = d;
          nearest = r;
        }
      }
      const Region& r = regions[nearest];
      const auto idx = static_cast<std::size_t>(gy * lw + gx);
      slide.truth_class[idx] = r.cls;
      slide.truth_intensity[idx] =
          r.cls < 0 ? 0.0
                    : r.base * (1.0 + 0.3 * std::sin(2.0 * std::numbers::pi *
                                                         (cx * std::cos(r.angle) + cy * std::sin(r.angle)) /
                                                         r.period +
                                                     r.phase));
    }
  }

  SlideManifest& m = slide.manifest;
  char id[32];
  std::snprintf(id, sizeof(id), "S%03d", slide_index);
  m.slide_id = id;
  m.tile_size_px = spec.tile_size_px;
  m.stride_px = spec.stride_px;
  m.cell_size_px = cs;
  m.level_downsample = 2.0;
  m.label_source = LabelSource::kModelPrediction;
  m.tensor_shape = {static_cast<std::uint32_t>(spec.cells), static_cast<std::uint32_t>(spec.cells),
                    static_cast<std::uint32_t>(spec.channels)};

  const bool need_images = spec.write_images || spec.feature_source == FeatureSource::kExtractor;
  std::optional<ToyFeatureExtractor> extractor;
  if (spec.feature_source == FeatureSource::kExtractor) {
    extractor.emplace(derive_seed(spec.seed, 0xE7), spec.channels);
  }
  const double grad_spread = spec.gradient_noise * saliency_direction.cwiseAbs().maxCoeff();

  for (int t = 0; t < spec.n_tiles; ++t) {
    std::mt19937_64 tile_rng(derive_seed(slide_seed, static_cast<std::uint64_t>(t)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    TileRecord rec;
    rec.origin_x_px = static_cast<std::int64_t>(t % tiles_x) * spec.stride_px;
    rec.origin_y_px = static_cast<std::int64_t>(t / tiles_x) * spec.stride_px;
    char name[32];
    std::snprintf(name, sizeof(name), "t%03d", t);
    rec.tensor_path = fs::path("tensors") / (std::string(name) + ".clt");
    if (spec.write_gradients) rec.gradient_path = fs::path("gradients") / (std::string(name) + ".clt");
    if (spec.write_images) rec.image_path = fs::path("images") / (std::string(name) + ".png");

    const std::int64_t gx0 = rec.origin_x_px / cs;
    const std::int64_t gy0 = rec.origin_y_px / cs;
    RgbImage image;
    if (need_images) image = render_synth_tile(spec, slide, rec.origin_x_px, rec.origin_y_px);

    Tensor features;
    if (extractor) {
      features = (*extractor)(image);
    } else {
      features = Tensor(m.tensor_shape, DType::kNonNegative);
      for (int i = 0; i < spec.cells; ++i) {
        for (int j = 0; j < spec.cells; ++j) {
          const auto idx = static_cast<std::size_t>((gy0 + i) * lw + gx0 + j);
          const int cls = slide.truth_class[idx];
          if (cls < 0) continue;
          const double intensity = slide.truth_intensity[idx];
          const bool border = i < spec.border_width || j < spec.border_width ||
                              i >= spec.cells - spec.border_width || j >= spec.cells - spec.border_width;
          auto v = features.mutable_vector_at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
          for (int c = 0; c < spec.channels; ++c) {
            double value = intensity * basis(cls, c);
            if (border) value *= 1.0 + spec.border_jitter * uniform(tile_rng, -1.0, 1.0);
            value += spec.noise_sigma * gauss(tile_rng);
            v[static_cast<std::size_t>(c)] = static_cast<float>(std::max(0.0, value));
          }
        }
      }
    }

    // Label rule over the tile's mean planted class intensities.
    std::vector<double> mean_intensity(static_cast<std::size_t>(spec.k), 0.0);
    for (int i = 0; i < spec.cells; ++i)
      for (int j = 0; j < spec.cells; ++j) {
        const auto idx = static_cast<std::size_t>((gy0 + i) * lw + gx0 + j);
        if (slide.truth_class[idx] >= 0)
          mean_intensity[static_cast<std::size_t>(slide.truth_class[idx])] += slide.truth_intensity[idx];
      }
    double raw = 0.0;
    for (int c = 0; c < spec.k; ++c) {
      raw += label_weights[static_cast<std::size_t>(c)] * mean_intensity[static_cast<std::size_t>(c)] /
             (spec.cells * spec.cells);
    }
    rec.label = raw > spec.label_threshold ? 1 : 0;
    rec.prediction_score = 1.0 / (1.0 + std::exp(-20.0 * (raw - spec.label_threshold)));
    if (*rec.label == 1 && *rec.prediction_score < 0.5) rec.prediction_score = 0.5;
    if (*rec.label == 0 && *rec.prediction_score >= 0.5) rec.prediction_score = std::nextafter(0.5, 0.0);

    if (spec.write_gradients) {
      // Spatial mean per channel is exactly the saliency direction.
      const std::size_t cells = static_cast<std::size_t>(spec.cells) * spec.cells;
      std::vector<double> noise(cells * static_cast<std::size_t>(spec.channels));
      for (double& x : noise) x = gauss(tile_rng);
      std::vector<float> grad(noise.size());
      for (int c = 0; c < spec.channels; ++c) {
        double mean = 0.0;
        for (std::size_t p = 0; p < cells; ++p) mean += noise[p * spec.channels + c];
        mean /= static_cast<double>(cells);
        for (std::size_t p = 0; p < cells; ++p) {
          grad[p * spec.channels + c] =
              static_cast<float>(saliency_direction(c) + grad_spread * (noise[p * spec.channels + c] - mean));
        }
      }
      slide.gradients.emplace_back(features.shape(), DType::kSigned, std::move(grad));
    }
    slide.features.push_back(std::move(features));
    if (spec.write_images) slide.images.push_back(std::move(image));
    m.tiles.push_back(std::move(rec));
  }
  validate_geometry(m);
  return slide;
}

SynthDataset gen_dataset(const SynthSpec& spec) {
  spec.validate();
  SynthDataset data;
  data.spec = spec;
  data.planted_basis = synth_basis(spec);
  data.saliency_direction = saliency_direction_for(spec, data.planted_basis);
  for (int s = 0; s < spec.n_slides; ++s) {
    data.slides.push_back(gen_slide(spec, data.planted_basis, data.saliency_direction, s));
  }
  return data;
}

std::vector<fs::path> write_dataset(const SynthDataset& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text_file(dir / "synth_spec.txt", data.spec.to_text());
  {
    const auto k = static_cast<std::uint32_t>(data.planted_basis.rows());
    const auto c = static_cast<std::uint32_t>(data.planted_basis.cols());
    std::vector<float> values;
    for (std::uint32_t r = 0; r < k; ++r)
      for (std::uint32_t col = 0; col < c; ++col) values.push_back(static_cast<float>(data.planted_basis(r, col)));
    write_tensor(Tensor({k, c, 1}, DType::kNonNegative, std::move(values)), dir / "planted_basis.clt");
  }

  std::ostringstream truth;
  truth << "record\tslide_id\tx\ty\tvalue\n";
  std::vector<fs::path> manifests;
  for (const SynthSlide& slide : data.slides) {
    const fs::path slide_dir = dir / slide.manifest.slide_id;
    for (const char* sub : {"tensors", "gradients", "images"}) fs::create_directories(slide_dir / sub, ec);
    SlideManifest m = slide.manifest;
    for (std::size_t t = 0; t < m.tiles.size(); ++t) {
      TileRecord& rec = m.tiles[t];
      rec.tensor_path = slide_dir / rec.tensor_path;
      write_tensor(slide.features[t], rec.tensor_path);
      if (rec.gradient_path) {
        rec.gradient_path = slide_dir / *rec.gradient_path;
        write_tensor(slide.gradients[t], *rec.gradient_path);
      }
      if (rec.image_path) {
        rec.image_path = slide_dir / *rec.image_path;
        write_png(slide.images[t], *rec.image_path);
      }
      truth << "tile\t" << m.slide_id << '\t' << rec.origin_x_px << '\t' << rec.origin_y_px << '\t'
            << *rec.label << '\n';
    }
    const fs::path manifest_path = slide_dir / "manifest.txt";
    save_manifest(m, manifest_path);
    manifests.push_back(manifest_path);
    for (std::int64_t gy = 0; gy < slide.lattice.height; ++gy) {
      for (std::int64_t gx = 0; gx < slide.lattice.width; ++gx) {
        const int cls = slide.truth_class[static_cast<std::size_t>(gy * slide.lattice.width + gx)];
        truth << "cell\t" << m.slide_id << '\t' << gx << '\t' << gy << '\t'
              << (cls < 0 ? std::string("-") : std::to_string(cls + 1)) << '\n';
      }
    }
  }
  write_text_file(dir / "truth.tsv", truth.str());
  return manifests;
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kStage1 = 8;
constexpr int kStage2 = 16;

// planes: [channel][y][x]; replicate padding; weights [out][in][3][3].
std::vector<float> conv3x3_relu(const std::vector<float>& in, int c_in, int h, int w,
                                const std::vector<float>& weights, int c_out) {
  std::vector<float> out(static_cast<std::size_t>(c_out) * h * w, 0.0F);
  for (int o = 0; o < c_out; ++o) {
    float* dst = out.data() + static_cast<std::size_t>(o) * h * w;
    for (int ci = 0; ci < c_in; ++ci) {
      const float* src = in.data() + static_cast<std::size_t>(ci) * h * w;
      const float* k = weights.data() + (static_cast<std::size_t>(o) * c_in + ci) * 9;
      for (int y = 0; y < h; ++y) {
        const int ys[3] = {std::max(y - 1, 0), y, std::min(y + 1, h - 1)};
        for (int x = 0; x < w; ++x) {
          const int xs[3] = {std::max(x - 1, 0), x, std::min(x + 1, w - 1)};
          float acc = 0.0F;
          for (int dy = 0; dy < 3; ++dy)
            for (int dx = 0; dx < 3; ++dx) acc += k[dy * 3 + dx] * src[ys[dy] * w + xs[dx]];
          dst[y * w + x] += acc;
        }
      }
    }
    for (std::size_t n = 0; n < static_cast<std::size_t>(h) * w; ++n) dst[n] = std::max(dst[n], 0.0F);
  }
  return out;
}

std::vector<float> avg_pool4(const std::vector<float>& in, int c, int h, int w) {
  const int oh = h / 4;
  const int ow = w / 4;
  std::vector<float> out(static_cast<std::size_t>(c) * oh * ow, 0.0F);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        float acc = 0.0F;
        for (int dy = 0; dy < 4; ++dy)
          for (int dx = 0; dx < 4; ++dx)
            acc += in[(static_cast<std::size_t>(ch) * h + 4 * y + dy) * w + 4 * x + dx];
        out[(static_cast<std::size_t>(ch) * oh + y) * ow + x] = acc / 16.0F;
      }
  return out;
}

std::vector<float> random_filters(std::mt19937_64& rng, std::size_t count, int fan_in) {
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  std::vector<float> w(count);
  for (float& x : w) x = static_cast<float>(gauss(rng));
  return w;
}

}  // namespace

ToyFeatureExtractor::ToyFeatureExtractor(std::uint64_t seed, int out_channels)
    : out_channels_(out_channels) {
  if (out_channels < 1) throw ValidationError("toy extractor: out_channels must be >= 1");
  std::mt19937_64 rng(seed);
  conv1_ = random_filters(rng, kStage1 * 3 * 9, 27);
  conv2_ = random_filters(rng, kStage2 * kStage1 * 9, kStage1 * 9);
  conv3_ = random_filters(rng, static_cast<std::size_t>(out_channels) * kStage2, kStage2);
}

Tensor ToyFeatureExtractor::operator()(const RgbImage& tile) const {
  if (tile.empty() || tile.width % kDownsample != 0 || tile.height % kDownsample != 0) {
    throw ValidationError("toy extractor: tile dimensions must be positive multiples of 16");
  }
  const int h = tile.height;
  const int w = tile.width;
  std::vector<float> input(static_cast<std::size_t>(3) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        input[(static_cast<std::size_t>(ch) * h + y) * w + x] = 1.0F - tile.at(x, y)[ch] / 255.0F;

  auto s1 = avg_pool4(conv3x3_relu(input, 3, h, w, conv1_, kStage1), kStage1, h, w);
  auto s2 = avg_pool4(conv3x3_relu(s1, kStage1, h / 4, w / 4, conv2_, kStage2), kStage2, h / 4, w / 4);
  const int oh = h / kDownsample;
  const int ow = w / kDownsample;
  Tensor out({static_cast<std::uint32_t>(oh), static_cast<std::uint32_t>(ow),
              static_cast<std::uint32_t>(out_channels_)},
             DType::kNonNegative);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      auto v = out.mutable_vector_at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      for (int o = 0; o < out_channels_; ++o) {
        float acc = 0.0F;
        for (int ci = 0; ci < kStage2; ++ci)
          acc += conv3_[static_cast<std::size_t>(o) * kStage2 + ci] *
                 s2[(static_cast<std::size_t>(ci) * oh + y) * ow + x];
        v[static_cast<std::size_t>(o)] = std::max(acc, 0.0F);
      }
    }
  return out;
}

}  // namespace featclust
