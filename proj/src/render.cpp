#include "featclust/render.hpp"

#include <algorithm>
#include <cmath>

#include "featclust/error.hpp"
#include "featclust/nmf.hpp"
#include "featclust/stats.hpp"

namespace featclust {

namespace {

constexpr Rgb kTab10[] = {{31, 119, 180}, {255, 127, 14},  {44, 160, 44},  {214, 39, 40},
                          {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127},
                          {188, 189, 34},  {23, 190, 207}};

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 360.0) / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  auto to8 = [&](double t) { return static_cast<std::uint8_t>(std::lround(255.0 * (t + m))); };
  return {to8(r), to8(g), to8(b)};
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

struct Frame {
  GridBounds bounds;
  int scale = 1;
};

Frame frame_for(const WeightGrid& weights, const RenderOptions& options) {
  if (options.scale < 0) throw ValidationError("render: scale must be >= 0");
  if (!(options.quantile > 0.0 && options.quantile <= 1.0)) {
    throw ValidationError("render: normalization quantile must be in (0, 1]");
  }
  const int scale = options.scale > 0 ? options.scale : static_cast<int>(weights.cell_size_px());
  if (scale < 1) throw ValidationError("render: invalid scale");
  return {weights.bounds(), scale};
}

RgbaImage blank(const Frame& f) {
  return RgbaImage(static_cast<int>(f.bounds.width) * f.scale,
                   static_cast<int>(f.bounds.height) * f.scale);
}

void paint_cell(RgbaImage& img, const Frame& f, const CellCoord& cell, const Rgba& color) {
  const int x0 = static_cast<int>(cell.gx - f.bounds.min_gx) * f.scale;
  const int y0 = static_cast<int>(cell.gy - f.bounds.min_gy) * f.scale;
  for (int y = y0; y < y0 + f.scale; ++y)
    for (int x = x0; x < x0 + f.scale; ++x) std::copy(color.begin(), color.end(), img.at(x, y));
}

void check_class(const WeightGrid& weights, int cls, const Palette& palette) {
  if (cls < 0 || cls >= static_cast<int>(weights.channels())) {
    throw ValidationError("render: class " + std::to_string(cls + 1) + " outside 1.." +
                          std::to_string(weights.channels()));
  }
  if (cls >= static_cast<int>(palette.colors.size())) {
    throw ValidationError("render: palette has no color for class " + std::to_string(cls + 1));
  }
}

}  // namespace

Palette Palette::default_for(int k) {
  Palette p;
  for (int c = 0; c < k; ++c) {
    if (c < 10) {
      p.colors.push_back(kTab10[c]);
    } else {
      p.colors.push_back(hsv_to_rgb(137.508 * c, 0.65 + 0.1 * (c % 3), 0.85));
    }
  }
  return p;
}

std::uint8_t heat_alpha(double weight, double q) {
  if (!(weight > 0.0) || !(q > 0.0)) return 0;
  return to_byte(255.0 * std::min(1.0, weight / q));
}

double class_normalizer(const WeightGrid& weights, int cls, double quantile) {
  std::vector<double> positive;
  for (std::size_t n = 0; n < weights.size(); ++n) {
    const double w = weights.values(n)[static_cast<std::size_t>(cls)];
    if (w > 0.0) positive.push_back(w);
  }
  return positive.empty() ? 0.0 : quantile_nearest_rank(std::move(positive), quantile);
}

RgbaImage render_class_heatmap(const WeightGrid& weights, int cls, const Palette& palette,
                               const RenderOptions& options) {
  check_class(weights, cls, palette);
  const Frame f = frame_for(weights, options);
  RgbaImage img = blank(f);
  const double q = class_normalizer(weights, cls, options.quantile);
  const Rgb& color = palette[cls];
  for (std::size_t n = 0; n < weights.size(); ++n) {
    const std::uint8_t a = heat_alpha(weights.values(n)[static_cast<std::size_t>(cls)], q);
    if (a == 0) continue;
    paint_cell(img, f, weights.cell(n), {color[0], color[1], color[2], a});
  }
  return img;
}

RgbaImage render_blended(const WeightGrid& weights, const Palette& palette,
                         const RenderOptions& options) {
  const int k = static_cast<int>(weights.channels());
  for (int c = 0; c < k; ++c) check_class(weights, c, palette);
  const Frame f = frame_for(weights, options);
  RgbaImage img = blank(f);
  std::vector<double> q(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) q[static_cast<std::size_t>(c)] = class_normalizer(weights, c, options.quantile);

  for (std::size_t n = 0; n < weights.size(); ++n) {
    // Premultiplied "over", bottom to top in class order.
    double acc[3] = {0.0, 0.0, 0.0};
    double alpha = 0.0;
    const auto w = weights.values(n);
    for (int c = 0; c < k; ++c) {
      const double a = heat_alpha(w[static_cast<std::size_t>(c)], q[static_cast<std::size_t>(c)]) / 255.0;
      if (a == 0.0) continue;
      for (int ch = 0; ch < 3; ++ch) acc[ch] = palette[c][static_cast<std::size_t>(ch)] * a + acc[ch] * (1.0 - a);
      alpha = a + alpha * (1.0 - a);
    }
    if (alpha == 0.0) continue;
    paint_cell(img, f, weights.cell(n),
               {to_byte(acc[0] / alpha), to_byte(acc[1] / alpha), to_byte(acc[2] / alpha),
                to_byte(255.0 * alpha)});
  }
  return img;
}

RgbaImage render_clustering(const WeightGrid& weights, const Palette& palette,
                            const RenderOptions& options) {
  const int k = static_cast<int>(weights.channels());
  for (int c = 0; c < k; ++c) check_class(weights, c, palette);
  const Frame f = frame_for(weights, options);
  RgbaImage img = blank(f);
  std::vector<double> row(static_cast<std::size_t>(k));
  for (std::size_t n = 0; n < weights.size(); ++n) {
    const auto w = weights.values(n);
    std::copy(w.begin(), w.end(), row.begin());
    const int cls = argmax_row(row.data(), k);
    if (cls == kUnassigned) continue;
    const Rgb& color = palette[cls];
    paint_cell(img, f, weights.cell(n), {color[0], color[1], color[2], 255});
  }
  return img;
}

RgbImage composite_over_tissue(const RgbaImage& overlay, const RgbImage& tissue, double opacity) {
  if (overlay.empty() || tissue.empty()) throw ValidationError("composite: empty image");
  if (!(opacity >= 0.0 && opacity <= 1.0)) throw ValidationError("composite: opacity must be in [0, 1]");
  if (tissue.width % overlay.width != 0 || tissue.height % overlay.height != 0 ||
      tissue.width / overlay.width != tissue.height / overlay.height) {
    throw ValidationError("composite: tissue " + std::to_string(tissue.width) + "x" +
                          std::to_string(tissue.height) + " is not an integer multiple of overlay " +
                          std::to_string(overlay.width) + "x" + std::to_string(overlay.height));
  }
  const int s = tissue.width / overlay.width;
  RgbImage out = tissue;
  for (int y = 0; y < tissue.height; ++y) {
    for (int x = 0; x < tissue.width; ++x) {
      const std::uint8_t* o = overlay.at(x / s, y / s);
      const double a = o[3] / 255.0 * opacity;
      if (a == 0.0) continue;
      std::uint8_t* t = out.at(x, y);
      for (int ch = 0; ch < 3; ++ch) t[ch] = to_byte(t[ch] * (1.0 - a) + o[ch] * a);
    }
  }
  return out;
}

RgbImage build_tissue_mosaic(const SlideManifest& manifest, std::span<const RgbImage> images,
                             const GridBounds& bounds) {
  if (images.size() != manifest.tiles.size()) {
    throw ValidationError("build_tissue_mosaic: one image per tile required");
  }
  const std::int64_t cs = manifest.cell_size_px;
  RgbImage canvas(static_cast<int>(bounds.width * cs), static_cast<int>(bounds.height * cs));
  std::fill(canvas.pixels.begin(), canvas.pixels.end(), std::uint8_t{255});
  const std::int64_t x_off = bounds.min_gx * cs;
  const std::int64_t y_off = bounds.min_gy * cs;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RgbImage& img = images[n];
    if (img.empty()) continue;
    const auto& tile = manifest.tiles[n];
    for (int y = 0; y < img.height; ++y) {
      const std::int64_t cy = tile.origin_y_px + y - y_off;
      if (cy < 0 || cy >= canvas.height) continue;
      for (int x = 0; x < img.width; ++x) {
        const std::int64_t cx = tile.origin_x_px + x - x_off;
        if (cx < 0 || cx >= canvas.width) continue;
        std::copy_n(img.at(x, y), 3, canvas.at(static_cast<int>(cx), static_cast<int>(cy)));
      }
    }
  }
  return canvas;
}

RgbImage downsample_box(const RgbImage& image, int factor) {
  if (factor < 1) throw ValidationError("downsample: factor must be >= 1");
  if (image.width % factor != 0 || image.height % factor != 0) {
    throw ValidationError("downsample: " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                          " is not divisible by " + std::to_string(factor));
  }
  if (factor == 1) return image;
  RgbImage out(image.width / factor, image.height / factor);
  const int area = factor * factor;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      int sum[3] = {0, 0, 0};
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          const std::uint8_t* p = image.at(x * factor + dx, y * factor + dy);
          for (int ch = 0; ch < 3; ++ch) sum[ch] += p[ch];
        }
      for (int ch = 0; ch < 3; ++ch) out.at(x, y)[ch] = static_cast<std::uint8_t>((sum[ch] + area / 2) / area);
    }
  }
  return out;
}

}  // namespace featclust
