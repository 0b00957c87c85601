#include "featclust/tissue.hpp"

#include <algorithm>

#include "featclust/error.hpp"

namespace featclust {

void TissueMaskConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(saturation_min) || !in_unit(value_max) || !in_unit(min_tissue_fraction)) {
    throw ValidationError("tissue thresholds must lie in [0, 1]");
  }
}

bool is_tissue_pixel(const std::uint8_t* rgb, const TissueMaskConfig& config) {
  const int hi = std::max({rgb[0], rgb[1], rgb[2]});
  const int lo = std::min({rgb[0], rgb[1], rgb[2]});
  const double value = hi / 255.0;
  const double saturation = hi == 0 ? 0.0 : static_cast<double>(hi - lo) / hi;
  return saturation >= config.saturation_min && value <= config.value_max;
}

TissueDecision tissue_filter(const RgbImage& tile, const TissueMaskConfig& config) {
  config.validate();
  if (tile.empty()) throw ValidationError("tissue_filter: empty image");
  std::size_t tissue = 0;
  for (int y = 0; y < tile.height; ++y)
    for (int x = 0; x < tile.width; ++x)
      if (is_tissue_pixel(tile.at(x, y), config)) ++tissue;
  const double fraction =
      static_cast<double>(tissue) / (static_cast<double>(tile.width) * tile.height);
  return {fraction >= config.min_tissue_fraction, fraction};
}

}  // namespace featclust
