#pragma once

#include "featclust/image.hpp"

namespace featclust {

/// A pixel is tissue when its HSV saturation is at least saturation_min and
/// its HSV value at most value_max (stained and not glass-white).
struct TissueMaskConfig {
  double saturation_min = 0.07;
  double value_max = 0.95;
  double min_tissue_fraction = 0.1;

  void validate() const;
};

struct TissueDecision {
  bool keep = false;
  double tissue_fraction = 0.0;
};

bool is_tissue_pixel(const std::uint8_t* rgb, const TissueMaskConfig& config);

TissueDecision tissue_filter(const RgbImage& tile, const TissueMaskConfig& config = {});

}  // namespace featclust
