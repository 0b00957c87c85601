#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace featclust {

/// Position on the slide-level feature-cell lattice.
struct CellCoord {
  std::int64_t gx = 0;
  std::int64_t gy = 0;

  bool operator==(const CellCoord&) const = default;
  /// Row-major order (gy, then gx).
  friend bool operator<(const CellCoord& a, const CellCoord& b) {
    return std::tie(a.gy, a.gx) < std::tie(b.gy, b.gx);
  }
};

struct GridBounds {
  std::int64_t min_gx = 0;
  std::int64_t min_gy = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;
};

enum class GridKind { kFeatures, kWeights, kSaliency };

std::string to_string(GridKind kind);

/// Sparse set of lattice cells with a fixed-length float vector per cell.
/// Cells are stored sorted in row-major order; absent cells carry nothing.
class CellGridBase {
 public:
  CellGridBase() = default;
  CellGridBase(std::string slide_id, std::int64_t cell_size_px, std::uint32_t channels,
               std::vector<CellCoord> cells, std::vector<std::uint32_t> counts,
               std::vector<float> values);

  const std::string& slide_id() const { return slide_id_; }
  std::int64_t cell_size_px() const { return cell_size_px_; }
  std::uint32_t channels() const { return channels_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }

  std::span<const CellCoord> cells() const { return cells_; }
  const CellCoord& cell(std::size_t n) const { return cells_[n]; }
  /// Number of tile contributions averaged into the cell.
  std::uint32_t count(std::size_t n) const { return counts_[n]; }
  std::span<const float> values(std::size_t n) const {
    return std::span<const float>(values_).subspan(n * channels_, channels_);
  }
  std::span<const float> all_values() const { return values_; }

  std::optional<std::size_t> find(const CellCoord& coord) const;
  GridBounds bounds() const;

  bool operator==(const CellGridBase&) const = default;

 private:
  std::string slide_id_;
  std::int64_t cell_size_px_ = 0;
  std::uint32_t channels_ = 0;
  std::vector<CellCoord> cells_;
  std::vector<std::uint32_t> counts_;
  std::vector<float> values_;
};

template <GridKind Kind>
class CellGrid : public CellGridBase {
 public:
  static constexpr GridKind kind = Kind;
  using CellGridBase::CellGridBase;
  CellGrid() = default;
  explicit CellGrid(CellGridBase base) : CellGridBase(std::move(base)) {}
};

/// Per-slide mean feature vectors (C channels).
using SlideFeatureGrid = CellGrid<GridKind::kFeatures>;
/// Per-slide class intensities (K channels).
using WeightGrid = CellGrid<GridKind::kWeights>;
/// Per-slide GradCAM intensities (1 channel).
using SlideSaliencyGrid = CellGrid<GridKind::kSaliency>;

// On disk a grid is `<stem>.grid` (text header), `<stem>.clt` (dense
// bounding-box crop, h x w x channels) and `<stem>.counts.clt` (h x w x 1,
// 0 = absent cell).
void save_grid(const CellGridBase& grid, GridKind kind, const std::filesystem::path& stem);
CellGridBase load_grid(const std::filesystem::path& stem, GridKind expected);

template <GridKind Kind>
void save_grid(const CellGrid<Kind>& grid, const std::filesystem::path& stem) {
  save_grid(static_cast<const CellGridBase&>(grid), Kind, stem);
}

template <GridKind Kind>
CellGrid<Kind> load_grid(const std::filesystem::path& stem) {
  return CellGrid<Kind>(load_grid(stem, Kind));
}

}  // namespace featclust
