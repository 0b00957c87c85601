#include "featclust/cell_grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "featclust/error.hpp"
#include "featclust/keyvalue.hpp"
#include "featclust/tensor_io.hpp"

namespace featclust {

namespace fs = std::filesystem;

std::string to_string(GridKind kind) {
  switch (kind) {
    case GridKind::kFeatures:
      return "features";
    case GridKind::kWeights:
      return "weights";
    case GridKind::kSaliency:
      return "saliency";
  }
  return "unknown";
}

CellGridBase::CellGridBase(std::string slide_id, std::int64_t cell_size_px,
                           std::uint32_t channels, std::vector<CellCoord> cells,
                           std::vector<std::uint32_t> counts, std::vector<float> values)
    : slide_id_(std::move(slide_id)),
      cell_size_px_(cell_size_px),
      channels_(channels),
      cells_(std::move(cells)),
      counts_(std::move(counts)),
      values_(std::move(values)) {
  if (channels_ == 0) throw ValidationError("cell grid needs at least one channel");
  if (counts_.size() != cells_.size() || values_.size() != cells_.size() * channels_) {
    throw ValidationError("cell grid: inconsistent array lengths");
  }
  for (std::size_t n = 1; n < cells_.size(); ++n) {
    if (!(cells_[n - 1] < cells_[n])) {
      throw ValidationError("cell grid: cells must be unique and sorted row-major");
    }
  }
  for (auto c : counts_) {
    if (c == 0) throw ValidationError("cell grid: present cell with zero count");
  }
}

std::optional<std::size_t> CellGridBase::find(const CellCoord& coord) const {
  const auto it = std::lower_bound(cells_.begin(), cells_.end(), coord);
  if (it == cells_.end() || !(*it == coord)) return std::nullopt;
  return static_cast<std::size_t>(it - cells_.begin());
}

GridBounds CellGridBase::bounds() const {
  if (cells_.empty()) return {};
  std::int64_t min_x = cells_.front().gx;
  std::int64_t max_x = min_x;
  for (const auto& c : cells_) {
    min_x = std::min(min_x, c.gx);
    max_x = std::max(max_x, c.gx);
  }
  return GridBounds{min_x, cells_.front().gy, max_x - min_x + 1,
                    cells_.back().gy - cells_.front().gy + 1};
}

void save_grid(const CellGridBase& grid, GridKind kind, const fs::path& stem) {
  if (grid.empty()) throw ValidationError("cannot save an empty grid");
  const GridBounds b = grid.bounds();
  const auto h = static_cast<std::uint32_t>(b.height);
  const auto w = static_cast<std::uint32_t>(b.width);
  Tensor values({h, w, grid.channels()}, DType::kNonNegative);
  Tensor counts({h, w, 1}, DType::kNonNegative);
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const auto i = static_cast<std::size_t>(grid.cell(n).gy - b.min_gy);
    const auto j = static_cast<std::size_t>(grid.cell(n).gx - b.min_gx);
    const auto v = grid.values(n);
    std::copy(v.begin(), v.end(), values.mutable_vector_at(i, j).begin());
    counts.set(i, j, 0, static_cast<float>(grid.count(n)));
  }
  const fs::path values_path(stem.string() + ".clt");
  const fs::path counts_path(stem.string() + ".counts.clt");
  write_tensor(values, values_path);
  write_tensor(counts, counts_path);

  std::ostringstream header;
  header << "kind = " << to_string(kind) << '\n'
         << "slide_id = " << grid.slide_id() << '\n'
         << "min_gx = " << b.min_gx << '\n'
         << "min_gy = " << b.min_gy << '\n'
         << "grid_w = " << b.width << '\n'
         << "grid_h = " << b.height << '\n'
         << "cell_size_px = " << grid.cell_size_px() << '\n'
         << "channels = " << grid.channels() << '\n'
         << "cells = " << grid.size() << '\n'
         << "values = " << values_path.filename().string() << '\n'
         << "counts = " << counts_path.filename().string() << '\n';
  write_text_file(fs::path(stem.string() + ".grid"), header.str());
}

CellGridBase load_grid(const fs::path& stem, GridKind expected) {
  const fs::path header_path(stem.string() + ".grid");
  const KeyValues header = KeyValues::load(header_path);
  if (header.get("kind") != to_string(expected)) {
    throw FormatError(header_path.string() + ": expected a " + to_string(expected) +
                      " grid, found '" + header.get("kind") + "'");
  }
  const fs::path dir = header_path.parent_path();
  const Tensor values = read_tensor(dir / header.get("values"));
  const Tensor counts = read_tensor(dir / header.get("counts"));
  const auto w = header.get_int("grid_w");
  const auto h = header.get_int("grid_h");
  const auto channels = header.get_int("channels");
  if (values.height() != h || values.width() != w || values.channels() != channels ||
      counts.height() != h || counts.width() != w || counts.channels() != 1) {
    throw FormatError(header_path.string() + ": tensor shapes disagree with header");
  }
  const auto min_gx = header.get_int("min_gx");
  const auto min_gy = header.get_int("min_gy");

  std::vector<CellCoord> cells;
  std::vector<std::uint32_t> cell_counts;
  std::vector<float> cell_values;
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      const float c = counts.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j), 0);
      if (c == 0.0F) continue;
      if (c != std::floor(c)) throw FormatError(header_path.string() + ": fractional count");
      cells.push_back({min_gx + j, min_gy + i});
      cell_counts.push_back(static_cast<std::uint32_t>(c));
      const auto v = values.vector_at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      cell_values.insert(cell_values.end(), v.begin(), v.end());
    }
  }
  if (static_cast<long long>(cells.size()) != header.get_int("cells")) {
    throw FormatError(header_path.string() + ": cell count disagrees with header");
  }
  return CellGridBase(header.get("slide_id"), header.get_int("cell_size_px"),
                      static_cast<std::uint32_t>(channels), std::move(cells),
                      std::move(cell_counts), std::move(cell_values));
}

}  // namespace featclust
