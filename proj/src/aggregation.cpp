#include "featclust/aggregation.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <thread>
#include <unordered_map>

#include "featclust/error.hpp"
#include "featclust/stats.hpp"

namespace featclust {

namespace {

struct CellHash {
  std::size_t operator()(const CellCoord& c) const noexcept {
    return static_cast<std::size_t>(derive_seed(static_cast<std::uint64_t>(c.gx),
                                                static_cast<std::uint64_t>(c.gy)));
  }
};

struct Accumulator {
  std::vector<CellCoord> cells;
  std::vector<std::uint32_t> counts;
  std::vector<double> sums;
};

std::vector<std::size_t> canonical_order(const SlideManifest& manifest) {
  std::vector<std::size_t> order(manifest.tiles.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ta = manifest.tiles[a];
    const auto& tb = manifest.tiles[b];
    return std::tie(ta.origin_y_px, ta.origin_x_px) < std::tie(tb.origin_y_px, tb.origin_x_px);
  });
  return order;
}

void check_inputs(const SlideManifest& manifest, std::span<const Tensor> tensors, int margin) {
  if (tensors.size() != manifest.tiles.size()) {
    throw ValidationError("aggregate: " + std::to_string(tensors.size()) + " tensors for " +
                          std::to_string(manifest.tiles.size()) + " tiles");
  }
  if (margin < 0) throw ValidationError("aggregate: margin must be >= 0");
  for (std::size_t n = 1; n < tensors.size(); ++n) {
    if (tensors[n].shape() != tensors[0].shape()) {
      throw ValidationError("aggregate: tile " + std::to_string(n) +
                            " shape differs from tile 0");
    }
  }
  if (!tensors.empty() && (tensors[0].height() != manifest.cells_per_tile() ||
                           tensors[0].width() != manifest.cells_per_tile())) {
    throw ValidationError("aggregate: tensor spatial size does not match tile_size_px / "
                          "cell_size_px");
  }
}

// Accumulates the lattice rows owned by one worker (gy % workers == worker),
// visiting tiles in canonical order so every cell sums in the same order.
Accumulator accumulate_rows(const SlideManifest& manifest, std::span<const Tensor> tensors,
                            const std::vector<std::size_t>& order, int margin, int worker,
                            int workers) {
  Accumulator acc;
  std::unordered_map<CellCoord, std::size_t, CellHash> slots;
  const std::uint32_t channels = tensors.empty() ? 0 : tensors[0].channels();
  for (std::size_t t : order) {
    const Tensor& tensor = tensors[t];
    const auto& tile = manifest.tiles[t];
    const std::int64_t h = tensor.height();
    const std::int64_t w = tensor.width();
    for (std::int64_t i = margin; i < h - margin; ++i) {
      const CellCoord row_start = cell_to_slide_coords(tile, i, margin, manifest.cell_size_px);
      if (row_start.gy % workers != worker) continue;
      for (std::int64_t j = margin; j < w - margin; ++j) {
        const CellCoord cell{row_start.gx + (j - margin), row_start.gy};
        auto [it, inserted] = slots.try_emplace(cell, acc.cells.size());
        if (inserted) {
          acc.cells.push_back(cell);
          acc.counts.push_back(0);
          acc.sums.resize(acc.sums.size() + channels, 0.0);
        }
        const std::size_t slot = it->second;
        ++acc.counts[slot];
        const auto v = tensor.vector_at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        double* sum = acc.sums.data() + slot * channels;
        for (std::uint32_t c = 0; c < channels; ++c) sum[c] += v[c];
      }
    }
  }
  return acc;
}

CellGridBase aggregate_impl(const SlideManifest& manifest, std::span<const Tensor> tensors,
                            int margin, int threads) {
  check_inputs(manifest, tensors, margin);
  if (tensors.empty()) throw ValidationError("aggregate: no tiles");
  if (2 * margin >= static_cast<int>(tensors[0].height()) ||
      2 * margin >= static_cast<int>(tensors[0].width())) {
    throw ValidationError("aggregate: margin " + std::to_string(margin) +
                          " leaves an empty interior");
  }
  const auto order = canonical_order(manifest);
  const int workers = std::max(1, threads);
  std::vector<Accumulator> parts(static_cast<std::size_t>(workers));
  if (workers == 1) {
    parts[0] = accumulate_rows(manifest, tensors, order, margin, 0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        parts[static_cast<std::size_t>(w)] =
            accumulate_rows(manifest, tensors, order, margin, w, workers);
      });
    }
  }

  const std::uint32_t channels = tensors[0].channels();
  struct Ref {
    CellCoord cell;
    std::size_t part;
    std::size_t slot;
  };
  std::vector<Ref> refs;
  for (std::size_t p = 0; p < parts.size(); ++p)
    for (std::size_t s = 0; s < parts[p].cells.size(); ++s) refs.push_back({parts[p].cells[s], p, s});
  std::sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.cell < b.cell; });

  std::vector<CellCoord> cells;
  std::vector<std::uint32_t> counts;
  std::vector<float> values;
  cells.reserve(refs.size());
  counts.reserve(refs.size());
  values.reserve(refs.size() * channels);
  for (const Ref& r : refs) {
    const Accumulator& part = parts[r.part];
    const std::uint32_t count = part.counts[r.slot];
    cells.push_back(r.cell);
    counts.push_back(count);
    const double* sum = part.sums.data() + r.slot * channels;
    for (std::uint32_t c = 0; c < channels; ++c) {
      values.push_back(static_cast<float>(sum[c] / count));
    }
  }
  return CellGridBase(manifest.slide_id, manifest.cell_size_px, channels, std::move(cells),
                      std::move(counts), std::move(values));
}

}  // namespace

CellCoord cell_to_slide_coords(const TileRecord& tile, std::int64_t i, std::int64_t j,
                               std::int64_t cell_size_px) {
  if (cell_size_px <= 0) throw ValidationError("cell size must be positive");
  if (tile.origin_x_px % cell_size_px != 0 || tile.origin_y_px % cell_size_px != 0) {
    throw ValidationError("tile origin (" + std::to_string(tile.origin_x_px) + ", " +
                          std::to_string(tile.origin_y_px) + ") is not divisible by cell size " +
                          std::to_string(cell_size_px));
  }
  return CellCoord{tile.origin_x_px / cell_size_px + j, tile.origin_y_px / cell_size_px + i};
}

TrimmedTensor trim_border(const Tensor& tensor, int margin) {
  if (margin < 0) throw ValidationError("trim_border: margin must be >= 0");
  if (margin == 0) return {tensor, 0};
  const auto m = static_cast<std::uint32_t>(margin);
  if (tensor.height() <= 2 * m || tensor.width() <= 2 * m) {
    throw ValidationError("trim_border: " + std::to_string(tensor.height()) + "x" +
                          std::to_string(tensor.width()) + " tensor too small for margin " +
                          std::to_string(margin));
  }
  const TensorShape shape{tensor.height() - 2 * m, tensor.width() - 2 * m, tensor.channels()};
  std::vector<float> data;
  data.reserve(shape.elements());
  for (std::uint32_t i = 0; i < shape.height; ++i) {
    for (std::uint32_t j = 0; j < shape.width; ++j) {
      const auto v = tensor.vector_at(i + m, j + m);
      data.insert(data.end(), v.begin(), v.end());
    }
  }
  return {Tensor(shape, tensor.dtype(), std::move(data)), margin};
}

std::vector<CellCoord> tile_interior_cells(const SlideManifest& manifest, const TileRecord& tile,
                                           int margin) {
  const std::int64_t n = manifest.cells_per_tile();
  if (margin < 0 || 2 * margin >= n) throw ValidationError("tile interior is empty");
  std::vector<CellCoord> cells;
  cells.reserve(static_cast<std::size_t>((n - 2 * margin) * (n - 2 * margin)));
  for (std::int64_t i = margin; i < n - margin; ++i)
    for (std::int64_t j = margin; j < n - margin; ++j)
      cells.push_back(cell_to_slide_coords(tile, i, j, manifest.cell_size_px));
  return cells;
}

SlideFeatureGrid aggregate_slide(const SlideManifest& manifest, std::span<const Tensor> tensors,
                                 int margin, int threads) {
  return SlideFeatureGrid(aggregate_impl(manifest, tensors, margin, threads));
}

SlideSaliencyGrid aggregate_scalar_maps(const SlideManifest& manifest,
                                        std::span<const Tensor> maps, int margin, int threads) {
  if (!maps.empty() && maps[0].channels() != 1) {
    throw ValidationError("aggregate_scalar_maps: maps must have one channel");
  }
  return SlideSaliencyGrid(aggregate_impl(manifest, maps, margin, threads));
}

EquivarianceProbe equivariance_probe(const SlideManifest& manifest,
                                     std::span<const Tensor> tensors, int margin) {
  check_inputs(manifest, tensors, margin);
  std::unordered_map<CellCoord, std::vector<std::pair<std::size_t, std::size_t>>, CellHash> hits;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const std::int64_t h = tensors[t].height();
    const std::int64_t w = tensors[t].width();
    for (std::int64_t i = margin; i < h - margin; ++i)
      for (std::int64_t j = margin; j < w - margin; ++j)
        hits[cell_to_slide_coords(manifest.tiles[t], i, j, manifest.cell_size_px)].emplace_back(
            static_cast<std::size_t>(i) * static_cast<std::size_t>(w) + static_cast<std::size_t>(j), t);
  }
  // Sorted traversal keeps the floating-point sum reproducible.
  std::vector<CellCoord> keys;
  for (const auto& [cell, list] : hits)
    if (list.size() > 1) keys.push_back(cell);
  std::sort(keys.begin(), keys.end());

  EquivarianceProbe probe;
  double total = 0.0;
  for (const auto& cell : keys) {
    auto list = hits[cell];
    std::sort(list.begin(), list.end(), [](auto a, auto b) { return a.second < b.second; });
    for (std::size_t a = 0; a < list.size(); ++a) {
      for (std::size_t b = a + 1; b < list.size(); ++b) {
        const Tensor& ta = tensors[list[a].second];
        const Tensor& tb = tensors[list[b].second];
        const std::size_t w = ta.width();
        const auto va = ta.vector_at(list[a].first / w, list[a].first % w);
        const auto vb = tb.vector_at(list[b].first / w, list[b].first % w);
        const std::vector<double> da(va.begin(), va.end());
        const std::vector<double> db(vb.begin(), vb.end());
        // Two all-zero vectors agree perfectly.
        const auto cos = cosine_similarity(da, db);
        const bool both_zero = !cos && std::all_of(da.begin(), da.end(), [](double x) { return x == 0.0; }) &&
                               std::all_of(db.begin(), db.end(), [](double x) { return x == 0.0; });
        total += cos.value_or(both_zero ? 1.0 : 0.0);
        ++probe.pairs;
      }
    }
  }
  if (probe.pairs > 0) probe.mean_cosine = total / static_cast<double>(probe.pairs);
  return probe;
}

SlideInference infer_slide_weights(const SlideFeatureGrid& grid, const FactorModel& model,
                                   const InferConfig& config) {
  if (grid.empty()) throw ValidationError("infer_slide_weights: grid '" + grid.slide_id() + "' is empty");
  if (grid.channels() != static_cast<std::uint32_t>(model.channels())) {
    throw ValidationError("infer_slide_weights: grid has " + std::to_string(grid.channels()) +
                          " channels, model expects " + std::to_string(model.channels()));
  }
  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto c = static_cast<Eigen::Index>(grid.channels());
  Matrix V(n, c);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto v = grid.values(static_cast<std::size_t>(r));
    for (Eigen::Index col = 0; col < c; ++col) V(r, col) = v[static_cast<std::size_t>(col)];
  }
  InferResult result = nmf_infer(model, V, config);

  const auto k = static_cast<std::uint32_t>(model.k());
  std::vector<float> weights;
  weights.reserve(grid.size() * k);
  for (Eigen::Index r = 0; r < n; ++r)
    for (std::uint32_t col = 0; col < k; ++col)
      weights.push_back(static_cast<float>(result.weights(r, col)));
  std::vector<std::uint32_t> counts(grid.size());
  for (std::size_t m = 0; m < grid.size(); ++m) counts[m] = grid.count(m);
  WeightGrid out(grid.slide_id(), grid.cell_size_px(), k,
                 std::vector<CellCoord>(grid.cells().begin(), grid.cells().end()),
                 std::move(counts), std::move(weights));
  return {std::move(out), std::move(result)};
}

}  // namespace featclust
