#pragma once

// Independent brute-force reference implementations used by the unit and
// acceptance tests. They follow the textbook definitions directly and share
// no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "featclust/manifest.hpp"
#include "featclust/nmf.hpp"
#include "featclust/tensor.hpp"

namespace oracle {

inline double frobenius_residual(const featclust::Matrix& V, const featclust::Matrix& W,
                                 const featclust::Matrix& H) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < V.rows(); ++i) {
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
      double wh = 0.0;
      for (Eigen::Index k = 0; k < W.cols(); ++k) wh += W(i, k) * H(k, j);
      const double d = V(i, j) - wh;
      total += d * d;
    }
  }
  return total;
}

/// Mann-Whitney AUC by counting every (positive, negative) pair.
inline double auc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return pairs == 0 ? 0.5 : wins / static_cast<double>(pairs);
}

struct Confusion {
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion confusion(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted && labels[i] == 1) ++c.tp;
    if (predicted && labels[i] == 0) ++c.fp;
    if (!predicted && labels[i] == 0) ++c.tn;
    if (!predicted && labels[i] == 1) ++c.fn;
  }
  return c;
}

/// Two-pass Pearson correlation; nullopt for a constant input.
inline std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

inline std::optional<double> cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return std::nullopt;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// IoU of the index sets {a > eps} and {b > eps}; 0 for an empty union.
inline double iou_sets(const std::vector<double>& a, const std::vector<double>& b, double eps) {
  std::set<std::size_t> sa, sb, both;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > eps) sa.insert(i);
    if (b[i] > eps) sb.insert(i);
  }
  std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(both, both.begin()));
  if (both.empty()) return 0.0;
  std::size_t inter = 0;
  for (std::size_t i : sa) inter += sb.count(i);
  return static_cast<double>(inter) / static_cast<double>(both.size());
}

/// GradCAM straight from its definition with scalar loops.
inline std::vector<double> gradcam(const featclust::Tensor& a, const featclust::Tensor& g) {
  const std::size_t h = a.height(), w = a.width(), c = a.channels();
  std::vector<double> alpha(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) alpha[k] += g.at(i, j, k);
    alpha[k] /= static_cast<double>(h * w);
  }
  std::vector<double> out(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += alpha[k] * a.at(i, j, k);
      out[i * w + j] = std::max(0.0, s);
    }
  }
  return out;
}

/// Per-cell (sum vector, count) from the geometric definition: tile cell
/// (i, j) inside the trimmed interior lands on lattice cell
/// (origin_x / cell + j, origin_y / cell + i).
struct CellAccumulator {
  std::map<std::pair<std::int64_t, std::int64_t>, std::pair<std::vector<double>, std::uint32_t>> cells;

  void add_tile(const featclust::TileRecord& tile, const featclust::Tensor& t, std::int64_t cell_size, int margin) {
    for (std::uint32_t i = 0; i < t.height(); ++i) {
      for (std::uint32_t j = 0; j < t.width(); ++j) {
        if (static_cast<int>(i) < margin || static_cast<int>(j) < margin ||
            i >= t.height() - static_cast<std::uint32_t>(margin) ||
            j >= t.width() - static_cast<std::uint32_t>(margin)) {
          continue;
        }
        const std::pair<std::int64_t, std::int64_t> key{tile.origin_y_px / cell_size + i,
                                                        tile.origin_x_px / cell_size + j};
        auto& [sum, count] = cells[key];
        sum.resize(t.channels(), 0.0);
        for (std::uint32_t c = 0; c < t.channels(); ++c) sum[c] += t.at(i, j, c);
        ++count;
      }
    }
  }
};

}  // namespace oracle
