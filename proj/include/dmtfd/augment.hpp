#pragma once

// Neighborhood discovery and interpolation-based augmentation. Views are
// convex combinations of a window and one of its k nearest neighbors
// (Euclidean distance on the flattened windows), with an optional radius cap.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <vector>

#include "dmtfd/dataio.hpp"
#include "dmtfd/errors.hpp"
#include "dmtfd/rng.hpp"

namespace dmtfd {

struct NeighborIndex {
  // Per window: up to k neighbor ids, ascending by (distance, index).
  std::vector<std::vector<long>> neighbor_ids;
  int k = 0;
  std::optional<double> epsilon;
};

struct AugmentedPairBatch {
  MatX anchors;   // B x (K*T)
  MatX views;     // B x (K*T)
  MatX homology;  // B x B; identity under the one-view-per-anchor scheme
  // Provenance for the debug dump: chosen neighbor id (== anchor id when the
  // anchor fell back to itself) and the interpolation coefficient.
  std::vector<long> neighbor_of;
  std::vector<double> alpha_of;
};

struct AlphaMode {
  bool is_uniform = true;
  double fixed_value = 1.0;

  static AlphaMode uniform() { return {true, 0.0}; }
  static AlphaMode fixed(double a) {
    if (!(a >= 0.0 && a <= 1.0)) throw UsageError("interpolation alpha must lie in [0,1]");
    return {false, a};
  }
};

inline NeighborIndex build_neighbor_index(const WindowBatch& batch, int k,
                                          std::optional<double> epsilon = std::nullopt) {
  if (k < 1) throw UsageError("neighbor count k must be >= 1");
  const long n = batch.count();
  if (n == 0) throw UsageError("cannot index an empty window batch");

  NeighborIndex index;
  index.k = k;
  index.epsilon = epsilon;
  index.neighbor_ids.assign(n, {});
  if (n == 1) {
    std::cerr << "[augment] batch has a single window; neighbor lists are empty\n";
    return index;
  }

  // |a-b|^2 = |a|^2 + |b|^2 - 2 a.b ; identical rows cancel exactly.
  const MatX& w = batch.windows;
  MatX gram = w * w.transpose();
  std::vector<std::pair<double, long>> order;
  order.reserve(n - 1);
  for (long c = 0; c < n; ++c) {
    order.clear();
    for (long j = 0; j < n; ++j) {
      if (j == c) continue;
      const double d2 = std::max(0.0, gram(c, c) + gram(j, j) - 2.0 * gram(c, j));
      const double d = std::sqrt(d2);
      if (epsilon && d > *epsilon) continue;
      order.emplace_back(d, j);
    }
    const std::size_t keep = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
    std::partial_sort(order.begin(), order.begin() + keep, order.end());
    auto& ids = index.neighbor_ids[c];
    ids.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) ids.push_back(order[i].second);
  }
  return index;
}

// alpha * anchor + (1 - alpha) * neighbor, elementwise.
inline Eigen::RowVectorXd interpolate(const Eigen::RowVectorXd& anchor,
                                      const Eigen::RowVectorXd& neighbor,
                                      double alpha) {
  if (anchor.size() != neighbor.size())
    throw UsageError("interpolation operands have different shapes");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw UsageError("interpolation alpha must lie in [0,1]");
  return alpha * anchor + (1.0 - alpha) * neighbor;
}

// One view per anchor: a uniformly random catalogued neighbor (the anchor
// itself when its list is empty) blended with a per-mode coefficient. Each
// anchor owns an RNG stream derived from (seed, anchor index), so serial and
// parallel generation agree bit for bit.
inline AugmentedPairBatch make_pairs(const WindowBatch& batch, const NeighborIndex& index,
                                     const AlphaMode& mode, std::uint64_t rng_seed) {
  const long n = batch.count();
  if (static_cast<long>(index.neighbor_ids.size()) != n)
    throw UsageError("neighbor index was built over a different batch");

  AugmentedPairBatch out;
  out.anchors = batch.windows;
  out.views.resizeLike(batch.windows);
  out.homology = MatX::Identity(n, n);
  out.neighbor_of.resize(n);
  out.alpha_of.resize(n);

  for (long c = 0; c < n; ++c) {
    Rng stream(derive_stream(rng_seed, static_cast<std::uint64_t>(c)));
    const auto& ids = index.neighbor_ids[c];
    long j = c;
    double alpha = 1.0;
    if (!ids.empty()) {
      j = ids[stream.bounded(ids.size())];
      alpha = mode.is_uniform ? stream.u01() : mode.fixed_value;
    }
    out.views.row(c) = alpha * batch.windows.row(c) + (1.0 - alpha) * batch.windows.row(j);
    out.neighbor_of[c] = j;
    out.alpha_of[c] = alpha;
  }
  return out;
}

inline void write_pair_debug(const AugmentedPairBatch& pairs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write pair debug file: " + path);
  out << "anchor,neighbor,alpha\n";
  char buf[64];
  for (std::size_t c = 0; c < pairs.neighbor_of.size(); ++c) {
    std::snprintf(buf, sizeof(buf), "%.17g", pairs.alpha_of[c]);
    out << c << ',' << pairs.neighbor_of[c] << ',' << buf << '\n';
  }
}

}  // namespace dmtfd
