#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tractfusion/common.hpp"

namespace tractfusion {

// Ordered 3-D polyline in mm (RAS), the unit of classification.
struct Streamline {
  int64_t id = 0;
  std::vector<Vec3> points;
  std::optional<int> label;  // class index in {0..3}
};

struct NeighborSet {
  int64_t target_id = 0;
  std::vector<int64_t> neighbor_ids;  // ascending distance
  std::vector<double> distances;      // mm, matching order
};

struct EndpointPair {
  std::array<double, 6> coords{};  // first endpoint xyz, second endpoint xyz, canonical order
  bool canonical_flipped = false;  // original order was reversed
};

inline double total_arc_length(const Streamline& s) {
  double len = 0.0;
  for (size_t i = 1; i < s.points.size(); ++i) len += distance(s.points[i - 1], s.points[i]);
  return len;
}

// Uniform arc-length resampling of the piecewise-linear curve. First and last
// points are copied from the input exactly.
inline Streamline resample(const Streamline& s, int64_t target_points = 25) {
  if (s.points.size() < 2) throw DataError("resample: streamline " + std::to_string(s.id) + " has fewer than 2 points");
  if (target_points < 2) throw DataError("resample: target point count must be >= 2");
  for (const auto& p : s.points)
    if (!p.finite()) throw DataError("resample: non-finite coordinate in streamline " + std::to_string(s.id));

  const size_t n = s.points.size();
  std::vector<double> cum(n, 0.0);
  for (size_t i = 1; i < n; ++i) cum[i] = cum[i - 1] + distance(s.points[i - 1], s.points[i]);
  const double total = cum[n - 1];
  if (total <= 0.0) throw DataError("resample: zero-length streamline " + std::to_string(s.id));

  Streamline out;
  out.id = s.id;
  out.label = s.label;
  out.points.resize(static_cast<size_t>(target_points));
  out.points.front() = s.points.front();
  out.points.back() = s.points.back();
  size_t seg = 0;
  for (int64_t k = 1; k + 1 < target_points; ++k) {
    const double target = total * static_cast<double>(k) / static_cast<double>(target_points - 1);
    while (seg + 2 < n && cum[seg + 1] < target) ++seg;
    const double seg_len = cum[seg + 1] - cum[seg];
    const double t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
    out.points[static_cast<size_t>(k)] = s.points[seg] + (s.points[seg + 1] - s.points[seg]) * t;
  }
  return out;
}

// Minimum-average-direct-flip distance between two equally resampled
// streamlines: min of the mean pointwise distance over direct and reversed
// alignment. Symmetric, non-negative, invariant to reversing either argument.
inline double streamline_distance(const Streamline& a, const Streamline& b) {
  const size_t n = a.points.size();
  if (n != b.points.size()) throw DataError("streamline_distance: point-count mismatch");
  double direct = 0.0, flipped = 0.0;
  for (size_t i = 0; i < n; ++i) {
    direct += distance(a.points[i], b.points[i]);
    flipped += distance(a.points[i], b.points[n - 1 - i]);
  }
  return std::min(direct, flipped) / static_cast<double>(n);
}

// Exhaustive exact k-nearest-neighbor search over the bundle. Ties in
// distance break toward the lower streamline index, so results do not
// depend on evaluation order.
inline std::vector<NeighborSet> knn(const std::vector<Streamline>& bundle, int64_t k = 20) {
  const int64_t n = static_cast<int64_t>(bundle.size());
  if (n <= k) throw DataError("knn: insufficient streamlines (need more than " + std::to_string(k) + ")");
  std::vector<NeighborSet> out(static_cast<size_t>(n));
  std::vector<std::pair<double, int64_t>> row;
  for (int64_t i = 0; i < n; ++i) {
    row.clear();
    row.reserve(static_cast<size_t>(n - 1));
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      row.emplace_back(streamline_distance(bundle[static_cast<size_t>(i)], bundle[static_cast<size_t>(j)]), j);
    }
    std::partial_sort(row.begin(), row.begin() + k, row.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second < b.second;
    });
    NeighborSet ns;
    ns.target_id = bundle[static_cast<size_t>(i)].id;
    for (int64_t r = 0; r < k; ++r) {
      ns.neighbor_ids.push_back(bundle[static_cast<size_t>(row[static_cast<size_t>(r)].second)].id);
      ns.distances.push_back(row[static_cast<size_t>(r)].first);
    }
    out[static_cast<size_t>(i)] = std::move(ns);
  }
  return out;
}

// Canonical endpoint ordering: inferior (smaller z) endpoint first, ties by
// smaller y, then smaller x.
inline bool endpoint_order_flipped(const Vec3& first, const Vec3& last) {
  if (last.z != first.z) return last.z < first.z;
  if (last.y != first.y) return last.y < first.y;
  return last.x < first.x;
}

inline EndpointPair endpoints(const Streamline& s) {
  if (s.points.size() < 2) throw DataError("endpoints: streamline has fewer than 2 points");
  const Vec3& a = s.points.front();
  const Vec3& b = s.points.back();
  EndpointPair ep;
  ep.canonical_flipped = endpoint_order_flipped(a, b);
  const Vec3& first = ep.canonical_flipped ? b : a;
  const Vec3& second = ep.canonical_flipped ? a : b;
  ep.coords = {first.x, first.y, first.z, second.x, second.y, second.z};
  return ep;
}

// Reorders points so the canonical (inferior-first) endpoint leads. Applied
// dataset-wide before model input assembly, which makes every downstream
// feature independent of the stored point order.
inline Streamline canonicalize_orientation(const Streamline& s) {
  if (!endpoint_order_flipped(s.points.front(), s.points.back())) return s;
  Streamline out = s;
  std::reverse(out.points.begin(), out.points.end());
  return out;
}

struct BundleTransform {
  Vec3 center;
  double scale = 1.0;
};

// Subtract the centroid of all points, divide by the max norm after
// centering. Normalized coordinates lie in the unit ball.
inline BundleTransform normalize_bundle(std::vector<Streamline>& bundle) {
  if (bundle.empty()) throw DataError("normalize_bundle: empty bundle");
  Vec3 centroid;
  int64_t count = 0;
  for (const auto& s : bundle)
    for (const auto& p : s.points) {
      centroid += p;
      ++count;
    }
  if (count == 0) throw DataError("normalize_bundle: no points");
  centroid = centroid * (1.0 / static_cast<double>(count));
  double max_norm = 0.0;
  for (const auto& s : bundle)
    for (const auto& p : s.points) max_norm = std::max(max_norm, (p - centroid).norm());
  if (max_norm <= 0.0) throw DataError("normalize_bundle: zero scale (all points identical)");
  const double inv = 1.0 / max_norm;
  for (auto& s : bundle)
    for (auto& p : s.points) p = (p - centroid) * inv;
  return {centroid, max_norm};
}

inline Vec3 denormalize_point(const Vec3& p, const BundleTransform& t) { return p * t.scale + t.center; }

}  // namespace tractfusion
