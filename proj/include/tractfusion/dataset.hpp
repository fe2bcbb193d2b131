#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tractfusion/common.hpp"
#include "tractfusion/nn.hpp"
#include "tractfusion/streamline.hpp"
#include "tractfusion/voxel_grid.hpp"

namespace tractfusion {

struct DatasetOptions {
  int64_t points = 25;
  int64_t k_neighbors = 20;
};

// Model-ready tensors for a whole bundle. Streamlines are resampled,
// canonicalized to inferior-first point order, and normalized to the unit
// ball; neighbors are found on raw mm coordinates before normalization.
struct Dataset {
  std::vector<Streamline> canonical_mm;  // resampled, canonical order, mm
  nn::Matrix targets;                    // N x 3P normalized coordinates
  nn::Matrix endpoint_coords;            // N x 6 normalized, canonical order
  std::vector<int32_t> neighbor_index;   // N x K row-major, indices into this dataset
  nn::Matrix sig_a, sig_b;               // N x T z-scored endpoint series (empty without a grid)
  std::vector<int> labels;               // -1 when unlabeled
  std::vector<int64_t> ids;
  BundleTransform transform;
  int64_t points = 25;
  int64_t k_neighbors = 20;
  int64_t frames = 0;

  int64_t size() const { return targets.rows; }
  bool has_signals() const { return sig_a.rows > 0; }
  bool fully_labeled() const {
    for (int l : labels)
      if (l < 0) return false;
    return !labels.empty();
  }
};

inline void zscore_inplace(double* x, int64_t n) {
  double mean = 0.0;
  for (int64_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (int64_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  if (sd < 1e-12) {
    for (int64_t i = 0; i < n; ++i) x[i] = 0.0;  // constant series maps to zeros, never NaN
  } else {
    for (int64_t i = 0; i < n; ++i) x[i] = (x[i] - mean) / sd;
  }
}

// grid, when present, must already be denoised; endpoint series are looked
// up in mm space and z-scored per series.
inline Dataset build_dataset(const std::vector<Streamline>& raw_bundle, const VoxelGridSeries* grid, const CorticalMask* mask,
                             const DatasetOptions& opts = {}) {
  if (raw_bundle.empty()) throw DataError("build_dataset: empty bundle");
  if (static_cast<int64_t>(raw_bundle.size()) <= opts.k_neighbors)
    throw DataError("build_dataset: need more than " + std::to_string(opts.k_neighbors) + " streamlines");

  Dataset ds;
  ds.points = opts.points;
  ds.k_neighbors = opts.k_neighbors;
  const int64_t n = static_cast<int64_t>(raw_bundle.size());

  // Canonicalize before resampling: resampling a reversed polyline walks the
  // segments from the other end and differs in the last float bits, which
  // would break bit-exact orientation invariance downstream. Endpoints are
  // preserved by resample, so the canonical decision is the same either way.
  ds.canonical_mm.reserve(static_cast<size_t>(n));
  for (const auto& s : raw_bundle) ds.canonical_mm.push_back(resample(canonicalize_orientation(s), opts.points));

  std::unordered_map<int64_t, int32_t> id_to_index;
  for (int64_t i = 0; i < n; ++i) {
    const auto& s = ds.canonical_mm[static_cast<size_t>(i)];
    if (id_to_index.count(s.id)) throw DataError("build_dataset: duplicate streamline id " + std::to_string(s.id));
    id_to_index[s.id] = static_cast<int32_t>(i);
    ds.ids.push_back(s.id);
    ds.labels.push_back(s.label ? *s.label : -1);
  }

  const auto neighbor_sets = knn(ds.canonical_mm, opts.k_neighbors);
  ds.neighbor_index.resize(static_cast<size_t>(n * opts.k_neighbors));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < opts.k_neighbors; ++k)
      ds.neighbor_index[static_cast<size_t>(i * opts.k_neighbors + k)] =
          id_to_index.at(neighbor_sets[static_cast<size_t>(i)].neighbor_ids[static_cast<size_t>(k)]);

  std::vector<Streamline> normalized = ds.canonical_mm;
  ds.transform = normalize_bundle(normalized);
  ds.targets.resize(n, 3 * opts.points);
  ds.endpoint_coords.resize(n, 6);
  for (int64_t i = 0; i < n; ++i) {
    const auto& s = normalized[static_cast<size_t>(i)];
    double* t = ds.targets.row(i);
    for (int64_t p = 0; p < opts.points; ++p) {
      t[3 * p + 0] = s.points[static_cast<size_t>(p)].x;
      t[3 * p + 1] = s.points[static_cast<size_t>(p)].y;
      t[3 * p + 2] = s.points[static_cast<size_t>(p)].z;
    }
    double* e = ds.endpoint_coords.row(i);
    e[0] = s.points.front().x;
    e[1] = s.points.front().y;
    e[2] = s.points.front().z;
    e[3] = s.points.back().x;
    e[4] = s.points.back().y;
    e[5] = s.points.back().z;
  }

  if (grid) {
    if (!mask) throw DataError("build_dataset: grid requires a mask");
    const auto pairs = map_endpoint_signals(*grid, *mask, ds.canonical_mm);
    ds.frames = grid->frames;
    ds.sig_a.resize(n, grid->frames);
    ds.sig_b.resize(n, grid->frames);
    for (int64_t i = 0; i < n; ++i) {
      std::copy(pairs[static_cast<size_t>(i)].sig_a.begin(), pairs[static_cast<size_t>(i)].sig_a.end(), ds.sig_a.row(i));
      std::copy(pairs[static_cast<size_t>(i)].sig_b.begin(), pairs[static_cast<size_t>(i)].sig_b.end(), ds.sig_b.row(i));
      zscore_inplace(ds.sig_a.row(i), grid->frames);
      zscore_inplace(ds.sig_b.row(i), grid->frames);
    }
  }
  return ds;
}

// Gathers chunk tensors for the backbone: targets [B x 3P] and, when K > 0,
// the neighbor block [B*K x 3P].
inline void gather_backbone_chunk(const Dataset& ds, const std::vector<int64_t>& order, int64_t begin, int64_t end, nn::Matrix& targets,
                                  nn::Matrix* neighbors) {
  const int64_t B = end - begin;
  targets.resize_overwrite(B, ds.targets.cols);
  for (int64_t b = 0; b < B; ++b)
    std::copy(ds.targets.row(order[static_cast<size_t>(begin + b)]),
              ds.targets.row(order[static_cast<size_t>(begin + b)]) + ds.targets.cols, targets.row(b));
  if (neighbors) {
    neighbors->resize_overwrite(B * ds.k_neighbors, ds.targets.cols);
    for (int64_t b = 0; b < B; ++b) {
      const int64_t i = order[static_cast<size_t>(begin + b)];
      for (int64_t k = 0; k < ds.k_neighbors; ++k) {
        const int32_t nb = ds.neighbor_index[static_cast<size_t>(i * ds.k_neighbors + k)];
        std::copy(ds.targets.row(nb), ds.targets.row(nb) + ds.targets.cols, neighbors->row(b * ds.k_neighbors + k));
      }
    }
  }
}

inline std::vector<int> gather_labels(const Dataset& ds, const std::vector<int64_t>& order, int64_t begin, int64_t end) {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(end - begin));
  for (int64_t i = begin; i < end; ++i) {
    const int lab = ds.labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
    if (lab < 0) throw DataError("dataset: streamline " + std::to_string(ds.ids[static_cast<size_t>(order[static_cast<size_t>(i)])]) +
                                 " has no label");
    out.push_back(lab);
  }
  return out;
}

}  // namespace tractfusion
