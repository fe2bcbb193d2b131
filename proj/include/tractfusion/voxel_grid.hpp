#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "tractfusion/common.hpp"
#include "tractfusion/streamline.hpp"

namespace tractfusion {

// 4-D (space x time) BOLD store. Frame-major data; within a frame the linear
// index is x + nx*(y + ny*z). origin is the mm coordinate of voxel (0,0,0)'s
// center.
struct VoxelGridSeries {
  std::array<int64_t, 3> dims{1, 1, 1};
  Vec3 voxel_size{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  double tr = 1.0;   // seconds per frame
  int64_t frames = 0;
  std::vector<double> data;  // frames * nx*ny*nz

  int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  int64_t linear(int64_t x, int64_t y, int64_t z) const { return x + dims[0] * (y + dims[1] * z); }
  double& at(int64_t t, int64_t lin) { return data[t * voxels() + lin]; }
  double at(int64_t t, int64_t lin) const { return data[t * voxels() + lin]; }
  double* frame(int64_t t) { return data.data() + t * voxels(); }
  const double* frame(int64_t t) const { return data.data() + t * voxels(); }

  void validate() const {
    if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) throw DataError("grid: all dims must be >= 1");
    if (voxel_size.x <= 0 || voxel_size.y <= 0 || voxel_size.z <= 0) throw DataError("grid: voxel size must be positive");
    if (tr <= 0) throw DataError("grid: tr must be positive");
    if (frames < 2) throw DataError("grid: need at least 2 frames");
    if (static_cast<int64_t>(data.size()) != frames * voxels()) throw DataError("grid: data length mismatch");
    for (double v : data)
      if (!std::isfinite(v)) throw DataError("grid: non-finite value");
  }
};

struct CorticalMask {
  std::array<int64_t, 3> dims{1, 1, 1};
  std::vector<uint8_t> values;  // 0/1 per voxel, frame layout

  int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  int64_t linear(int64_t x, int64_t y, int64_t z) const { return x + dims[0] * (y + dims[1] * z); }
  bool at(int64_t lin) const { return values[static_cast<size_t>(lin)] != 0; }
  int64_t count() const {
    int64_t c = 0;
    for (auto v : values) c += v != 0;
    return c;
  }
  void validate() const {
    if (static_cast<int64_t>(values.size()) != voxels()) throw DataError("mask: value length mismatch");
    if (count() == 0) throw DataError("mask: no true voxels");
  }
};

inline void require_same_dims(const VoxelGridSeries& g, const CorticalMask& m, const std::string& op) {
  if (g.dims != m.dims) throw DataError(op + ": mask/grid dims mismatch");
}

// Voxel containing a mm coordinate under the documented floor convention.
inline std::array<int64_t, 3> voxel_of(const VoxelGridSeries& g, const Vec3& p) {
  return {static_cast<int64_t>(std::floor((p.x - g.origin.x) / g.voxel_size.x)),
          static_cast<int64_t>(std::floor((p.y - g.origin.y) / g.voxel_size.y)),
          static_cast<int64_t>(std::floor((p.z - g.origin.z) / g.voxel_size.z))};
}

inline bool in_bounds(const std::array<int64_t, 3>& v, const std::array<int64_t, 3>& dims) {
  return v[0] >= 0 && v[0] < dims[0] && v[1] >= 0 && v[1] < dims[1] && v[2] >= 0 && v[2] < dims[2];
}

// Mask of endpoint-containing voxels dilated by a cubic radius, clipped at
// the grid boundary.
inline CorticalMask build_mask(const std::vector<Streamline>& bundle, const VoxelGridSeries& grid_geom, int64_t dilation_radius = 1) {
  if (bundle.empty()) throw DataError("build_mask: empty bundle");
  CorticalMask mask;
  mask.dims = grid_geom.dims;
  mask.values.assign(static_cast<size_t>(mask.voxels()), 0);
  std::string out_of_bounds;
  for (const auto& s : bundle) {
    if (s.points.size() < 2) throw DataError("build_mask: streamline " + std::to_string(s.id) + " has fewer than 2 points");
    for (const Vec3& p : {s.points.front(), s.points.back()}) {
      const auto v = voxel_of(grid_geom, p);
      if (!in_bounds(v, mask.dims)) {
        if (!out_of_bounds.empty()) out_of_bounds += ",";
        out_of_bounds += std::to_string(s.id);
        continue;
      }
      for (int64_t dz = -dilation_radius; dz <= dilation_radius; ++dz)
        for (int64_t dy = -dilation_radius; dy <= dilation_radius; ++dy)
          for (int64_t dx = -dilation_radius; dx <= dilation_radius; ++dx) {
            const std::array<int64_t, 3> q{v[0] + dx, v[1] + dy, v[2] + dz};
            if (in_bounds(q, mask.dims)) mask.values[static_cast<size_t>(mask.linear(q[0], q[1], q[2]))] = 1;
          }
    }
  }
  if (!out_of_bounds.empty()) throw DataError("build_mask: endpoints outside grid bounds for streamline ids " + out_of_bounds);
  mask.validate();
  return mask;
}

namespace detail {

// One zero-padded separable pass along `axis`; src and dst are frame-sized.
inline void sep_pass(const std::array<int64_t, 3>& dims, int axis, const std::vector<double>& taps, const double* src, double* dst) {
  const int64_t r = static_cast<int64_t>(taps.size() / 2);
  const int64_t nx = dims[0], ny = dims[1], nz = dims[2];
  const int64_t stride = axis == 0 ? 1 : (axis == 1 ? nx : nx * ny);
  const int64_t extent = dims[static_cast<size_t>(axis)];
  for (int64_t z = 0; z < nz; ++z)
    for (int64_t y = 0; y < ny; ++y)
      for (int64_t x = 0; x < nx; ++x) {
        const int64_t lin = x + nx * (y + ny * z);
        const int64_t coord = axis == 0 ? x : (axis == 1 ? y : z);
        double acc = 0.0;
        const int64_t lo = std::max<int64_t>(-r, -coord);
        const int64_t hi = std::min<int64_t>(r, extent - 1 - coord);
        for (int64_t d = lo; d <= hi; ++d) acc += taps[static_cast<size_t>(d + r)] * src[lin + d * stride];
        dst[lin] = acc;
      }
}

// Full separable 3-D convolution of one frame with the tensor-product kernel
// tx (x) ty (x) tz, zero padding at the grid boundary.
inline void sep_conv3(const std::array<int64_t, 3>& dims, const std::vector<double>& tx, const std::vector<double>& ty,
                      const std::vector<double>& tz, const double* src, double* dst, std::vector<double>& scratch) {
  const size_t n = static_cast<size_t>(dims[0] * dims[1] * dims[2]);
  scratch.resize(n);
  sep_pass(dims, 0, tx, src, scratch.data());
  std::vector<double> tmp(n);
  sep_pass(dims, 1, ty, scratch.data(), tmp.data());
  sep_pass(dims, 2, tz, tmp.data(), dst);
}

inline std::vector<double> gaussian_taps(double sigma_mm, double step_mm) {
  const int64_t radius = static_cast<int64_t>(std::floor(3.0 * sigma_mm / step_mm + 1e-12));
  std::vector<double> taps(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int64_t d = -radius; d <= radius; ++d) {
    const double u = static_cast<double>(d) * step_mm;
    taps[static_cast<size_t>(d + radius)] = std::exp(-u * u / (2.0 * sigma_mm * sigma_mm));
    sum += taps[static_cast<size_t>(d + radius)];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

// Normalized masked convolution shared by the Gaussian and boxcar stages:
// out = conv(f*m) / conv(m) inside the mask; out-of-mask voxels copied.
inline VoxelGridSeries normalized_masked_filter(const VoxelGridSeries& g, const CorticalMask& mask, const std::vector<double>& tx,
                                                const std::vector<double>& ty, const std::vector<double>& tz) {
  VoxelGridSeries out = g;
  const int64_t nvox = g.voxels();
  std::vector<double> mask_f(static_cast<size_t>(nvox));
  for (int64_t i = 0; i < nvox; ++i) mask_f[static_cast<size_t>(i)] = mask.at(i) ? 1.0 : 0.0;
  std::vector<double> denom(static_cast<size_t>(nvox));
  std::vector<double> scratch;
  sep_conv3(g.dims, tx, ty, tz, mask_f.data(), denom.data(), scratch);

  std::vector<double> masked(static_cast<size_t>(nvox));
  std::vector<double> num(static_cast<size_t>(nvox));
  for (int64_t t = 0; t < g.frames; ++t) {
    const double* src = g.frame(t);
    for (int64_t i = 0; i < nvox; ++i) masked[static_cast<size_t>(i)] = mask.at(i) ? src[i] : 0.0;
    sep_conv3(g.dims, tx, ty, tz, masked.data(), num.data(), scratch);
    double* dst = out.frame(t);
    for (int64_t i = 0; i < nvox; ++i)
      if (mask.at(i)) dst[i] = num[static_cast<size_t>(i)] / denom[static_cast<size_t>(i)];
  }
  return out;
}

}  // namespace detail

inline double fwhm_to_sigma(double fwhm_mm) { return fwhm_mm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

// Mask-restricted separable Gaussian smoothing: kernel truncated at 3 sigma
// per axis, weights renormalized over in-mask in-grid voxels, out-of-mask
// voxels pass through unchanged.
inline VoxelGridSeries gaussian_smooth(const VoxelGridSeries& g, const CorticalMask& mask, double fwhm_mm) {
  require_same_dims(g, mask, "gaussian_smooth");
  if (fwhm_mm <= 0.0) throw DataError("gaussian_smooth: fwhm must be positive");
  const double sigma = fwhm_to_sigma(fwhm_mm);
  return detail::normalized_masked_filter(g, mask, detail::gaussian_taps(sigma, g.voxel_size.x), detail::gaussian_taps(sigma, g.voxel_size.y),
                                          detail::gaussian_taps(sigma, g.voxel_size.z));
}

// Regional average over the (2r+1)^3 neighborhood intersected with mask and
// grid bounds.
inline VoxelGridSeries boxcar(const VoxelGridSeries& g, const CorticalMask& mask, int64_t radius = 1) {
  require_same_dims(g, mask, "boxcar");
  if (radius < 0) throw DataError("boxcar: radius must be >= 0");
  std::vector<double> taps(static_cast<size_t>(2 * radius + 1), 1.0);
  return detail::normalized_masked_filter(g, mask, taps, taps, taps);
}

// Drift regressor set for the high-pass stage: constant, linear ramp, and
// every DCT-II basis vector with frequency <= cutoff. Columns are
// orthonormalized (modified Gram-Schmidt); near-dependent columns drop out.
inline std::vector<std::vector<double>> highpass_basis(int64_t frames, double tr, double cutoff_hz) {
  std::vector<std::vector<double>> cols;
  cols.emplace_back(static_cast<size_t>(frames), 1.0);
  std::vector<double> ramp(static_cast<size_t>(frames));
  for (int64_t t = 0; t < frames; ++t) ramp[static_cast<size_t>(t)] = static_cast<double>(t) - 0.5 * static_cast<double>(frames - 1);
  cols.push_back(std::move(ramp));
  const double period = 2.0 * static_cast<double>(frames) * tr;  // DCT-II k has frequency k / (2 T tr)
  for (int64_t k = 1; static_cast<double>(k) / period <= cutoff_hz + 1e-12; ++k) {
    std::vector<double> c(static_cast<size_t>(frames));
    for (int64_t t = 0; t < frames; ++t)
      c[static_cast<size_t>(t)] = std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(t) + 1.0) /
                                           (2.0 * static_cast<double>(frames)));
    cols.push_back(std::move(c));
  }
  // Orthonormalize.
  std::vector<std::vector<double>> q;
  for (auto& c : cols) {
    std::vector<double> v = c;
    for (const auto& u : q) {
      double dot = 0.0;
      for (size_t t = 0; t < v.size(); ++t) dot += u[t] * v[t];
      for (size_t t = 0; t < v.size(); ++t) v[t] -= dot * u[t];
    }
    // Second sweep for numerical cleanliness.
    for (const auto& u : q) {
      double dot = 0.0;
      for (size_t t = 0; t < v.size(); ++t) dot += u[t] * v[t];
      for (size_t t = 0; t < v.size(); ++t) v[t] -= dot * u[t];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-10 * std::sqrt(static_cast<double>(frames))) continue;
    for (auto& x : v) x /= norm;
    q.push_back(std::move(v));
  }
  return q;
}

// Least-squares removal of the drift regressors per in-mask voxel. The
// output's temporal mean is zero and the residual is orthogonal to every
// removed regressor.
inline VoxelGridSeries highpass(const VoxelGridSeries& g, const CorticalMask& mask, double cutoff_hz) {
  require_same_dims(g, mask, "highpass");
  const double nyquist = 1.0 / (2.0 * g.tr);
  if (cutoff_hz >= nyquist) throw DataError("highpass: cutoff must be below the Nyquist frequency " + std::to_string(nyquist));
  if (cutoff_hz < 0.0) throw DataError("highpass: cutoff must be non-negative");
  const auto basis = highpass_basis(g.frames, g.tr, cutoff_hz);
  if (g.frames < static_cast<int64_t>(basis.size()) + 2) throw DataError("highpass: series too short");

  VoxelGridSeries out = g;
  const int64_t nvox = g.voxels();
  std::vector<double> series(static_cast<size_t>(g.frames));
  for (int64_t i = 0; i < nvox; ++i) {
    if (!mask.at(i)) continue;
    for (int64_t t = 0; t < g.frames; ++t) series[static_cast<size_t>(t)] = g.at(t, i);
    for (const auto& u : basis) {
      double dot = 0.0;
      for (int64_t t = 0; t < g.frames; ++t) dot += u[static_cast<size_t>(t)] * series[static_cast<size_t>(t)];
      for (int64_t t = 0; t < g.frames; ++t) series[static_cast<size_t>(t)] -= dot * u[static_cast<size_t>(t)];
    }
    for (int64_t t = 0; t < g.frames; ++t) out.at(t, i) = series[static_cast<size_t>(t)];
  }
  return out;
}

struct DenoiseParams {
  double fwhm_mm = 6.0;
  double highpass_hz = 0.01;
  int64_t boxcar_radius = 1;
};

// The composite filtering chain, order fixed: spatial Gaussian smooth, then
// temporal high-pass, then boxcar regional average.
inline VoxelGridSeries denoise(const VoxelGridSeries& g, const CorticalMask& mask, const DenoiseParams& params = {}) {
  VoxelGridSeries stage = gaussian_smooth(g, mask, params.fwhm_mm);
  stage = highpass(stage, mask, params.highpass_hz);
  return boxcar(stage, mask, params.boxcar_radius);
}

// Per-streamline endpoint BOLD series, canonical order: sig_a belongs to the
// canonical-first (inferior) endpoint.
struct EndpointSignalPair {
  int64_t streamline_id = 0;
  std::vector<double> sig_a;
  std::vector<double> sig_b;
};

namespace detail {

inline int64_t endpoint_voxel_or_nearest(const VoxelGridSeries& g, const CorticalMask& mask, const Vec3& p, int64_t streamline_id) {
  const auto v = voxel_of(g, p);
  if (!in_bounds(v, g.dims)) throw DataError("map_endpoint_signals: endpoint outside grid bounds for streamline " + std::to_string(streamline_id));
  const int64_t lin = g.linear(v[0], v[1], v[2]);
  if (mask.at(lin)) return lin;
  // Nearest in-mask voxel center within a 2-voxel search cube; scan order
  // (dz, dy, dx) ascending keeps ties deterministic.
  double best = std::numeric_limits<double>::infinity();
  int64_t best_lin = -1;
  for (int64_t dz = -2; dz <= 2; ++dz)
    for (int64_t dy = -2; dy <= 2; ++dy)
      for (int64_t dx = -2; dx <= 2; ++dx) {
        const std::array<int64_t, 3> q{v[0] + dx, v[1] + dy, v[2] + dz};
        if (!in_bounds(q, g.dims)) continue;
        const int64_t ql = g.linear(q[0], q[1], q[2]);
        if (!mask.at(ql)) continue;
        const Vec3 center{g.origin.x + static_cast<double>(q[0]) * g.voxel_size.x,
                          g.origin.y + static_cast<double>(q[1]) * g.voxel_size.y,
                          g.origin.z + static_cast<double>(q[2]) * g.voxel_size.z};
        const double d = distance(center, p);
        if (d < best) {
          best = d;
          best_lin = ql;
        }
      }
  if (best_lin < 0) throw DataError("map_endpoint_signals: endpoint outside mask neighborhood for streamline " + std::to_string(streamline_id));
  return best_lin;
}

}  // namespace detail

inline std::vector<EndpointSignalPair> map_endpoint_signals(const VoxelGridSeries& g, const CorticalMask& mask,
                                                            const std::vector<Streamline>& bundle) {
  require_same_dims(g, mask, "map_endpoint_signals");
  std::vector<EndpointSignalPair> out;
  out.reserve(bundle.size());
  for (const auto& s : bundle) {
    const EndpointPair ep = endpoints(s);
    const Vec3 first{ep.coords[0], ep.coords[1], ep.coords[2]};
    const Vec3 second{ep.coords[3], ep.coords[4], ep.coords[5]};
    const int64_t la = detail::endpoint_voxel_or_nearest(g, mask, first, s.id);
    const int64_t lb = detail::endpoint_voxel_or_nearest(g, mask, second, s.id);
    EndpointSignalPair pair;
    pair.streamline_id = s.id;
    pair.sig_a.resize(static_cast<size_t>(g.frames));
    pair.sig_b.resize(static_cast<size_t>(g.frames));
    for (int64_t t = 0; t < g.frames; ++t) {
      pair.sig_a[static_cast<size_t>(t)] = g.at(t, la);
      pair.sig_b[static_cast<size_t>(t)] = g.at(t, lb);
    }
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace tractfusion
