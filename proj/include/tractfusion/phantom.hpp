#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "tractfusion/common.hpp"
#include "tractfusion/streamline.hpp"
#include "tractfusion/voxel_grid.hpp"

namespace tractfusion {

// Synthetic somatotopic CST-like bundle paired with a voxel-grid BOLD series.
// geometric_overlap slides the trunk and hand cortical patches toward
// coincidence: 0 = fully separated fans, 1 = identical patch region, where
// the two classes interleave by voxel parity so each endpoint still sits in
// an own-class voxel while the coordinate distributions coincide at region
// scale.
struct PhantomSpec {
  std::array<int64_t, 4> n_per_class{500, 500, 500, 500};  // leg, trunk, face, hand
  std::array<int64_t, 3> grid_dims{24, 24, 24};
  double voxel_size_mm = 2.0;
  double tr_s = 0.72;
  int64_t frames = 64;
  double geometric_overlap = 0.0;
  double activation_snr = 10.0;   // noise sd = 1 / snr; +inf means clean
  double drift_amplitude = 1.0;
  uint64_t rng_seed = 42;
  int64_t curve_points = 32;  // raw samples per generated curve

  void validate() const {
    for (int64_t n : n_per_class)
      if (n <= 0) throw DataError("phantom: all class counts must be positive");
    if (frames < 32) throw DataError("phantom: frames must be >= 32");
    if (geometric_overlap < 0.0 || geometric_overlap > 1.0) throw DataError("phantom: geometric_overlap must lie in [0,1]");
    if (activation_snr <= 0.0) throw DataError("phantom: activation_snr must be positive");
    if (voxel_size_mm <= 0.0 || tr_s <= 0.0) throw DataError("phantom: voxel size and tr must be positive");
    if (curve_points < 4) throw DataError("phantom: curve_points must be >= 4");
  }
};

struct PhantomData {
  std::vector<Streamline> bundle;  // raw smooth curves, labeled
  VoxelGridSeries grid;
  CorticalMask mask;
  std::array<double, 4> class_frequencies_hz{};
};

namespace detail {

struct PatchBox {
  std::array<int64_t, 3> lo{};
  std::array<int64_t, 3> hi{};  // inclusive

  bool contains(int64_t x, int64_t y, int64_t z) const {
    return x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1] && z >= lo[2] && z <= hi[2];
  }
  bool disjoint(const PatchBox& o) const {
    for (int a = 0; a < 3; ++a)
      if (hi[a] < o.lo[a] || o.hi[a] < lo[a]) return true;
    return false;
  }
};

inline PatchBox patch_around(double cx_vox, int64_t cy_vox, int64_t z0, int64_t z1, int64_t rx, int64_t ry) {
  const int64_t cx = static_cast<int64_t>(std::llround(cx_vox));
  return PatchBox{{cx - rx, cy_vox - ry, z0}, {cx + rx, cy_vox + ry, z1}};
}

inline Vec3 bezier3(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
  const double u = 1.0 - t;
  return p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t);
}

}  // namespace detail

inline PhantomData generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const int64_t nx = spec.grid_dims[0], ny = spec.grid_dims[1], nz = spec.grid_dims[2];
  const double h = spec.voxel_size_mm;

  // Patch geometry: four cortical boxes in a superior slab, a common
  // brainstem box in an inferior slab. Class order across x: leg, trunk,
  // hand, face, so the trunk/hand pair can merge without touching the rest.
  // Patches are tall in y to leave room for the trunk/hand stripe structure;
  // leg and face are narrower in x, keeping the fans clearly separated.
  const int64_t rx = std::max<int64_t>(1, nx / 12), ry = std::max<int64_t>(2, ny / 4);
  const int64_t rx_pure = std::max<int64_t>(1, nx / 24);
  const int64_t ry_stem = std::max<int64_t>(1, ny / 12);
  const int64_t pz0 = nz - 4, pz1 = nz - 3;
  const int64_t cy = ny / 2;
  if (nz < 10 || pz0 <= 3) throw DataError("phantom: grid too small in z for patch and brainstem slabs");
  if (cy - ry < 0 || cy + ry >= ny) throw DataError("phantom: grid too small in y for the patch slab");

  // Centers spread evenly over the span that keeps every box in bounds.
  const double margin = static_cast<double>(rx + 1);
  const double span = static_cast<double>(nx - 1) - 2.0 * margin;
  const double cx_leg = margin;
  const double cx_trunk0 = margin + span / 3.0;
  const double cx_hand0 = margin + 2.0 * span / 3.0;
  const double cx_face = margin + span;
  const double cx_mid = 0.5 * (cx_trunk0 + cx_hand0);
  const double ov = spec.geometric_overlap;
  const double cx_trunk = cx_trunk0 + ov * (cx_mid - cx_trunk0);
  const double cx_hand = cx_hand0 + ov * (cx_mid - cx_hand0);

  // Class index order is {leg, trunk, face, hand}; geometry uses the x order
  // above, so store per-class boxes by class index.
  std::array<detail::PatchBox, 4> box;
  box[0] = detail::patch_around(cx_leg, cy, pz0, pz1, rx_pure, ry);
  box[1] = detail::patch_around(cx_trunk, cy, pz0, pz1, rx, ry);
  box[2] = detail::patch_around(cx_face, cy, pz0, pz1, rx_pure, ry);
  box[3] = detail::patch_around(cx_hand, cy, pz0, pz1, rx, ry);

  // Feasibility: the grid must be able to host four disjoint patches at
  // overlap 0, and the requested boxes must stay in bounds.
  std::array<detail::PatchBox, 4> box_ov0;
  box_ov0[0] = box[0];
  box_ov0[1] = detail::patch_around(cx_trunk0, cy, pz0, pz1, rx, ry);
  box_ov0[2] = box[2];
  box_ov0[3] = detail::patch_around(cx_hand0, cy, pz0, pz1, rx, ry);
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b)
      if (!box_ov0[static_cast<size_t>(a)].disjoint(box_ov0[static_cast<size_t>(b)]))
        throw DataError("phantom: grid too small to host four disjoint patches at overlap 0");
  for (const auto& bx : box)
    if (bx.lo[0] < 0 || bx.lo[1] < 0 || bx.lo[2] < 0 || bx.hi[0] >= nx || bx.hi[1] >= ny || bx.hi[2] >= nz)
      throw DataError("phantom: patch box out of grid bounds");

  // Voxel -> class assignment. Exclusive voxels keep their box's class; the
  // trunk/hand intersection interleaves in 2-D blocks: palindromic
  // alternating y-stripes XORed with a half split along x. Blocks of
  // kStripeWidth voxels keep each class's tone from being averaged away by
  // the 6 mm smooth + boxcar; the mirror symmetry keeps the two classes'
  // coordinate means together within a fraction of a voxel; and the XOR
  // leaves no threshold-like geometric rule for the backbone to pick up.
  constexpr int64_t kStripeWidth = 3;
  auto stripe_class = [](int64_t offset, int64_t height) {
    const int64_t mirrored = std::min(offset, height - 1 - offset);
    return (mirrored / kStripeWidth) % 2;
  };
  const int64_t nvox = nx * ny * nz;
  std::vector<int8_t> voxel_class(static_cast<size_t>(nvox), -1);
  std::array<std::vector<std::array<int64_t, 3>>, 4> class_voxels;
  const int64_t ix_lo = std::max(box[1].lo[0], box[3].lo[0]);
  const int64_t ix_hi = std::min(box[1].hi[0], box[3].hi[0]);
  for (int64_t z = 0; z < nz; ++z)
    for (int64_t y = 0; y < ny; ++y)
      for (int64_t x = 0; x < nx; ++x) {
        int cls = -1;
        if (box[0].contains(x, y, z)) cls = 0;
        else if (box[2].contains(x, y, z)) cls = 2;
        else {
          const bool in_t = box[1].contains(x, y, z);
          const bool in_h = box[3].contains(x, y, z);
          if (in_t && in_h) {
            const int64_t y_stripe = stripe_class(y - (cy - ry), 2 * ry + 1);
            const int64_t x_half = (x - ix_lo) < (ix_hi - ix_lo + 2) / 2 ? 0 : 1;
            cls = (y_stripe + x_half) % 2 == 0 ? 1 : 3;
          } else if (in_t) {
            cls = 1;
          } else if (in_h) {
            cls = 3;
          }
        }
        if (cls >= 0) {
          voxel_class[static_cast<size_t>(x + nx * (y + ny * z))] = static_cast<int8_t>(cls);
          class_voxels[static_cast<size_t>(cls)].push_back({x, y, z});
        }
      }
  for (int c = 0; c < 4; ++c)
    if (class_voxels[static_cast<size_t>(c)].empty())
      throw DataError(std::string("phantom: no voxels available for class ") + kClassNames[static_cast<size_t>(c)]);

  // Brainstem box: common inferior region.
  const detail::PatchBox stem{{nx / 2 - rx, cy - ry_stem, 2}, {nx / 2 + rx, cy + ry_stem, 3}};

  PhantomData out;
  out.grid.dims = spec.grid_dims;
  out.grid.voxel_size = {h, h, h};
  out.grid.origin = {0.0, 0.0, 0.0};
  out.grid.tr = spec.tr_s;
  out.grid.frames = spec.frames;
  out.grid.data.assign(static_cast<size_t>(spec.frames * nvox), 0.0);

  Rng root(spec.rng_seed);

  // Streamlines: cubic Bezier fans from the brainstem box to an own-class
  // cortical voxel, jittered inside the voxel.
  Rng geom = root.stream("phantom.geometry");
  int64_t next_id = 0;
  for (int c = 0; c < 4; ++c) {
    const auto& voxels = class_voxels[static_cast<size_t>(c)];
    for (int64_t i = 0; i < spec.n_per_class[static_cast<size_t>(c)]; ++i) {
      // Voxel v spans [v*h, (v+1)*h) under the floor mapping convention, so
      // a [0,1) jitter keeps the endpoint inside its own class voxel.
      const auto& vox = voxels[static_cast<size_t>(geom.uniform_int(voxels.size()))];
      const Vec3 cortical{(static_cast<double>(vox[0]) + geom.uniform01()) * h,
                          (static_cast<double>(vox[1]) + geom.uniform01()) * h,
                          (static_cast<double>(vox[2]) + geom.uniform01()) * h};
      const Vec3 stem_pt{geom.uniform(static_cast<double>(stem.lo[0]), static_cast<double>(stem.hi[0]) + 1.0) * h,
                         geom.uniform(static_cast<double>(stem.lo[1]), static_cast<double>(stem.hi[1]) + 1.0) * h,
                         geom.uniform(static_cast<double>(stem.lo[2]), static_cast<double>(stem.hi[2]) + 1.0) * h};
      // The lower control point bows laterally toward the cortical target, so
      // trajectory shape separates targets along the whole curve (a function
      // of the target position only; coincident targets bow identically).
      const double dz = cortical.z - stem_pt.z;
      const double bow_x = 0.35 * (cortical.x - static_cast<double>(nx / 2) * h);
      const double bow_y = 0.35 * (cortical.y - static_cast<double>(cy) * h);
      const Vec3 c1 = stem_pt + Vec3{bow_x + geom.uniform(-0.5, 0.5) * h, bow_y + geom.uniform(-0.5, 0.5) * h, 0.35 * dz};
      const Vec3 c2 = cortical + Vec3{geom.uniform(-0.5, 0.5) * h, geom.uniform(-0.5, 0.5) * h, -0.3 * dz};
      Streamline s;
      s.id = next_id++;
      s.label = c;
      s.points.resize(static_cast<size_t>(spec.curve_points));
      for (int64_t k = 0; k < spec.curve_points; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(spec.curve_points - 1);
        s.points[static_cast<size_t>(k)] = detail::bezier3(stem_pt, c1, c2, cortical, t);
      }
      // Endpoints exact: t=0 hits the brainstem point, t=1 the cortical one.
      s.points.front() = stem_pt;
      s.points.back() = cortical;
      out.bundle.push_back(std::move(s));
    }
  }

  // Activation frequencies: spread between the high-pass cutoff and Nyquist.
  const double nyquist = 1.0 / (2.0 * spec.tr_s);
  for (int c = 0; c < 4; ++c)
    out.class_frequencies_hz[static_cast<size_t>(c)] = nyquist * (0.15 + 0.15 * static_cast<double>(c));

  // Signals: every voxel carries noise + linear drift; patch voxels add the
  // class sinusoid at unit amplitude with a class-common phase.
  const double noise_sd = std::isinf(spec.activation_snr) ? 0.0 : 1.0 / spec.activation_snr;
  Rng noise = root.stream("phantom.noise");
  Rng phase_rng = root.stream("phantom.phase");
  std::array<double, 4> phase{};
  for (auto& p : phase) p = phase_rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int64_t lin = 0; lin < nvox; ++lin) {
    const int cls = voxel_class[static_cast<size_t>(lin)];
    for (int64_t t = 0; t < spec.frames; ++t) {
      double v = spec.drift_amplitude * (2.0 * static_cast<double>(t) / static_cast<double>(spec.frames - 1) - 1.0);
      if (noise_sd > 0.0) v += noise_sd * noise.normal();
      if (cls >= 0)
        v += std::sin(2.0 * std::numbers::pi * out.class_frequencies_hz[static_cast<size_t>(cls)] * (static_cast<double>(t) * spec.tr_s) +
                      phase[static_cast<size_t>(cls)]);
      out.grid.at(t, lin) = v;
    }
  }
  out.grid.validate();

  out.mask = build_mask(out.bundle, out.grid, 1);
  return out;
}

}  // namespace tractfusion
