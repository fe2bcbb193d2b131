#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tractfusion/common.hpp"
#include "tractfusion/dataset.hpp"
#include "tractfusion/nn.hpp"

namespace tractfusion {

enum class BackboneKind { tractcloud, pointnet };

inline std::string to_string(BackboneKind k) { return k == BackboneKind::tractcloud ? "tractcloud" : "pointnet"; }
inline BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "tractcloud") return BackboneKind::tractcloud;
  if (s == "pointnet") return BackboneKind::pointnet;
  throw UsageError("unknown backbone kind: " + s);
}

struct BackboneConfig {
  BackboneKind kind = BackboneKind::tractcloud;
  int64_t points = 25;
  int64_t neighbors = 20;
};

inline constexpr int64_t kGlobalFeatureDim = 1024;

// Pairwise feature tensor: entry (k, p) concatenates the repeated target
// point p with neighbor k's point p. Pure rearrangement, no parameters.
// targets is [B x 3P], neighbors [B*K x 3P]; output [B*K*P x 6].
inline void pairwise_features(const nn::Matrix& targets, const nn::Matrix& neighbors, int64_t points, int64_t k_neighbors, nn::Matrix& out) {
  const int64_t B = targets.rows;
  if (targets.cols != 3 * points || neighbors.rows != B * k_neighbors || neighbors.cols != 3 * points)
    throw NumericError("pairwise_features: shape mismatch");
  out.resize_overwrite(B * k_neighbors * points, 6);
  for (int64_t b = 0; b < B; ++b) {
    const double* t = targets.row(b);
    for (int64_t k = 0; k < k_neighbors; ++k) {
      const double* nb = neighbors.row(b * k_neighbors + k);
      double* dst = out.row((b * k_neighbors + k) * points);
      for (int64_t p = 0; p < points; ++p) {
        dst[6 * p + 0] = t[3 * p + 0];
        dst[6 * p + 1] = t[3 * p + 1];
        dst[6 * p + 2] = t[3 * p + 2];
        dst[6 * p + 3] = nb[3 * p + 0];
        dst[6 * p + 4] = nb[3 * p + 1];
        dst[6 * p + 5] = nb[3 * p + 2];
      }
    }
  }
}

inline void add_backbone_params(nn::ParamStore& store, const BackboneConfig& cfg, const Rng& rng) {
  auto add_affine = [&store, &rng](const std::string& name, int64_t in, int64_t out) {
    auto& w = store.add(name + ".w", {in, out});
    nn::init_affine(w, in, out, rng.stream(name));
    store.add(name + ".b", {out});
  };
  if (cfg.kind == BackboneKind::tractcloud) {
    add_affine("backbone.pair1", 6, 64);
    add_affine("backbone.pair2", 64, 128);
    add_affine("backbone.point1", 128, 256);
    add_affine("backbone.point2", 256, 1024);
  } else {
    add_affine("backbone.pn1", 3, 64);
    add_affine("backbone.pn2", 64, 128);
    add_affine("backbone.pn3", 128, 1024);
  }
  add_affine("backbone.cls1", 1024, 512);
  add_affine("backbone.cls2", 512, 256);
  add_affine("backbone.cls3", 256, kNumClasses);
}

// Forward activations for one chunk, kept for the matching backward pass.
struct BackboneActivations {
  nn::Matrix input;          // tractcloud: pairwise [B*K*P x 6]; pointnet: points [B*P x 3]
  nn::Matrix y1, y2;         // shared point MLP activations
  nn::Matrix local_context;  // [B x P*128] after the neighbor max
  nn::Matrix y3, y4;         // global encoder activations
  nn::Matrix global_feature; // [B x 1024]
  nn::Matrix c1, c2, logits;
  std::vector<int32_t> amax_neighbors, amax_points;
  int64_t batch = 0;
  // backward scratch
  nn::Matrix d_scratch0, d_scratch1, d_scratch2;
};

namespace detail {

inline nn::Matrix as_rows(const nn::Matrix& m, int64_t rows, int64_t cols) {
  if (m.rows * m.cols != rows * cols) throw NumericError("reshape: element count mismatch");
  nn::Matrix out;
  out.rows = rows;
  out.cols = cols;
  out.data = m.data;
  return out;
}

}  // namespace detail

// Chunk forward. targets [B x 3P]; neighbors [B*K x 3P] (ignored entirely in
// pointnet mode). Fills act.logits [B x 4] and act.global_feature [B x 1024].
inline void backbone_forward(const nn::ParamStore& store, const BackboneConfig& cfg, const nn::Matrix& targets, const nn::Matrix& neighbors,
                             BackboneActivations& act, ThreadPool* pool = nullptr) {
  const int64_t B = targets.rows;
  const int64_t P = cfg.points;
  act.batch = B;
  if (cfg.kind == BackboneKind::tractcloud) {
    pairwise_features(targets, neighbors, P, cfg.neighbors, act.input);
    nn::affine_forward(act.input, store.find("backbone.pair1.w"), store.find("backbone.pair1.b"), act.y1, pool);
    nn::relu_forward_inplace(act.y1);
    nn::affine_forward(act.y1, store.find("backbone.pair2.w"), store.find("backbone.pair2.b"), act.y2, pool);
    nn::relu_forward_inplace(act.y2);
    nn::maxpool_forward(act.y2, B, cfg.neighbors, P * 128, act.local_context, act.amax_neighbors);
    const nn::Matrix lc = detail::as_rows(act.local_context, B * P, 128);
    nn::affine_forward(lc, store.find("backbone.point1.w"), store.find("backbone.point1.b"), act.y3, pool);
    nn::relu_forward_inplace(act.y3);
    nn::affine_forward(act.y3, store.find("backbone.point2.w"), store.find("backbone.point2.b"), act.y4, pool);
    nn::relu_forward_inplace(act.y4);
    nn::maxpool_forward(act.y4, B, P, kGlobalFeatureDim, act.global_feature, act.amax_points);
  } else {
    act.input = detail::as_rows(targets, B * P, 3);
    nn::affine_forward(act.input, store.find("backbone.pn1.w"), store.find("backbone.pn1.b"), act.y1, pool);
    nn::relu_forward_inplace(act.y1);
    nn::affine_forward(act.y1, store.find("backbone.pn2.w"), store.find("backbone.pn2.b"), act.y2, pool);
    nn::relu_forward_inplace(act.y2);
    nn::affine_forward(act.y2, store.find("backbone.pn3.w"), store.find("backbone.pn3.b"), act.y4, pool);
    nn::relu_forward_inplace(act.y4);
    nn::maxpool_forward(act.y4, B, P, kGlobalFeatureDim, act.global_feature, act.amax_points);
  }
  nn::affine_forward(act.global_feature, store.find("backbone.cls1.w"), store.find("backbone.cls1.b"), act.c1, pool);
  nn::relu_forward_inplace(act.c1);
  nn::affine_forward(act.c1, store.find("backbone.cls2.w"), store.find("backbone.cls2.b"), act.c2, pool);
  nn::relu_forward_inplace(act.c2);
  nn::affine_forward(act.c2, store.find("backbone.cls3.w"), store.find("backbone.cls3.b"), act.logits, pool);
}

// Transposed weights for the backward pass; trainers rebuild once per
// optimizer step so chunks share them.
struct BackboneTransposes {
  std::vector<std::pair<std::string, nn::Matrix>> items;

  void rebuild(const nn::ParamStore& store, const BackboneConfig& cfg) {
    items.clear();
    const std::vector<std::string> names =
        cfg.kind == BackboneKind::tractcloud
            ? std::vector<std::string>{"backbone.cls3.w", "backbone.cls2.w", "backbone.cls1.w", "backbone.point2.w", "backbone.point1.w",
                                       "backbone.pair2.w"}
            : std::vector<std::string>{"backbone.cls3.w", "backbone.cls2.w", "backbone.cls1.w", "backbone.pn3.w", "backbone.pn2.w"};
    for (const auto& n : names) items.emplace_back(n, nn::transpose(nn::weight_matrix(store.find(n))));
  }
  const nn::Matrix& get(const std::string& name) const {
    for (const auto& [n, m] : items)
      if (n == name) return m;
    throw NumericError("transpose cache missing " + name);
  }
};

namespace detail {

// Fused backward through affine -> relu -> max-pool. The pooled gradient is
// dense but the scattered slot gradient is sparse (one mid slot per pooled
// element), so dW/db/dx are accumulated directly from the nonzeros instead
// of materializing the scattered tensor for dense GEMMs. Gradients are
// mathematically identical to the layer-by-layer path.
//
// Slot layout: rows of x/y are ((o * mid + m) * sub + s) and the pooled
// element (o, s * channels + c) took its value from slot m = amax.
// wt is the transposed weight [channels x in]; dwt_scratch is a reusable
// [channels x in] buffer folded into dw afterwards.
inline void pool_relu_affine_backward(int64_t outer, int64_t mid, int64_t sub, int64_t channels, const nn::Matrix& dpooled,
                                      const std::vector<int32_t>& amax, const nn::Matrix& y, const nn::Matrix& x, const nn::Matrix& wt,
                                      nn::Matrix& dwt_scratch, nn::ParamGroup& dw_g, nn::ParamGroup& db_g, nn::Matrix* dx) {
  const int64_t in_dim = x.cols;
  const int64_t inner = sub * channels;
  if (dpooled.rows * dpooled.cols != outer * inner || y.rows != outer * mid * sub || y.cols != channels || x.rows != y.rows)
    throw NumericError("pool_relu_affine_backward: shape mismatch");
  dwt_scratch.resize(channels, in_dim);  // zeroed
  if (dx) dx->resize(x.rows, in_dim);    // zeroed
  const double* dp = dpooled.data.data();
  for (int64_t o = 0; o < outer; ++o) {
    const int32_t* ao = amax.data() + o * inner;
    for (int64_t s = 0; s < sub; ++s) {
      for (int64_t c = 0; c < channels; ++c) {
        const double g = dp[o * inner + s * channels + c];
        if (g == 0.0) continue;
        const int64_t row = (o * mid + ao[s * channels + c]) * sub + s;
        if (y.row(row)[c] <= 0.0) continue;  // relu gate at the winning slot
        db_g.grad[static_cast<size_t>(c)] += g;
        const double* xr = x.row(row);
        double* dwtr = dwt_scratch.row(c);
        for (int64_t j = 0; j < in_dim; ++j) dwtr[j] = std::fma(g, xr[j], dwtr[j]);
        if (dx) {
          const double* wtr = wt.row(c);
          double* dxr = dx->row(row);
          for (int64_t j = 0; j < in_dim; ++j) dxr[j] = std::fma(g, wtr[j], dxr[j]);
        }
      }
    }
  }
  // Fold the transposed accumulator into the [in x channels] gradient.
  for (int64_t c = 0; c < channels; ++c) {
    const double* dwtr = dwt_scratch.row(c);
    for (int64_t j = 0; j < in_dim; ++j) dw_g.grad[static_cast<size_t>(j * channels + c)] += dwtr[j];
  }
}

}  // namespace detail

// Accumulates parameter gradients for the recorded forward pass. targets is
// data, so no input gradient is produced. `wt_cache` may be null; a local
// set is built then.
inline void backbone_backward(nn::ParamStore& store, const BackboneConfig& cfg, const nn::Matrix& dlogits, BackboneActivations& act,
                              ThreadPool* pool = nullptr, const BackboneTransposes* wt_cache = nullptr) {
  const int64_t B = act.batch;
  const int64_t P = cfg.points;
  BackboneTransposes local;
  if (!wt_cache) {
    local.rebuild(store, cfg);
    wt_cache = &local;
  }
  auto wt = [wt_cache](const std::string& name) -> const nn::Matrix& { return wt_cache->get(name); };

  nn::Matrix& d2 = act.d_scratch0;
  nn::Matrix& d1 = act.d_scratch1;
  nn::Matrix& d0 = act.d_scratch2;
  nn::affine_backward(act.c2, store.find("backbone.cls3.w"), wt("backbone.cls3.w"), dlogits, store.find("backbone.cls3.w"),
                      store.find("backbone.cls3.b"), &d2, pool);
  nn::relu_backward_inplace(act.c2, d2);
  nn::affine_backward(act.c1, store.find("backbone.cls2.w"), wt("backbone.cls2.w"), d2, store.find("backbone.cls2.w"),
                      store.find("backbone.cls2.b"), &d1, pool);
  nn::relu_backward_inplace(act.c1, d1);
  nn::affine_backward(act.global_feature, store.find("backbone.cls1.w"), wt("backbone.cls1.w"), d1, store.find("backbone.cls1.w"),
                      store.find("backbone.cls1.b"), &d0, pool);

  if (cfg.kind == BackboneKind::tractcloud) {
    // point2 through the point max-pool: fused sparse path.
    nn::Matrix& dy3 = act.d_scratch0;
    detail::pool_relu_affine_backward(B, P, 1, kGlobalFeatureDim, d0, act.amax_points, act.y4, act.y3, wt("backbone.point2.w"),
                                      act.d_scratch1, store.find("backbone.point2.w"), store.find("backbone.point2.b"), &dy3);
    nn::relu_backward_inplace(act.y3, dy3);
    const nn::Matrix lc = detail::as_rows(act.local_context, B * P, 128);
    nn::Matrix& dlc = act.d_scratch2;
    nn::affine_backward(lc, store.find("backbone.point1.w"), wt("backbone.point1.w"), dy3, store.find("backbone.point1.w"),
                        store.find("backbone.point1.b"), &dlc, pool);
    // pair2 through the neighbor max-pool: fused sparse path.
    const nn::Matrix dlc_flat = detail::as_rows(dlc, B, P * 128);
    nn::Matrix& dy1 = act.d_scratch0;
    detail::pool_relu_affine_backward(B, cfg.neighbors, P, 128, dlc_flat, act.amax_neighbors, act.y2, act.y1, wt("backbone.pair2.w"),
                                      act.d_scratch1, store.find("backbone.pair2.w"), store.find("backbone.pair2.b"), &dy1);
    nn::relu_backward_inplace(act.y1, dy1);
    nn::affine_backward(act.input, store.find("backbone.pair1.w"), nn::Matrix(), dy1, store.find("backbone.pair1.w"),
                        store.find("backbone.pair1.b"), nullptr, pool);
  } else {
    nn::Matrix& dy2 = act.d_scratch0;
    detail::pool_relu_affine_backward(B, P, 1, kGlobalFeatureDim, d0, act.amax_points, act.y4, act.y2, wt("backbone.pn3.w"),
                                      act.d_scratch1, store.find("backbone.pn3.w"), store.find("backbone.pn3.b"), &dy2);
    nn::relu_backward_inplace(act.y2, dy2);
    nn::Matrix& dy1 = act.d_scratch2;
    nn::affine_backward(act.y1, store.find("backbone.pn2.w"), wt("backbone.pn2.w"), dy2, store.find("backbone.pn2.w"),
                        store.find("backbone.pn2.b"), &dy1, pool);
    nn::relu_backward_inplace(act.y1, dy1);
    nn::affine_backward(act.input, store.find("backbone.pn1.w"), nn::Matrix(), dy1, store.find("backbone.pn1.w"),
                        store.find("backbone.pn1.b"), nullptr, pool);
  }
}

}  // namespace tractfusion
