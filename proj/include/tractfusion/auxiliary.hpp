#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tractfusion/common.hpp"
#include "tractfusion/dataset.hpp"
#include "tractfusion/nn.hpp"

namespace tractfusion {

// Table-1 auxiliary pathway variants.
enum class AuxVariant { full, endpoint_only, fmri_only, none };

inline std::string to_string(AuxVariant v) {
  switch (v) {
    case AuxVariant::full: return "full";
    case AuxVariant::endpoint_only: return "endpoint_only";
    case AuxVariant::fmri_only: return "fmri_only";
    case AuxVariant::none: return "none";
  }
  return "none";
}
inline AuxVariant aux_variant_from_string(const std::string& s) {
  if (s == "full") return AuxVariant::full;
  if (s == "endpoint_only") return AuxVariant::endpoint_only;
  if (s == "fmri_only") return AuxVariant::fmri_only;
  if (s == "none") return AuxVariant::none;
  throw UsageError("unknown auxiliary variant: " + s);
}

struct AuxConfig {
  AuxVariant variant = AuxVariant::full;
  int64_t frames = 64;
  // "Separate 1D-CNNs with shared weights" read as tied parameters; the
  // untied alternative is exposed but non-default.
  bool untied_encoders = false;

  nn::Conv1dSpec conv1() const { return {1, 32, 7, 2, 0}; }
  nn::Conv1dSpec conv2() const { return {32, 64, 5, 2, 0}; }

  bool uses_geometry() const { return variant == AuxVariant::full || variant == AuxVariant::endpoint_only; }
  bool uses_signals() const { return variant == AuxVariant::full || variant == AuxVariant::fmri_only; }
  int64_t feature_dim() const {
    switch (variant) {
      case AuxVariant::full: return 128;
      case AuxVariant::endpoint_only: return 128;
      case AuxVariant::fmri_only: return 256;
      case AuxVariant::none: return 0;
    }
    return 0;
  }
};

// with_head=false builds the pathway without its 4-class logit head (the
// concat strategy feeds the feature into a fused head instead).
inline void add_aux_params_impl(nn::ParamStore& store, const AuxConfig& cfg, const Rng& rng, bool with_head) {
  if (cfg.variant == AuxVariant::none) return;
  if (cfg.uses_signals() && cfg.frames < 32) throw DataError("auxiliary: series length must be >= 32");
  auto add_affine = [&store, &rng](const std::string& name, int64_t in, int64_t out) {
    auto& w = store.add(name + ".w", {in, out});
    nn::init_affine(w, in, out, rng.stream(name));
    store.add(name + ".b", {out});
  };
  auto add_conv = [&store, &rng](const std::string& name, const nn::Conv1dSpec& spec) {
    auto& w = store.add(name + ".w", {spec.out_ch, spec.in_ch, spec.kernel});
    nn::init_affine(w, spec.in_ch * spec.kernel, spec.out_ch, rng.stream(name));
    store.add(name + ".b", {spec.out_ch});
  };
  if (cfg.uses_geometry()) {
    add_affine("aux.geom1", 6, 64);
    add_affine("aux.geom2", 64, 128);
  }
  if (cfg.uses_signals()) {
    add_conv("aux.conv1", cfg.conv1());
    add_conv("aux.conv2", cfg.conv2());
    add_affine("aux.proj", 64, 128);
    if (cfg.untied_encoders) {
      add_conv("aux.conv1b", cfg.conv1());
      add_conv("aux.conv2b", cfg.conv2());
      add_affine("aux.projb", 64, 128);
    }
  }
  if (cfg.variant == AuxVariant::full) {
    add_affine("aux.integ1", 384, 256);
    add_affine("aux.integ2", 256, 128);
  }
  if (with_head) add_affine("aux.head", cfg.feature_dim(), kNumClasses);
}

inline void add_aux_params(nn::ParamStore& store, const AuxConfig& cfg, const Rng& rng) { add_aux_params_impl(store, cfg, rng, true); }

// Per-series functional encoder activations.
struct FuncEncoderActs {
  nn::Matrix z1, z2;     // conv outputs after relu
  nn::Matrix pooled;     // [B x 64] after global temporal max
  nn::Matrix projected;  // [B x 128]
  std::vector<int32_t> amax;
};

struct AuxActivations {
  nn::Matrix g1, g2;        // geometric encoder
  FuncEncoderActs fa, fb;   // one per endpoint
  nn::Matrix func_concat;   // [B x 256]
  nn::Matrix integ_in;      // [B x 384]
  nn::Matrix i1, feature;   // integrator activations; feature is the head input
  nn::Matrix logits;
  int64_t batch = 0;
  nn::Matrix d0, d1, d2, d3;  // backward scratch
};

namespace detail {

inline void func_encode_forward(const nn::ParamStore& store, const AuxConfig& cfg, const std::string& p1, const std::string& p2,
                                const std::string& proj, const nn::Matrix& sig, FuncEncoderActs& acts) {
  const int64_t T = cfg.frames;
  if (sig.cols != T) throw NumericError("auxiliary: signal length " + std::to_string(sig.cols) + " != configured " + std::to_string(T));
  if (T < 32) throw DataError("auxiliary: series length must be >= 32");
  nn::conv1d_forward(sig, T, cfg.conv1(), store.find(p1 + ".w"), store.find(p1 + ".b"), acts.z1);
  nn::relu_forward_inplace(acts.z1);
  const int64_t l1 = cfg.conv1().out_len(T);
  nn::conv1d_forward(acts.z1, l1, cfg.conv2(), store.find(p2 + ".w"), store.find(p2 + ".b"), acts.z2);
  nn::relu_forward_inplace(acts.z2);
  const int64_t l2 = cfg.conv2().out_len(l1);
  nn::Matrix pooled_col;
  nn::maxpool_forward(acts.z2, sig.rows * 64, l2, 1, pooled_col, acts.amax);
  acts.pooled.rows = sig.rows;
  acts.pooled.cols = 64;
  acts.pooled.data = std::move(pooled_col.data);
  nn::affine_forward(acts.pooled, store.find(proj + ".w"), store.find(proj + ".b"), acts.projected);
}

inline void func_encode_backward(nn::ParamStore& store, const AuxConfig& cfg, const std::string& p1, const std::string& p2,
                                 const std::string& proj, const nn::Matrix& sig, FuncEncoderActs& acts, const nn::Matrix& dproj) {
  const int64_t T = cfg.frames;
  const int64_t l1 = cfg.conv1().out_len(T);
  const int64_t l2 = cfg.conv2().out_len(l1);
  nn::Matrix dpooled;
  const nn::Matrix wt = nn::transpose(nn::weight_matrix(store.find(proj + ".w")));
  nn::affine_backward(acts.pooled, store.find(proj + ".w"), wt, dproj, store.find(proj + ".w"), store.find(proj + ".b"), &dpooled);
  nn::Matrix dpooled_col;
  dpooled_col.rows = sig.rows * 64;
  dpooled_col.cols = 1;
  dpooled_col.data = std::move(dpooled.data);
  nn::Matrix dz2;
  nn::maxpool_backward(dpooled_col, sig.rows * 64, l2, 1, acts.amax, dz2);
  dz2.rows = sig.rows;
  dz2.cols = 64 * l2;
  nn::relu_backward_inplace(acts.z2, dz2);
  nn::Matrix dz1;
  nn::conv1d_backward(acts.z1, l1, cfg.conv2(), store.find(p2 + ".w"), dz2, store.find(p2 + ".w"), store.find(p2 + ".b"), &dz1);
  nn::relu_backward_inplace(acts.z1, dz1);
  nn::conv1d_backward(sig, T, cfg.conv1(), store.find(p1 + ".w"), dz1, store.find(p1 + ".w"), store.find(p1 + ".b"), nullptr);
}

inline void hconcat(const nn::Matrix& a, const nn::Matrix& b, nn::Matrix& out) {
  if (a.rows != b.rows) throw NumericError("hconcat: row mismatch");
  out.resize_overwrite(a.rows, a.cols + b.cols);
  for (int64_t i = 0; i < a.rows; ++i) {
    std::copy(a.row(i), a.row(i) + a.cols, out.row(i));
    std::copy(b.row(i), b.row(i) + b.cols, out.row(i) + a.cols);
  }
}

}  // namespace detail

// coords [B x 6]; sig_a / sig_b [B x T], canonical endpoint order, z-scored.
// Fills act.feature (head input); the head itself is applied by
// auxiliary_forward.
inline void auxiliary_forward_feature_only(const nn::ParamStore& store, const AuxConfig& cfg, const nn::Matrix& coords,
                                           const nn::Matrix& sig_a, const nn::Matrix& sig_b, AuxActivations& act) {
  if (cfg.variant == AuxVariant::none) throw UsageError("auxiliary_forward: variant none has no network");
  act.batch = cfg.uses_geometry() ? coords.rows : sig_a.rows;
  if (cfg.uses_geometry()) {
    if (coords.cols != 6) throw NumericError("auxiliary: endpoint coords must be 6-D");
    nn::affine_forward(coords, store.find("aux.geom1.w"), store.find("aux.geom1.b"), act.g1);
    nn::relu_forward_inplace(act.g1);
    nn::affine_forward(act.g1, store.find("aux.geom2.w"), store.find("aux.geom2.b"), act.g2);
    nn::relu_forward_inplace(act.g2);
  }
  if (cfg.uses_signals()) {
    const std::string p1b = cfg.untied_encoders ? "aux.conv1b" : "aux.conv1";
    const std::string p2b = cfg.untied_encoders ? "aux.conv2b" : "aux.conv2";
    const std::string projb = cfg.untied_encoders ? "aux.projb" : "aux.proj";
    detail::func_encode_forward(store, cfg, "aux.conv1", "aux.conv2", "aux.proj", sig_a, act.fa);
    detail::func_encode_forward(store, cfg, p1b, p2b, projb, sig_b, act.fb);
    detail::hconcat(act.fa.projected, act.fb.projected, act.func_concat);
  }
  switch (cfg.variant) {
    case AuxVariant::full: {
      detail::hconcat(act.g2, act.func_concat, act.integ_in);
      nn::affine_forward(act.integ_in, store.find("aux.integ1.w"), store.find("aux.integ1.b"), act.i1);
      nn::relu_forward_inplace(act.i1);
      nn::affine_forward(act.i1, store.find("aux.integ2.w"), store.find("aux.integ2.b"), act.feature);
      nn::relu_forward_inplace(act.feature);
      break;
    }
    case AuxVariant::endpoint_only:
      act.feature = act.g2;
      break;
    case AuxVariant::fmri_only:
      act.feature = act.func_concat;
      break;
    case AuxVariant::none:
      break;
  }
}

inline void auxiliary_forward(const nn::ParamStore& store, const AuxConfig& cfg, const nn::Matrix& coords, const nn::Matrix& sig_a,
                              const nn::Matrix& sig_b, AuxActivations& act) {
  auxiliary_forward_feature_only(store, cfg, coords, sig_a, sig_b, act);
  nn::affine_forward(act.feature, store.find("aux.head.w"), store.find("aux.head.b"), act.logits);
}

// dlogits [B x 4] (or, via auxiliary_backward_from_feature, a gradient on
// the head input). Accumulates into the aux.* gradients.
inline void auxiliary_backward_from_feature(nn::ParamStore& store, const AuxConfig& cfg, const nn::Matrix& coords, const nn::Matrix& sig_a,
                                            const nn::Matrix& sig_b, AuxActivations& act, const nn::Matrix& dfeature) {
  nn::Matrix dfeat = dfeature;  // local copy; relu masks mutate it
  if (cfg.variant == AuxVariant::full) {
    nn::relu_backward_inplace(act.feature, dfeat);
    const nn::Matrix wt2 = nn::transpose(nn::weight_matrix(store.find("aux.integ2.w")));
    nn::affine_backward(act.i1, store.find("aux.integ2.w"), wt2, dfeat, store.find("aux.integ2.w"), store.find("aux.integ2.b"), &act.d1);
    nn::relu_backward_inplace(act.i1, act.d1);
    const nn::Matrix wt1 = nn::transpose(nn::weight_matrix(store.find("aux.integ1.w")));
    nn::affine_backward(act.integ_in, store.find("aux.integ1.w"), wt1, act.d1, store.find("aux.integ1.w"), store.find("aux.integ1.b"),
                        &act.d2, nullptr);
    // Split the concatenated gradient back into geometry and function parts.
    nn::Matrix dg2(act.batch, 128), dfunc(act.batch, 256);
    for (int64_t i = 0; i < act.batch; ++i) {
      std::copy(act.d2.row(i), act.d2.row(i) + 128, dg2.row(i));
      std::copy(act.d2.row(i) + 128, act.d2.row(i) + 384, dfunc.row(i));
    }
    act.d2 = std::move(dg2);
    act.d3 = std::move(dfunc);
  } else if (cfg.variant == AuxVariant::endpoint_only) {
    act.d2 = dfeat;
  } else {
    act.d3 = dfeat;
  }

  if (cfg.uses_geometry()) {
    nn::relu_backward_inplace(act.g2, act.d2);
    const nn::Matrix wtg2 = nn::transpose(nn::weight_matrix(store.find("aux.geom2.w")));
    nn::affine_backward(act.g1, store.find("aux.geom2.w"), wtg2, act.d2, store.find("aux.geom2.w"), store.find("aux.geom2.b"), &act.d0);
    nn::relu_backward_inplace(act.g1, act.d0);
    nn::affine_backward(coords, store.find("aux.geom1.w"), nn::Matrix(), act.d0, store.find("aux.geom1.w"), store.find("aux.geom1.b"),
                        nullptr);
  }
  if (cfg.uses_signals()) {
    nn::Matrix da(act.batch, 128), db(act.batch, 128);
    for (int64_t i = 0; i < act.batch; ++i) {
      std::copy(act.d3.row(i), act.d3.row(i) + 128, da.row(i));
      std::copy(act.d3.row(i) + 128, act.d3.row(i) + 256, db.row(i));
    }
    const std::string p1b = cfg.untied_encoders ? "aux.conv1b" : "aux.conv1";
    const std::string p2b = cfg.untied_encoders ? "aux.conv2b" : "aux.conv2";
    const std::string projb = cfg.untied_encoders ? "aux.projb" : "aux.proj";
    detail::func_encode_backward(store, cfg, "aux.conv1", "aux.conv2", "aux.proj", sig_a, act.fa, da);
    detail::func_encode_backward(store, cfg, p1b, p2b, projb, sig_b, act.fb, db);
  }
}

inline void auxiliary_backward(nn::ParamStore& store, const AuxConfig& cfg, const nn::Matrix& coords, const nn::Matrix& sig_a,
                               const nn::Matrix& sig_b, AuxActivations& act, const nn::Matrix& dlogits) {
  nn::Matrix dfeature;
  const nn::Matrix wt = nn::transpose(nn::weight_matrix(store.find("aux.head.w")));
  nn::affine_backward(act.feature, store.find("aux.head.w"), wt, dlogits, store.find("aux.head.w"), store.find("aux.head.b"), &dfeature);
  auxiliary_backward_from_feature(store, cfg, coords, sig_a, sig_b, act, dfeature);
}

}  // namespace tractfusion
