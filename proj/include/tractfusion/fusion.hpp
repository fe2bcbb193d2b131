#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "tractfusion/auxiliary.hpp"
#include "tractfusion/backbone.hpp"
#include "tractfusion/common.hpp"
#include "tractfusion/dataset.hpp"
#include "tractfusion/nn.hpp"

namespace tractfusion {

// ---------------------------------------------------------------------------
// Class weights: w_c = N / (c * n_c), c = 4.
// ---------------------------------------------------------------------------

struct ClassWeights {
  int64_t total = 0;
  std::array<int64_t, 4> counts{};
  std::array<double, 4> weights{};
};

inline ClassWeights class_weights(const std::vector<int>& labels) {
  ClassWeights cw;
  for (int l : labels) {
    if (l < 0 || l >= kNumClasses) throw DataError("class_weights: label out of range");
    ++cw.counts[static_cast<size_t>(l)];
  }
  cw.total = static_cast<int64_t>(labels.size());
  for (int c = 0; c < kNumClasses; ++c) {
    if (cw.counts[static_cast<size_t>(c)] == 0)
      throw DataError(std::string("class_weights: class absent from training data: ") + kClassNames[static_cast<size_t>(c)]);
    cw.weights[static_cast<size_t>(c)] =
        static_cast<double>(cw.total) / (static_cast<double>(kNumClasses) * static_cast<double>(cw.counts[static_cast<size_t>(c)]));
  }
  return cw;
}

// ---------------------------------------------------------------------------
// Logit fusion: element-wise addition; prediction takes the maximum entry,
// ties broken toward the lowest index.
// ---------------------------------------------------------------------------

using Logits = std::array<double, 4>;

inline Logits fuse_logits(const Logits& backbone, const Logits& auxiliary) {
  return {backbone[0] + auxiliary[0], backbone[1] + auxiliary[1], backbone[2] + auxiliary[2], backbone[3] + auxiliary[3]};
}

inline int argmax_class(const Logits& logits) {
  int best = 0;
  for (int j = 1; j < kNumClasses; ++j)
    if (logits[static_cast<size_t>(j)] > logits[static_cast<size_t>(best)]) best = j;
  return best;
}

inline int argmax_class(const double* row) { return argmax_class(Logits{row[0], row[1], row[2], row[3]}); }

// ---------------------------------------------------------------------------
// Training configuration shared by both stages. Batch size clamps to the
// training-set size for small phantoms. Defaults: stage 1 trains 30 epochs,
// stage 2 trains 20; batch 512; Adam lr 1e-4 with cosine annealing.
// ---------------------------------------------------------------------------

struct OptimConfig {
  int64_t epochs = 30;
  int64_t batch_size = 512;
  double lr = 1e-4;
  int64_t chunk = 64;
  int threads = 1;
};

enum class FusionStrategy { logits_add, concat };

inline std::string to_string(FusionStrategy s) { return s == FusionStrategy::logits_add ? "logits_add" : "concat"; }
inline FusionStrategy fusion_strategy_from_string(const std::string& s) {
  if (s == "logits_add") return FusionStrategy::logits_add;
  if (s == "concat") return FusionStrategy::concat;
  throw UsageError("unknown fusion strategy: " + s);
}

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::logits_add;
  BackboneKind backbone_kind = BackboneKind::tractcloud;
  AuxVariant variant = AuxVariant::full;
  bool untied_encoders = false;
  int64_t epochs = 20;
  int64_t batch_size = 512;
  double lr = 1e-4;

  void validate() const {
    if (strategy == FusionStrategy::concat && variant == AuxVariant::none)
      throw UsageError("fusion: concat strategy requires an auxiliary variant");
  }
};

namespace detail {

inline void gather_aux_chunk(const Dataset& ds, const AuxConfig& acfg, const std::vector<int64_t>& order, int64_t begin, int64_t end,
                             nn::Matrix& coords, nn::Matrix& sa, nn::Matrix& sb) {
  const int64_t B = end - begin;
  if (acfg.uses_geometry()) {
    coords.resize_overwrite(B, 6);
    for (int64_t b = 0; b < B; ++b)
      std::copy(ds.endpoint_coords.row(order[static_cast<size_t>(begin + b)]),
                ds.endpoint_coords.row(order[static_cast<size_t>(begin + b)]) + 6, coords.row(b));
  }
  if (acfg.uses_signals()) {
    if (!ds.has_signals()) throw DataError("fusion: dataset has no fMRI endpoint signals but the variant requires them");
    sa.resize_overwrite(B, ds.frames);
    sb.resize_overwrite(B, ds.frames);
    for (int64_t b = 0; b < B; ++b) {
      const int64_t i = order[static_cast<size_t>(begin + b)];
      std::copy(ds.sig_a.row(i), ds.sig_a.row(i) + ds.frames, sa.row(b));
      std::copy(ds.sig_b.row(i), ds.sig_b.row(i) + ds.frames, sb.row(b));
    }
  }
}

inline void gather_rows(const nn::Matrix& src, const std::vector<int64_t>& order, int64_t begin, int64_t end, nn::Matrix& dst) {
  dst.resize_overwrite(end - begin, src.cols);
  for (int64_t b = 0; b < end - begin; ++b)
    std::copy(src.row(order[static_cast<size_t>(begin + b)]), src.row(order[static_cast<size_t>(begin + b)]) + src.cols, dst.row(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: pretrain the geometric backbone alone.
// ---------------------------------------------------------------------------

inline nn::ParamStore pretrain_backbone(const BackboneConfig& bcfg, const Dataset& ds, const std::vector<int64_t>& train_idx,
                                        const OptimConfig& oc, uint64_t seed, std::vector<double>* epoch_losses = nullptr) {
  if (train_idx.empty()) throw DataError("pretrain: empty training set");
  const auto cw = class_weights(gather_labels(ds, train_idx, 0, static_cast<int64_t>(train_idx.size())));

  nn::ParamStore store;
  Rng root(seed);
  add_backbone_params(store, bcfg, root.stream("stage1.init"));

  ThreadPool pool(oc.threads);
  const int64_t n = static_cast<int64_t>(train_idx.size());
  const int64_t batch = std::min(oc.batch_size, n);
  const int64_t steps_per_epoch = (n + batch - 1) / batch;
  const int64_t total_steps = oc.epochs * steps_per_epoch;
  int64_t step = 0;

  BackboneActivations act;
  BackboneTransposes wt_cache;
  nn::Matrix targets, neighbors;
  const bool needs_neighbors = bcfg.kind == BackboneKind::tractcloud;
  std::vector<int64_t> order = train_idx;
  for (int64_t epoch = 0; epoch < oc.epochs; ++epoch) {
    Rng shuffle_rng = root.stream("stage1.shuffle", static_cast<uint64_t>(epoch));
    order = train_idx;
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (int64_t start = 0; start < n; start += batch) {
      const int64_t bs = std::min(batch, n - start);
      store.zero_grad();
      wt_cache.rebuild(store, bcfg);
      double batch_loss = 0.0;
      for (int64_t cstart = start; cstart < start + bs; cstart += oc.chunk) {
        const int64_t cend = std::min(start + bs, cstart + oc.chunk);
        gather_backbone_chunk(ds, order, cstart, cend, targets, needs_neighbors ? &neighbors : nullptr);
        backbone_forward(store, bcfg, targets, neighbors, act, &pool);
        auto labels = gather_labels(ds, order, cstart, cend);
        auto xent = nn::softmax_xent(act.logits, labels, cw.weights);
        const double scale = static_cast<double>(cend - cstart) / static_cast<double>(bs);
        batch_loss += xent.loss * scale;
        for (auto& v : xent.dlogits.data) v *= scale;
        backbone_backward(store, bcfg, xent.dlogits, act, &pool, &wt_cache);
      }
      nn::adam_step(store, nn::cosine_lr(oc.lr, step, total_steps));
      ++step;
      epoch_loss += batch_loss * static_cast<double>(bs);
    }
    if (epoch_losses) epoch_losses->push_back(epoch_loss / static_cast<double>(n));
  }
  return store;
}

// Forward-only backbone pass over dataset rows. Optionally captures the
// 1024-D global features (for the concat strategy and its cache).
struct BackboneOutputs {
  nn::Matrix logits;    // n x 4
  nn::Matrix features;  // n x 1024 when requested
};

inline BackboneOutputs backbone_infer(const nn::ParamStore& store, const BackboneConfig& bcfg, const Dataset& ds,
                                      const std::vector<int64_t>& idx, const OptimConfig& oc, bool want_features) {
  ThreadPool pool(oc.threads);
  BackboneOutputs out;
  const int64_t n = static_cast<int64_t>(idx.size());
  out.logits.resize(n, kNumClasses);
  if (want_features) out.features.resize(n, kGlobalFeatureDim);
  BackboneActivations act;
  nn::Matrix targets, neighbors;
  const bool needs_neighbors = bcfg.kind == BackboneKind::tractcloud;
  for (int64_t start = 0; start < n; start += oc.chunk) {
    const int64_t end = std::min(n, start + oc.chunk);
    gather_backbone_chunk(ds, idx, start, end, targets, needs_neighbors ? &neighbors : nullptr);
    backbone_forward(store, bcfg, targets, neighbors, act, &pool);
    for (int64_t b = 0; b < end - start; ++b) {
      std::memcpy(out.logits.row(start + b), act.logits.row(b), sizeof(double) * kNumClasses);
      if (want_features) std::memcpy(out.features.row(start + b), act.global_feature.row(b), sizeof(double) * kGlobalFeatureDim);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2: the backbone is loaded frozen; only the auxiliary pathway (and,
// for concat, the fused head) receives gradients. Because the backbone is
// frozen its per-sample logits/features are constants, so they are computed
// once and reused every epoch; this is exactly equivalent to re-running the
// frozen forward pass.
// ---------------------------------------------------------------------------

inline AuxConfig aux_config_for(const FusionConfig& fc, int64_t frames) {
  AuxConfig acfg;
  acfg.variant = fc.variant;
  acfg.frames = frames;
  acfg.untied_encoders = fc.untied_encoders;
  return acfg;
}

inline nn::ParamStore train_stage2(const nn::ParamStore& backbone_store, const BackboneConfig& bcfg, const Dataset& ds,
                                   const std::vector<int64_t>& train_idx, const FusionConfig& fc, const OptimConfig& oc_in, uint64_t seed,
                                   std::vector<double>* epoch_losses = nullptr) {
  fc.validate();
  OptimConfig oc = oc_in;
  oc.epochs = fc.epochs;
  oc.batch_size = fc.batch_size;
  oc.lr = fc.lr;

  // Combined store: backbone groups copied in and frozen for the stage.
  nn::ParamStore store;
  for (const auto& g : backbone_store.groups) {
    auto& copy = store.add(g.name, g.shape, true);
    copy.values = g.values;
    copy.m = g.m;
    copy.v = g.v;
  }
  Rng root(seed);
  const AuxConfig acfg = aux_config_for(fc, ds.frames);
  if (fc.variant != AuxVariant::none) {
    const bool with_aux_head = fc.strategy == FusionStrategy::logits_add;
    add_aux_params_impl(store, acfg, root.stream("stage2.init"), with_aux_head);
  }
  if (fc.strategy == FusionStrategy::concat) {
    const int64_t in_dim = kGlobalFeatureDim + acfg.feature_dim();
    auto& w1 = store.add("fusion.head1.w", {in_dim, 256});
    nn::init_affine(w1, in_dim, 256, root.stream("fusion.head1"));
    store.add("fusion.head1.b", {256});
    auto& w2 = store.add("fusion.head2.w", {256, kNumClasses});
    nn::init_affine(w2, 256, kNumClasses, root.stream("fusion.head2"));
    store.add("fusion.head2.b", {kNumClasses});
  }

  if (fc.variant == AuxVariant::none) return store;  // nothing trainable: baseline passthrough

  if (train_idx.empty()) throw DataError("train_stage2: empty training set");
  const auto cw = class_weights(gather_labels(ds, train_idx, 0, static_cast<int64_t>(train_idx.size())));

  // Frozen-backbone cache over the training rows.
  const bool want_features = fc.strategy == FusionStrategy::concat;
  std::vector<int64_t> all_rows = train_idx;
  const BackboneOutputs cache = backbone_infer(backbone_store, bcfg, ds, all_rows, oc, want_features);
  // cache row r corresponds to train_idx[r]; remap via position order.
  std::vector<int64_t> cache_pos(static_cast<size_t>(ds.size()), -1);
  for (size_t r = 0; r < train_idx.size(); ++r) cache_pos[static_cast<size_t>(train_idx[r])] = static_cast<int64_t>(r);

  const int64_t n = static_cast<int64_t>(train_idx.size());
  const int64_t batch = std::min(oc.batch_size, n);
  const int64_t steps_per_epoch = (n + batch - 1) / batch;
  const int64_t total_steps = oc.epochs * steps_per_epoch;
  int64_t step = 0;

  AuxActivations act;
  nn::Matrix coords, sa, sb;
  nn::Matrix fused_in, h1, logits_chunk;
  std::vector<int64_t> order;
  std::vector<int64_t> cache_rows;
  for (int64_t epoch = 0; epoch < oc.epochs; ++epoch) {
    Rng shuffle_rng = root.stream("stage2.shuffle", static_cast<uint64_t>(epoch));
    order = train_idx;
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (int64_t start = 0; start < n; start += batch) {
      const int64_t bs = std::min(batch, n - start);
      store.zero_grad();
      double batch_loss = 0.0;
      for (int64_t cstart = start; cstart < start + bs; cstart += oc.chunk) {
        const int64_t cend = std::min(start + bs, cstart + oc.chunk);
        const int64_t B = cend - cstart;
        detail::gather_aux_chunk(ds, acfg, order, cstart, cend, coords, sa, sb);
        cache_rows.resize(static_cast<size_t>(B));
        for (int64_t b = 0; b < B; ++b) cache_rows[static_cast<size_t>(b)] = cache_pos[static_cast<size_t>(order[static_cast<size_t>(cstart + b)])];
        auto labels = gather_labels(ds, order, cstart, cend);

        if (fc.strategy == FusionStrategy::logits_add) {
          auxiliary_forward(store, acfg, coords, sa, sb, act);
          logits_chunk.resize(B, kNumClasses);
          for (int64_t b = 0; b < B; ++b) {
            const double* lb = cache.logits.row(cache_rows[static_cast<size_t>(b)]);
            const double* la = act.logits.row(b);
            for (int j = 0; j < kNumClasses; ++j) logits_chunk.row(b)[j] = lb[j] + la[j];
          }
          auto xent = nn::softmax_xent(logits_chunk, labels, cw.weights);
          const double scale = static_cast<double>(B) / static_cast<double>(bs);
          batch_loss += xent.loss * scale;
          for (auto& v : xent.dlogits.data) v *= scale;
          // d fused / d aux logits is the identity.
          auxiliary_backward(store, acfg, coords, sa, sb, act, xent.dlogits);
        } else {
          auxiliary_forward_feature_only(store, acfg, coords, sa, sb, act);
          detail::gather_rows(cache.features, cache_rows, 0, B, fused_in);
          nn::Matrix concat_in;
          detail::hconcat(fused_in, act.feature, concat_in);
          nn::affine_forward(concat_in, store.find("fusion.head1.w"), store.find("fusion.head1.b"), h1);
          nn::relu_forward_inplace(h1);
          nn::affine_forward(h1, store.find("fusion.head2.w"), store.find("fusion.head2.b"), logits_chunk);
          auto xent = nn::softmax_xent(logits_chunk, labels, cw.weights);
          const double scale = static_cast<double>(B) / static_cast<double>(bs);
          batch_loss += xent.loss * scale;
          for (auto& v : xent.dlogits.data) v *= scale;
          nn::Matrix dh1;
          const nn::Matrix wt2 = nn::transpose(nn::weight_matrix(store.find("fusion.head2.w")));
          nn::affine_backward(h1, store.find("fusion.head2.w"), wt2, xent.dlogits, store.find("fusion.head2.w"),
                              store.find("fusion.head2.b"), &dh1);
          nn::relu_backward_inplace(h1, dh1);
          nn::Matrix dconcat;
          const nn::Matrix wt1 = nn::transpose(nn::weight_matrix(store.find("fusion.head1.w")));
          nn::affine_backward(concat_in, store.find("fusion.head1.w"), wt1, dh1, store.find("fusion.head1.w"),
                              store.find("fusion.head1.b"), &dconcat);
          // Only the auxiliary slice of the concat carries gradient onward.
          nn::Matrix dfeature(B, acfg.feature_dim());
          for (int64_t b = 0; b < B; ++b)
            std::copy(dconcat.row(b) + kGlobalFeatureDim, dconcat.row(b) + kGlobalFeatureDim + acfg.feature_dim(), dfeature.row(b));
          auxiliary_backward_from_feature(store, acfg, coords, sa, sb, act, dfeature);
        }
      }
      nn::adam_step(store, nn::cosine_lr(oc.lr, step, total_steps));
      ++step;
      epoch_loss += batch_loss * static_cast<double>(bs);
    }
    if (epoch_losses) epoch_losses->push_back(epoch_loss / static_cast<double>(n));
  }
  return store;
}

// Fused-model inference: fresh frozen-backbone forward plus the auxiliary
// pathway, combined per the configured strategy.
inline nn::Matrix fused_infer_logits(const nn::ParamStore& store, const BackboneConfig& bcfg, const FusionConfig& fc, const Dataset& ds,
                                     const std::vector<int64_t>& idx, const OptimConfig& oc) {
  fc.validate();
  const AuxConfig acfg = aux_config_for(fc, ds.frames);
  const bool want_features = fc.strategy == FusionStrategy::concat;
  BackboneOutputs bb = backbone_infer(store, bcfg, ds, idx, oc, want_features);
  if (fc.variant == AuxVariant::none) return std::move(bb.logits);

  const int64_t n = static_cast<int64_t>(idx.size());
  nn::Matrix out(n, kNumClasses);
  AuxActivations act;
  nn::Matrix coords, sa, sb, h1, logits_chunk, fused_in;
  for (int64_t start = 0; start < n; start += oc.chunk) {
    const int64_t end = std::min(n, start + oc.chunk);
    const int64_t B = end - start;
    detail::gather_aux_chunk(ds, acfg, idx, start, end, coords, sa, sb);
    if (fc.strategy == FusionStrategy::logits_add) {
      auxiliary_forward(store, acfg, coords, sa, sb, act);
      for (int64_t b = 0; b < B; ++b) {
        const double* lb = bb.logits.row(start + b);
        const double* la = act.logits.row(b);
        for (int j = 0; j < kNumClasses; ++j) out.row(start + b)[j] = lb[j] + la[j];
      }
    } else {
      auxiliary_forward_feature_only(store, acfg, coords, sa, sb, act);
      fused_in.resize(B, kGlobalFeatureDim);
      for (int64_t b = 0; b < B; ++b)
        std::copy(bb.features.row(start + b), bb.features.row(start + b) + kGlobalFeatureDim, fused_in.row(b));
      nn::Matrix concat_in;
      detail::hconcat(fused_in, act.feature, concat_in);
      nn::affine_forward(concat_in, store.find("fusion.head1.w"), store.find("fusion.head1.b"), h1);
      nn::relu_forward_inplace(h1);
      nn::affine_forward(h1, store.find("fusion.head2.w"), store.find("fusion.head2.b"), logits_chunk);
      for (int64_t b = 0; b < B; ++b) std::memcpy(out.row(start + b), logits_chunk.row(b), sizeof(double) * kNumClasses);
    }
  }
  return out;
}

}  // namespace tractfusion
