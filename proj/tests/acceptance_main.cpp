// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exit code is the number of failures.

#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tractfusion/auxiliary.hpp"
#include "tractfusion/backbone.hpp"
#include "tractfusion/dataset.hpp"
#include "tractfusion/eval.hpp"
#include "tractfusion/fusion.hpp"
#include "tractfusion/io.hpp"
#include "tractfusion/phantom.hpp"

#ifndef TRACTFUSION_CLI_PATH
#define TRACTFUSION_CLI_PATH ""
#endif
#ifndef TRACTFUSION_DEMO_SPEC
#define TRACTFUSION_DEMO_SPEC ""
#endif

namespace fs = std::filesystem;
using namespace tractfusion;
using nn::Matrix;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Matrix random_matrix(int64_t r, int64_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.data) v = scale * (rng.uniform01() * 2.0 - 1.0);
  return m;
}

double quadratic_loss(const Matrix& y) {
  double s = 0.0;
  for (double v : y.data) s += v * v;
  return 0.5 * s;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness: every layer and both model heads, 10 seeds,
//    eps=1e-5, >=50 coordinates per group, max relative error < 1e-4,
//    wall under one minute.
// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  const double t0 = now_s();
  double worst = 0.0;
  std::string worst_site;
  auto track = [&](const std::string& site, double err) {
    if (err > worst) {
      worst = err;
      worst_site = site;
    }
  };

  for (uint64_t seed = 0; seed < 10; ++seed) {
    {  // affine
      Rng rng(1000 + seed);
      nn::ParamStore store;
      nn::init_affine(store.add("a.w", {9, 6}), 9, 6, rng.stream("w"));
      store.add("a.b", {6});
      Matrix x = random_matrix(5, 9, rng);
      auto fwd = [&]() {
        Matrix y;
        nn::affine_forward(x, store.find("a.w"), store.find("a.b"), y);
        return y;
      };
      auto res = nn::gradcheck(
          store, [&]() { return quadratic_loss(fwd()); },
          [&]() {
            store.zero_grad();
            Matrix y = fwd();
            nn::affine_backward(x, store.find("a.w"), Matrix(), y, store.find("a.w"), store.find("a.b"), nullptr);
          },
          Rng(seed), 50, 1e-5);
      track("affine", res.max_rel_err);
    }
    {  // relu inside a shared point-wise MLP
      Rng rng(2000 + seed);
      nn::ParamStore store;
      nn::init_affine(store.add("m1.w", {6, 8}), 6, 8, rng.stream("w1"));
      store.add("m1.b", {8});
      nn::init_affine(store.add("m2.w", {8, 4}), 8, 4, rng.stream("w2"));
      store.add("m2.b", {4});
      Matrix x = random_matrix(24, 6, rng);
      auto loss_fn = [&]() {
        Matrix a, b;
        nn::affine_forward(x, store.find("m1.w"), store.find("m1.b"), a);
        nn::relu_forward_inplace(a);
        nn::affine_forward(a, store.find("m2.w"), store.find("m2.b"), b);
        return quadratic_loss(b);
      };
      auto grads_fn = [&]() {
        store.zero_grad();
        Matrix a, b, da;
        nn::affine_forward(x, store.find("m1.w"), store.find("m1.b"), a);
        nn::relu_forward_inplace(a);
        nn::affine_forward(a, store.find("m2.w"), store.find("m2.b"), b);
        nn::affine_backward(a, store.find("m2.w"), nn::transpose(nn::weight_matrix(store.find("m2.w"))), b, store.find("m2.w"),
                            store.find("m2.b"), &da);
        nn::relu_backward_inplace(a, da);
        nn::affine_backward(x, store.find("m1.w"), Matrix(), da, store.find("m1.w"), store.find("m1.b"), nullptr);
      };
      track("shared_mlp", nn::gradcheck(store, loss_fn, grads_fn, Rng(seed), 50, 1e-5).max_rel_err);
    }
    {  // conv1d
      Rng rng(3000 + seed);
      nn::ParamStore store;
      nn::Conv1dSpec spec{2, 3, 5, 2, 1};
      nn::init_affine(store.add("c.w", {3, 2, 5}), 10, 3, rng.stream("w"));
      store.add("c.b", {3});
      Matrix x = random_matrix(3, 2 * 20, rng);
      auto loss_fn = [&]() {
        Matrix y;
        nn::conv1d_forward(x, 20, spec, store.find("c.w"), store.find("c.b"), y);
        return quadratic_loss(y);
      };
      auto grads_fn = [&]() {
        store.zero_grad();
        Matrix y;
        nn::conv1d_forward(x, 20, spec, store.find("c.w"), store.find("c.b"), y);
        nn::conv1d_backward(x, 20, spec, store.find("c.w"), y, store.find("c.w"), store.find("c.b"), nullptr);
      };
      track("conv1d", nn::gradcheck(store, loss_fn, grads_fn, Rng(seed), 50, 1e-5).max_rel_err);
    }
    {  // maxpool routed through an affine
      Rng rng(4000 + seed);
      nn::ParamStore store;
      nn::init_affine(store.add("p.w", {5, 6}), 5, 6, rng.stream("w"));
      store.add("p.b", {6});
      Matrix x = random_matrix(12, 5, rng);
      auto loss_fn = [&]() {
        Matrix y, pooled;
        std::vector<int32_t> amax;
        nn::affine_forward(x, store.find("p.w"), store.find("p.b"), y);
        nn::maxpool_forward(y, 3, 4, 6, pooled, amax);
        return quadratic_loss(pooled);
      };
      auto grads_fn = [&]() {
        store.zero_grad();
        Matrix y, pooled, dy;
        std::vector<int32_t> amax;
        nn::affine_forward(x, store.find("p.w"), store.find("p.b"), y);
        nn::maxpool_forward(y, 3, 4, 6, pooled, amax);
        nn::maxpool_backward(pooled, 3, 4, 6, amax, dy);
        nn::affine_backward(x, store.find("p.w"), Matrix(), dy, store.find("p.w"), store.find("p.b"), nullptr);
      };
      track("maxpool", nn::gradcheck(store, loss_fn, grads_fn, Rng(seed), 50, 1e-5).max_rel_err);
    }
    {  // softmax cross-entropy gradient w.r.t. logits
      Rng rng(5000 + seed);
      nn::ParamStore store;
      auto& g = store.add("logits", {6, 4});
      for (auto& v : g.values) v = rng.uniform(-2, 2);
      std::vector<int> labels{0, 1, 2, 3, 2, 1};
      std::array<double, 4> w{0.7, 1.3, 1.0, 2.1};
      auto loss_fn = [&]() {
        Matrix logits(6, 4);
        logits.data = store.find("logits").values;
        return nn::softmax_xent(logits, labels, w).loss;
      };
      auto grads_fn = [&]() {
        Matrix logits(6, 4);
        logits.data = store.find("logits").values;
        store.find("logits").grad = nn::softmax_xent(logits, labels, w).dlogits.data;
      };
      track("softmax_xent", nn::gradcheck(store, loss_fn, grads_fn, Rng(seed), 50, 1e-5).max_rel_err);
    }
    // Backbone heads (full models through the weighted loss).
    for (BackboneKind kind : {BackboneKind::tractcloud, BackboneKind::pointnet}) {
      Rng rng(6000 + seed);
      BackboneConfig bcfg;
      bcfg.kind = kind;
      nn::ParamStore store;
      add_backbone_params(store, bcfg, Rng(6100 + seed));
      Matrix target = random_matrix(1, 75, rng, 0.5);
      Matrix neighbors = random_matrix(20, 75, rng, 0.5);
      std::vector<int> labels{static_cast<int>(seed % 4)};
      std::array<double, 4> w{1.0, 1.8, 0.6, 1.2};
      BackboneActivations act;
      auto loss_fn = [&]() {
        backbone_forward(store, bcfg, target, neighbors, act);
        return nn::softmax_xent(act.logits, labels, w).loss;
      };
      auto grads_fn = [&]() {
        store.zero_grad();
        backbone_forward(store, bcfg, target, neighbors, act);
        backbone_backward(store, bcfg, nn::softmax_xent(act.logits, labels, w).dlogits, act);
      };
      track("backbone_" + to_string(kind), nn::gradcheck(store, loss_fn, grads_fn, Rng(seed), 50, 1e-5).max_rel_err);
    }
    {  // auxiliary head (full variant through the weighted loss)
      Rng rng(7000 + seed);
      AuxConfig acfg;
      acfg.variant = AuxVariant::full;
      acfg.frames = 36;
      nn::ParamStore store;
      add_aux_params(store, acfg, Rng(7100 + seed));
      Matrix coords = random_matrix(2, 6, rng);
      Matrix sa = random_matrix(2, 36, rng);
      Matrix sb = random_matrix(2, 36, rng);
      std::vector<int> labels{1, 3};
      std::array<double, 4> w{1.0, 1.0, 1.5, 0.5};
      AuxActivations act;
      auto loss_fn = [&]() {
        auxiliary_forward(store, acfg, coords, sa, sb, act);
        return nn::softmax_xent(act.logits, labels, w).loss;
      };
      auto grads_fn = [&]() {
        store.zero_grad();
        auxiliary_forward(store, acfg, coords, sa, sb, act);
        auxiliary_backward(store, acfg, coords, sa, sb, act, nn::softmax_xent(act.logits, labels, w).dlogits);
      };
      track("auxiliary", nn::gradcheck(store, loss_fn, grads_fn, Rng(seed), 50, 1e-5).max_rel_err);
    }
  }
  const double wall = now_s() - t0;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "max rel err %.2e at %s, %.1f s", worst, worst_site.c_str(), wall);
  return {worst < 1e-4 && wall < 60.0, buf};
}

// ---------------------------------------------------------------------------
// 2. Freeze contract: backbone bytes identical through stage 2, via the
//    checkpoint files.
// ---------------------------------------------------------------------------

Outcome criterion_freeze(const fs::path& tmp) {
  PhantomSpec spec;
  spec.n_per_class = {30, 30, 30, 30};
  spec.grid_dims = {16, 16, 16};
  spec.frames = 32;
  spec.rng_seed = 21;
  auto data = generate_phantom(spec);
  auto denoised = denoise(data.grid, data.mask);
  auto ds = build_dataset(data.bundle, &denoised, &data.mask, {});
  std::vector<int64_t> idx(static_cast<size_t>(ds.size()));
  for (int64_t i = 0; i < ds.size(); ++i) idx[static_cast<size_t>(i)] = i;

  OptimConfig oc;
  oc.epochs = 2;
  oc.batch_size = 64;
  oc.threads = 2;
  BackboneConfig bcfg;
  auto stage1 = pretrain_backbone(bcfg, ds, idx, oc, 7);
  const std::string ck1 = (tmp / "stage1.json").string();
  io::write_checkpoint(ck1, stage1, "tractcloud");
  auto loaded1 = io::read_checkpoint(ck1);

  struct Case {
    FusionStrategy strategy;
    AuxVariant variant;
  };
  for (auto cs : {Case{FusionStrategy::logits_add, AuxVariant::full}, Case{FusionStrategy::logits_add, AuxVariant::endpoint_only},
                  Case{FusionStrategy::logits_add, AuxVariant::fmri_only}, Case{FusionStrategy::concat, AuxVariant::full}}) {
    FusionConfig fc;
    fc.strategy = cs.strategy;
    fc.variant = cs.variant;
    fc.epochs = 2;
    fc.batch_size = 64;
    auto fused = train_stage2(loaded1.store, bcfg, ds, idx, fc, oc, 13);
    const std::string ck2 = (tmp / ("stage2_" + to_string(cs.variant) + "_" + to_string(cs.strategy) + ".json")).string();
    io::write_checkpoint(ck2, fused, "fused");
    auto loaded2 = io::read_checkpoint(ck2);
    for (const auto& g : loaded1.store.groups) {
      const auto& h = loaded2.store.find(g.name);
      if (!h.frozen) return {false, "group " + g.name + " not frozen after " + to_string(cs.strategy)};
      if (h.values.size() != g.values.size() ||
          std::memcmp(h.values.data(), g.values.data(), g.values.size() * sizeof(double)) != 0)
        return {false, "backbone bytes differ for " + g.name + " after " + to_string(cs.strategy) + "/" + to_string(cs.variant)};
    }
  }
  return {true, "backbone bytes identical across 4 strategy/variant combinations"};
}

// ---------------------------------------------------------------------------
// 3. Fusion identities on 1000 random inputs.
// ---------------------------------------------------------------------------

Outcome criterion_fusion_identities() {
  Rng rng(33);
  for (int rep = 0; rep < 1000; ++rep) {
    Logits lb, la;
    for (int j = 0; j < 4; ++j) {
      lb[static_cast<size_t>(j)] = rng.uniform(-8, 8);
      la[static_cast<size_t>(j)] = rng.uniform(-8, 8);
    }
    if (argmax_class(fuse_logits(lb, {0, 0, 0, 0})) != argmax_class(lb)) return {false, "zero auxiliary changed the prediction"};
    if (fuse_logits(lb, {0, 0, 0, 0}) != lb) return {false, "zero auxiliary changed the logits"};
    const int base = argmax_class(fuse_logits(lb, la));
    const double shift = rng.uniform(-20, 20);
    Logits lb2 = lb, la2 = la;
    for (int j = 0; j < 4; ++j) lb2[static_cast<size_t>(j)] += shift;
    if (argmax_class(fuse_logits(lb2, la)) != base) return {false, "backbone shift changed the argmax"};
    for (int j = 0; j < 4; ++j) la2[static_cast<size_t>(j)] += shift;
    if (argmax_class(fuse_logits(lb, la2)) != base) return {false, "auxiliary shift changed the argmax"};
  }
  return {true, "1000 zero-identity and 2000 shift-invariance trials exact"};
}

// ---------------------------------------------------------------------------
// 4. Eq. (2) law.
// ---------------------------------------------------------------------------

Outcome criterion_class_weights() {
  Rng rng(44);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c) {
      const int64_t n = 1 + static_cast<int64_t>(rng.uniform_int(500));
      for (int64_t i = 0; i < n; ++i) labels.push_back(c);
    }
    auto cw = class_weights(labels);
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) sum += static_cast<double>(cw.counts[static_cast<size_t>(c)]) * cw.weights[static_cast<size_t>(c)];
    if (std::fabs(sum - static_cast<double>(cw.total)) > 1e-12 * static_cast<double>(cw.total))
      return {false, "sum n_c*w_c deviates from N"};
  }
  std::vector<int> balanced;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 123; ++i) balanced.push_back(c);
  auto cw = class_weights(balanced);
  for (double w : cw.weights)
    if (w != 1.0) return {false, "balanced data does not give unit weights"};
  return {true, "200 random multisets within 1e-12; balanced data gives unit weights"};
}

// ---------------------------------------------------------------------------
// 5. Denoising laws.
// ---------------------------------------------------------------------------

Outcome criterion_denoising() {
  {  // constant in-mask fields through gaussian and boxcar
    VoxelGridSeries g;
    g.dims = {9, 9, 9};
    g.voxel_size = {2, 2, 2};
    g.tr = 0.72;
    g.frames = 3;
    g.data.assign(static_cast<size_t>(3 * g.voxels()), 4.25);
    CorticalMask m;
    m.dims = g.dims;
    m.values.assign(static_cast<size_t>(g.voxels()), 1);
    for (int64_t i = 0; i < g.voxels(); i += 4) m.values[static_cast<size_t>(i)] = 0;
    auto gs = gaussian_smooth(g, m, 6.0);
    auto bc = boxcar(g, m, 1);
    for (size_t i = 0; i < g.data.size(); ++i) {
      if (std::fabs(gs.data[i] - 4.25) > 1e-9) return {false, "gaussian_smooth moved a constant field"};
      if (std::fabs(bc.data[i] - 4.25) > 1e-9) return {false, "boxcar moved a constant field"};
    }
  }
  {  // linear drift removal, T=100, tr=0.72
    VoxelGridSeries g;
    g.dims = {2, 2, 2};
    g.voxel_size = {1, 1, 1};
    g.tr = 0.72;
    g.frames = 100;
    g.data.resize(static_cast<size_t>(100 * 8));
    for (int64_t t = 0; t < 100; ++t)
      for (int64_t i = 0; i < 8; ++i) g.at(t, i) = 2.5 * static_cast<double>(t) - 30.0;
    CorticalMask m;
    m.dims = g.dims;
    m.values.assign(8, 1);
    auto out = highpass(g, m, 0.01);
    double in_rms = 0, out_rms = 0;
    for (int64_t t = 0; t < 100; ++t) {
      in_rms += g.at(t, 0) * g.at(t, 0);
      out_rms += out.at(t, 0) * out.at(t, 0);
    }
    if (std::sqrt(out_rms) >= 1e-6 * std::sqrt(in_rms)) return {false, "linear drift residual exceeds 1e-6 of input RMS"};
  }
  {  // impulse response vs dense brute-force oracle
    VoxelGridSeries g;
    g.dims = {15, 15, 15};
    g.voxel_size = {1, 1, 1};
    g.tr = 0.72;
    g.frames = 2;
    g.data.assign(static_cast<size_t>(2 * g.voxels()), 0.0);
    CorticalMask m;
    m.dims = g.dims;
    m.values.assign(static_cast<size_t>(g.voxels()), 1);
    g.at(0, g.linear(7, 7, 7)) = 1.0;
    const double fwhm = 2.0;
    auto out = gaussian_smooth(g, m, fwhm);
    const double sigma = fwhm_to_sigma(fwhm);
    const int64_t r = static_cast<int64_t>(std::floor(3.0 * sigma / 1.0 + 1e-12));
    for (int64_t z = 0; z < 15; ++z)
      for (int64_t y = 0; y < 15; ++y)
        for (int64_t x = 0; x < 15; ++x) {
          double num = 0, den = 0;
          for (int64_t dz = -r; dz <= r; ++dz)
            for (int64_t dy = -r; dy <= r; ++dy)
              for (int64_t dx = -r; dx <= r; ++dx) {
                const int64_t qx = x + dx, qy = y + dy, qz = z + dz;
                if (qx < 0 || qx >= 15 || qy < 0 || qy >= 15 || qz < 0 || qz >= 15) continue;
                const double w = std::exp(-(static_cast<double>(dx * dx + dy * dy + dz * dz)) / (2.0 * sigma * sigma));
                num += w * g.at(0, g.linear(qx, qy, qz));
                den += w;
              }
          if (std::fabs(out.at(0, g.linear(x, y, z)) - num / den) > 1e-9)
            return {false, "impulse response deviates from the dense convolution oracle"};
        }
  }
  return {true, "constant-field, drift-removal, and impulse-oracle laws hold"};
}

// ---------------------------------------------------------------------------
// 6. Oracle equivalences: knn, weighted F1, k-fold.
// ---------------------------------------------------------------------------

Outcome criterion_oracles() {
  {  // knn vs O(n^2) brute force on 200 random streamlines
    Rng rng(55);
    std::vector<Streamline> bundle;
    for (int i = 0; i < 200; ++i) {
      Streamline s;
      s.id = i;
      Vec3 p{rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-30, 30)};
      for (int k = 0; k < 6; ++k) {
        s.points.push_back(p);
        p += Vec3{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
      }
      bundle.push_back(resample(s, 25));
    }
    const int64_t k = 20;
    auto sets = knn(bundle, k);
    for (size_t i = 0; i < bundle.size(); ++i) {
      std::vector<std::pair<double, int64_t>> all;
      for (size_t j = 0; j < bundle.size(); ++j) {
        if (j == i) continue;
        double direct = 0, flipped = 0;
        for (size_t p = 0; p < 25; ++p) {
          direct += (bundle[i].points[p] - bundle[j].points[p]).norm();
          flipped += (bundle[i].points[p] - bundle[j].points[24 - p]).norm();
        }
        all.emplace_back(std::min(direct, flipped) / 25.0, bundle[j].id);
      }
      std::sort(all.begin(), all.end());
      for (int64_t r = 0; r < k; ++r) {
        if (sets[i].neighbor_ids[static_cast<size_t>(r)] != all[static_cast<size_t>(r)].second ||
            sets[i].distances[static_cast<size_t>(r)] != all[static_cast<size_t>(r)].first)
          return {false, "knn deviates from the brute-force oracle"};
      }
    }
  }
  {  // weighted F1 vs per-sample recomputation on 50 random instances
    Rng rng(66);
    for (int rep = 0; rep < 50; ++rep) {
      const int64_t n = 30 + static_cast<int64_t>(rng.uniform_int(300));
      std::vector<int> truth, pred;
      ConfusionMatrix cm;
      for (int64_t i = 0; i < n; ++i) {
        truth.push_back(static_cast<int>(rng.uniform_int(4)));
        pred.push_back(static_cast<int>(rng.uniform_int(4)));
        cm.add(truth.back(), pred.back());
      }
      double oracle = 0.0;
      for (int c = 0; c < 4; ++c) {
        int64_t tp = 0, fp = 0, fn = 0, support = 0;
        for (size_t i = 0; i < truth.size(); ++i) {
          support += truth[i] == c;
          tp += pred[i] == c && truth[i] == c;
          fp += pred[i] == c && truth[i] != c;
          fn += pred[i] != c && truth[i] == c;
        }
        const double p = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double r = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        oracle += ((p + r) > 0 ? 2 * p * r / (p + r) : 0.0) * static_cast<double>(support) / static_cast<double>(n);
      }
      if (weighted_f1(cm) != oracle) return {false, "weighted F1 deviates from the per-sample oracle"};
    }
  }
  {  // k-fold partition properties
    Rng rng(77);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<int> labels;
      std::array<int64_t, 4> class_n{};
      for (int c = 0; c < 4; ++c) {
        class_n[static_cast<size_t>(c)] = 5 + static_cast<int64_t>(rng.uniform_int(60));
        for (int64_t i = 0; i < class_n[static_cast<size_t>(c)]; ++i) labels.push_back(c);
      }
      auto folds = kfold_split(labels, 5, static_cast<uint64_t>(rep));
      std::set<int64_t> seen;
      for (const auto& fold : folds)
        for (int64_t i : fold)
          if (!seen.insert(i).second) return {false, "kfold folds overlap"};
      if (seen.size() != labels.size()) return {false, "kfold folds are not exhaustive"};
      for (int c = 0; c < 4; ++c) {
        int64_t lo = class_n[static_cast<size_t>(c)], hi = 0;
        for (const auto& fold : folds) {
          int64_t count = 0;
          for (int64_t i : fold) count += labels[static_cast<size_t>(i)] == c;
          lo = std::min(lo, count);
          hi = std::max(hi, count);
        }
        if (hi - lo > 1) return {false, "kfold stratification off by more than one"};
      }
    }
  }
  return {true, "knn (200 streamlines), weighted F1 (50 instances), k-fold partitions all exact"};
}

// ---------------------------------------------------------------------------
// 7. Separable phantom: TractCloud baseline, 5-fold, 30+0 epochs,
//    weighted F1 >= 0.95, wall under 10 minutes.
// ---------------------------------------------------------------------------

PhantomSpec acceptance_phantom(double overlap) {
  PhantomSpec spec;
  spec.n_per_class = {500, 500, 500, 500};
  spec.grid_dims = {24, 24, 24};
  spec.voxel_size_mm = 2.0;
  spec.tr_s = 0.72;
  spec.frames = 64;
  spec.geometric_overlap = overlap;
  spec.activation_snr = 10.0;
  spec.drift_amplitude = 1.0;
  spec.rng_seed = 42;
  return spec;
}

MatrixOptions acceptance_matrix_options() {
  MatrixOptions opt;
  opt.folds = 5;
  opt.seed = 42;
  opt.stage1_epochs = 30;
  opt.stage2_epochs = 20;
  opt.batch_size = 512;
  opt.lr = 1e-4;
  opt.threads = default_worker_count();
  opt.jobs = 1;
  return opt;
}

Outcome criterion_separable() {
  const double t0 = now_s();
  auto data = generate_phantom(acceptance_phantom(0.0));
  auto ds = build_dataset(data.bundle, nullptr, nullptr, {});
  auto opt = acceptance_matrix_options();
  std::vector<RunSpec> specs{{BackboneKind::tractcloud, AuxVariant::none, FusionStrategy::logits_add}};
  auto result = run_matrix(ds, specs, opt);
  const double wall = now_s() - t0;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "mean weighted F1 %.4f over 5 folds, wall %.0f s", result.runs[0].mean_f1, wall);
  return {result.runs[0].mean_f1 >= 0.95 && wall < 600.0, buf};
}

// ---------------------------------------------------------------------------
// 8. Fusion benefit on the ambiguous phantom.
// ---------------------------------------------------------------------------

Outcome criterion_fusion_benefit() {
  auto data = generate_phantom(acceptance_phantom(1.0));
  auto denoised = denoise(data.grid, data.mask);
  auto ds = build_dataset(data.bundle, &denoised, &data.mask, {});
  auto opt = acceptance_matrix_options();
  std::vector<RunSpec> specs{{BackboneKind::tractcloud, AuxVariant::none, FusionStrategy::logits_add},
                             {BackboneKind::tractcloud, AuxVariant::full, FusionStrategy::logits_add},
                             {BackboneKind::tractcloud, AuxVariant::full, FusionStrategy::concat}};
  auto result = run_matrix(ds, specs, opt);

  const auto& baseline = result.runs[0];
  const auto& proposed = result.runs[1];
  const auto& concat = result.runs[2];
  double trunk_f1 = 0.0, hand_f1 = 0.0;
  for (const auto& f : baseline.folds) {
    trunk_f1 += f.scores.f1[1];
    hand_f1 += f.scores.f1[3];
  }
  trunk_f1 /= static_cast<double>(baseline.folds.size());
  hand_f1 /= static_cast<double>(baseline.folds.size());
  const double gain = proposed.mean_f1 - baseline.mean_f1;
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "baseline F1 %.4f (trunk %.3f, hand %.3f), proposed %.4f (gain %+0.4f), concat %.4f reported",
                baseline.mean_f1, trunk_f1, hand_f1, proposed.mean_f1, gain, concat.mean_f1);
  const bool pass = trunk_f1 <= 0.60 && hand_f1 <= 0.60 && gain >= 0.10 && concat.folds.size() == 5;
  return {pass, buf};
}

// ---------------------------------------------------------------------------
// 9. Orientation invariance on 100+ streamlines.
// ---------------------------------------------------------------------------

Outcome criterion_orientation() {
  PhantomSpec spec;
  spec.n_per_class = {30, 30, 30, 30};
  spec.grid_dims = {16, 16, 16};
  spec.frames = 32;
  spec.rng_seed = 65;
  auto data = generate_phantom(spec);
  auto denoised = denoise(data.grid, data.mask);

  auto flipped = data.bundle;
  for (auto& s : flipped) std::reverse(s.points.begin(), s.points.end());

  auto ds1 = build_dataset(data.bundle, &denoised, &data.mask, {});
  auto ds2 = build_dataset(flipped, &denoised, &data.mask, {});

  BackboneConfig bcfg;
  nn::ParamStore bstore;
  add_backbone_params(bstore, bcfg, Rng(66));
  AuxConfig acfg;
  acfg.variant = AuxVariant::full;
  acfg.frames = ds1.frames;
  nn::ParamStore astore;
  add_aux_params(astore, acfg, Rng(67));

  std::vector<int64_t> idx(static_cast<size_t>(ds1.size()));
  for (int64_t i = 0; i < ds1.size(); ++i) idx[static_cast<size_t>(i)] = i;
  OptimConfig oc;
  oc.threads = 2;
  auto bb1 = backbone_infer(bstore, bcfg, ds1, idx, oc, false);
  auto bb2 = backbone_infer(bstore, bcfg, ds2, idx, oc, false);

  Matrix c1, a1, b1, c2, a2, b2;
  detail::gather_aux_chunk(ds1, acfg, idx, 0, ds1.size(), c1, a1, b1);
  detail::gather_aux_chunk(ds2, acfg, idx, 0, ds2.size(), c2, a2, b2);
  AuxActivations act1, act2;
  auxiliary_forward(astore, acfg, c1, a1, b1, act1);
  auxiliary_forward(astore, acfg, c2, a2, b2, act2);

  for (int64_t i = 0; i < ds1.size(); ++i) {
    if (std::memcmp(act1.logits.row(i), act2.logits.row(i), 4 * sizeof(double)) != 0)
      return {false, "auxiliary logits differ after reversal for streamline " + std::to_string(ds1.ids[static_cast<size_t>(i)])};
    if (argmax_class(bb1.logits.row(i)) != argmax_class(bb2.logits.row(i)))
      return {false, "backbone prediction changed after reversal for streamline " + std::to_string(ds1.ids[static_cast<size_t>(i)])};
  }
  return {true, "120 streamlines: auxiliary logits bit-identical, backbone classes unchanged"};
}

// ---------------------------------------------------------------------------
// 10. Determinism: two CLI ablate runs, identical seed, diff-identical.
// ---------------------------------------------------------------------------

Outcome criterion_determinism(const fs::path& tmp) {
  const std::string cli = TRACTFUSION_CLI_PATH;
  const std::string demo_spec = TRACTFUSION_DEMO_SPEC;
  if (cli.empty() || !fs::exists(cli)) return {false, "CLI binary not found"};
  if (demo_spec.empty() || !fs::exists(demo_spec)) return {false, "demo spec not found"};

  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " >" + (tmp / "out.txt").string() + " 2>" + (tmp / "err.txt").string();
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };
  const std::string dir = (tmp / "demo_data").string();
  if (run("phantom --spec " + demo_spec + " --out " + dir) != 0) return {false, "phantom generation failed"};
  const std::string common =
      "--seed 42 --no-timestamp ablate --data " + dir + " --folds 3 --stage1-epochs 3 --stage2-epochs 2 --batch 128 --jobs 2 --out ";
  if (run(common + (tmp / "r1.json").string()) != 0) return {false, "first ablate run failed"};
  if (run(common + (tmp / "r2.json").string()) != 0) return {false, "second ablate run failed"};

  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  const std::string r1 = slurp(tmp / "r1.json");
  const std::string r2 = slurp(tmp / "r2.json");
  if (r1.empty() || r1 != r2) return {false, "ablate reports differ between identical-seed runs"};
  nlohmann::json report = nlohmann::json::parse(r1);
  if (report["runs"].size() != 10) return {false, "ablate report does not contain the 10-run matrix"};
  return {true, "two ablate runs byte-identical; 10-run matrix present"};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--only" && i + 1 < argc) only = std::atoi(argv[i + 1]);

  fs::path tmp = fs::temp_directory_path() / ("tractfusion_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(tmp);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", criterion_gradients},
      {2, "freeze contract", [&] { return criterion_freeze(tmp); }},
      {3, "fusion identities", criterion_fusion_identities},
      {4, "class-weight law", criterion_class_weights},
      {5, "denoising laws", criterion_denoising},
      {6, "oracle equivalences", criterion_oracles},
      {7, "separable phantom baseline", criterion_separable},
      {8, "fusion benefit on ambiguous phantom", criterion_fusion_benefit},
      {9, "orientation invariance", criterion_orientation},
      {10, "ablate determinism", [&] { return criterion_determinism(tmp); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  criterion %2d: %s (%s)\n", outcome.pass ? "PASS" : "FAIL", c.id, c.name, outcome.detail.c_str());
    std::fflush(stdout);
    failures += outcome.pass ? 0 : 1;
  }
  fs::remove_all(tmp);
  return failures;
}
