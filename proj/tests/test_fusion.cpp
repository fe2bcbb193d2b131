#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "tractfusion/dataset.hpp"
#include "tractfusion/fusion.hpp"
#include "tractfusion/phantom.hpp"

using namespace tractfusion;

TEST_CASE("class_weights: balanced labels give unit weights") {
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 25; ++i) labels.push_back(c);
  auto cw = class_weights(labels);
  for (double w : cw.weights) CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("class_weights: N/(c*n_c) on an imbalanced multiset") {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(0);
  for (int i = 0; i < 50; ++i) labels.push_back(1);
  for (int i = 0; i < 25; ++i) labels.push_back(2);
  for (int i = 0; i < 25; ++i) labels.push_back(3);
  auto cw = class_weights(labels);
  CHECK(cw.weights[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cw.weights[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cw.weights[2] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(cw.weights[3] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("class_weights: sum of n_c * w_c recovers N for random multisets") {
  Rng rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c) {
      const int64_t n = 1 + static_cast<int64_t>(rng.uniform_int(200));
      for (int64_t i = 0; i < n; ++i) labels.push_back(c);
    }
    auto cw = class_weights(labels);
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) sum += static_cast<double>(cw.counts[static_cast<size_t>(c)]) * cw.weights[static_cast<size_t>(c)];
    CHECK(std::fabs(sum - static_cast<double>(cw.total)) <= 1e-12 * static_cast<double>(cw.total));
  }
}

TEST_CASE("class_weights: missing class is named in the error") {
  std::vector<int> labels{0, 0, 1, 3};
  CHECK_THROWS_WITH_AS(class_weights(labels), doctest::Contains("face"), DataError);
}

TEST_CASE("fuse_logits: zero auxiliary is the identity; ties break to the lowest index") {
  Logits lb{1, 2, 3, 4};
  CHECK(fuse_logits(lb, {0, 0, 0, 0}) == lb);
  CHECK(argmax_class(fuse_logits(lb, {0, 0, 0, 0})) == argmax_class(lb));

  Logits sum = fuse_logits({1, 2, 3, 4}, {4, 3, 2, 1});
  CHECK(sum == Logits{5, 5, 5, 5});
  CHECK(argmax_class(sum) == 0);

  Logits corrected = fuse_logits({2, 0, 0, 0}, {0, 0, 0, 3});
  CHECK(corrected == Logits{2, 0, 0, 3});
  CHECK(argmax_class(corrected) == 3);
}

TEST_CASE("fuse_logits: commutative; constant shifts never change the argmax") {
  Rng rng(7);
  for (int rep = 0; rep < 1000; ++rep) {
    Logits a, b;
    for (int j = 0; j < 4; ++j) {
      a[static_cast<size_t>(j)] = rng.uniform(-5, 5);
      b[static_cast<size_t>(j)] = rng.uniform(-5, 5);
    }
    CHECK(fuse_logits(a, b) == fuse_logits(b, a));
    const int base = argmax_class(fuse_logits(a, b));
    const double shift = rng.uniform(-10, 10);
    Logits a_shift = a, b_shift = b;
    for (int j = 0; j < 4; ++j) a_shift[static_cast<size_t>(j)] += shift;
    CHECK(argmax_class(fuse_logits(a_shift, b)) == base);
    for (int j = 0; j < 4; ++j) b_shift[static_cast<size_t>(j)] += shift;
    CHECK(argmax_class(fuse_logits(a, b_shift)) == base);
  }
}

namespace {

struct StageFixture {
  PhantomData data;
  VoxelGridSeries denoised;
  Dataset ds;
  std::vector<int64_t> train_idx;
  BackboneConfig bcfg;
  nn::ParamStore backbone;

  static StageFixture make(uint64_t seed) {
    StageFixture fx;
    PhantomSpec spec;
    spec.n_per_class = {24, 24, 24, 24};
    spec.grid_dims = {16, 16, 16};
    spec.frames = 32;
    spec.rng_seed = seed;
    fx.data = generate_phantom(spec);
    fx.denoised = denoise(fx.data.grid, fx.data.mask);
    fx.ds = build_dataset(fx.data.bundle, &fx.denoised, &fx.data.mask, {});
    for (int64_t i = 0; i < fx.ds.size(); ++i) fx.train_idx.push_back(i);
    OptimConfig oc;
    oc.epochs = 2;
    oc.batch_size = 96;
    fx.bcfg.kind = BackboneKind::tractcloud;
    fx.backbone = pretrain_backbone(fx.bcfg, fx.ds, fx.train_idx, oc, 77);
    return fx;
  }
};

}  // namespace

TEST_CASE("train_stage2: backbone parameter bytes are untouched for every strategy/variant") {
  auto fx = StageFixture::make(21);
  OptimConfig oc;
  oc.chunk = 32;
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
    fc.batch_size = 96;
    auto fused = train_stage2(fx.backbone, fx.bcfg, fx.ds, fx.train_idx, fc, oc, 99);
    for (const auto& g : fx.backbone.groups) {
      const auto& copy = fused.find(g.name);
      CHECK(copy.frozen);
      REQUIRE(copy.values.size() == g.values.size());
      CHECK(std::memcmp(copy.values.data(), g.values.data(), g.values.size() * sizeof(double)) == 0);
    }
    // And the fused model actually produces logits on held-out rows.
    auto logits = fused_infer_logits(fused, fx.bcfg, fc, fx.ds, fx.train_idx, oc);
    CHECK(logits.rows == fx.ds.size());
    for (double v : logits.data) CHECK(std::isfinite(v));
  }
}

TEST_CASE("train_stage2: variant none with zero auxiliary reproduces baseline predictions exactly") {
  auto fx = StageFixture::make(23);
  OptimConfig oc;
  FusionConfig fc;
  fc.variant = AuxVariant::none;
  fc.strategy = FusionStrategy::logits_add;
  auto fused = train_stage2(fx.backbone, fx.bcfg, fx.ds, fx.train_idx, fc, oc, 5);
  auto fused_logits = fused_infer_logits(fused, fx.bcfg, fc, fx.ds, fx.train_idx, oc);
  auto baseline = backbone_infer(fx.backbone, fx.bcfg, fx.ds, fx.train_idx, oc, false).logits;
  REQUIRE(fused_logits.rows == baseline.rows);
  for (int64_t i = 0; i < baseline.rows; ++i) {
    CHECK(argmax_class(fused_logits.row(i)) == argmax_class(baseline.row(i)));
    for (int j = 0; j < 4; ++j) CHECK(fused_logits.at(i, j) == baseline.at(i, j));
  }
}

TEST_CASE("train_stage2: concat requires an auxiliary variant") {
  FusionConfig fc;
  fc.strategy = FusionStrategy::concat;
  fc.variant = AuxVariant::none;
  CHECK_THROWS_AS(fc.validate(), UsageError);
}

TEST_CASE("train_stage2: losses decrease and stay finite on the ambiguous pair") {
  auto fx = StageFixture::make(29);
  OptimConfig oc;
  FusionConfig fc;
  fc.variant = AuxVariant::full;
  fc.strategy = FusionStrategy::logits_add;
  fc.epochs = 4;
  fc.batch_size = 96;
  std::vector<double> losses;
  auto fused = train_stage2(fx.backbone, fx.bcfg, fx.ds, fx.train_idx, fc, oc, 31, &losses);
  REQUIRE(losses.size() == 4);
  for (double l : losses) CHECK(std::isfinite(l));
  CHECK(losses.back() <= losses.front());
}

TEST_CASE("stage-2 checkpoint round-trips with model kind and config intact") {
  auto fx = StageFixture::make(33);
  OptimConfig oc;
  FusionConfig fc;
  fc.variant = AuxVariant::fmri_only;
  fc.epochs = 1;
  fc.batch_size = 96;
  auto fused = train_stage2(fx.backbone, fx.bcfg, fx.ds, fx.train_idx, fc, oc, 3);
  // Byte-identical logits from a store copy (pure function of parameters).
  auto logits1 = fused_infer_logits(fused, fx.bcfg, fc, fx.ds, fx.train_idx, oc);
  nn::ParamStore copy = fused;
  auto logits2 = fused_infer_logits(copy, fx.bcfg, fc, fx.ds, fx.train_idx, oc);
  CHECK(std::memcmp(logits1.data.data(), logits2.data.data(), logits1.data.size() * sizeof(double)) == 0);
}
