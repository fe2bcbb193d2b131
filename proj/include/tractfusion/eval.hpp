#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <future>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tractfusion/common.hpp"
#include "tractfusion/dataset.hpp"
#include "tractfusion/fusion.hpp"

namespace tractfusion {

// ---------------------------------------------------------------------------
// Confusion matrix and weighted F1 (support-weighted mean of per-class F1).
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
  std::array<std::array<int64_t, 4>, 4> m{};  // rows = true, cols = predicted

  void add(int truth, int pred) {
    if (truth < 0 || truth >= kNumClasses || pred < 0 || pred >= kNumClasses) throw DataError("confusion: class out of range");
    ++m[static_cast<size_t>(truth)][static_cast<size_t>(pred)];
  }
  int64_t total() const {
    int64_t t = 0;
    for (const auto& row : m)
      for (int64_t v : row) t += v;
    return t;
  }
  int64_t support(int c) const {
    int64_t t = 0;
    for (int64_t v : m[static_cast<size_t>(c)]) t += v;
    return t;
  }
};

struct ClassScores {
  std::array<double, 4> precision{};
  std::array<double, 4> recall{};
  std::array<double, 4> f1{};
};

inline ClassScores per_class_scores(const ConfusionMatrix& cm) {
  ClassScores s;
  for (int c = 0; c < kNumClasses; ++c) {
    int64_t tp = cm.m[static_cast<size_t>(c)][static_cast<size_t>(c)];
    int64_t pred_c = 0, true_c = 0;
    for (int r = 0; r < kNumClasses; ++r) {
      pred_c += cm.m[static_cast<size_t>(r)][static_cast<size_t>(c)];
      true_c += cm.m[static_cast<size_t>(c)][static_cast<size_t>(r)];
    }
    const double p = pred_c > 0 ? static_cast<double>(tp) / static_cast<double>(pred_c) : 0.0;
    const double r = true_c > 0 ? static_cast<double>(tp) / static_cast<double>(true_c) : 0.0;
    s.precision[static_cast<size_t>(c)] = p;
    s.recall[static_cast<size_t>(c)] = r;
    s.f1[static_cast<size_t>(c)] = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return s;
}

inline double weighted_f1(const ConfusionMatrix& cm) {
  const auto s = per_class_scores(cm);
  const int64_t total = cm.total();
  if (total == 0) throw DataError("weighted_f1: empty confusion matrix");
  double acc = 0.0;
  for (int c = 0; c < kNumClasses; ++c)
    acc += s.f1[static_cast<size_t>(c)] * static_cast<double>(cm.support(c)) / static_cast<double>(total);
  return acc;
}

struct FoldReport {
  int64_t fold = 0;
  ConfusionMatrix confusion;
  ClassScores scores;
  double weighted_f1 = 0.0;
  int64_t samples = 0;
};

inline FoldReport make_fold_report(int64_t fold, const ConfusionMatrix& cm) {
  FoldReport r;
  r.fold = fold;
  r.confusion = cm;
  r.scores = per_class_scores(cm);
  r.weighted_f1 = weighted_f1(cm);
  r.samples = cm.total();
  return r;
}

// ---------------------------------------------------------------------------
// Stratified k-fold split: per class, a seeded shuffle dealt round-robin, so
// folds are disjoint, exhaustive, and balanced within +-1 per class.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<int64_t>> kfold_split(const std::vector<int>& labels, int64_t k, uint64_t seed) {
  if (k < 2) throw UsageError("kfold: need k >= 2");
  if (static_cast<int64_t>(labels.size()) < k) throw DataError("kfold: fewer samples than folds");
  std::array<std::vector<int64_t>, 4> by_class;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses) throw DataError("kfold: label out of range");
    by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int64_t>(i));
  }
  Rng root(seed);
  std::vector<std::vector<int64_t>> folds(static_cast<size_t>(k));
  for (int c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[static_cast<size_t>(c)];
    Rng r = root.stream("kfold.class", static_cast<uint64_t>(c));
    r.shuffle(idx);
    for (size_t i = 0; i < idx.size(); ++i) folds[i % static_cast<size_t>(k)].push_back(idx[i]);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

inline std::vector<int64_t> fold_complement(const std::vector<std::vector<int64_t>>& folds, size_t held_out) {
  std::vector<int64_t> train;
  for (size_t f = 0; f < folds.size(); ++f)
    if (f != held_out) train.insert(train.end(), folds[f].begin(), folds[f].end());
  std::sort(train.begin(), train.end());
  return train;
}

// ---------------------------------------------------------------------------
// Experiment matrix: the Table-1 configuration grid at phantom scale. The
// backbone is re-pretrained per fold; within a fold every configuration
// shares that stage-1 checkpoint (stage 1 does not depend on the auxiliary
// configuration).
// ---------------------------------------------------------------------------

struct RunSpec {
  BackboneKind backbone = BackboneKind::tractcloud;
  AuxVariant variant = AuxVariant::none;
  FusionStrategy strategy = FusionStrategy::logits_add;

  bool baseline() const { return variant == AuxVariant::none; }
  std::string label() const {
    if (baseline()) return to_string(backbone) + "+baseline";
    return to_string(backbone) + "+" + to_string(variant) + "+" + to_string(strategy);
  }
};

inline std::vector<RunSpec> table1_runs() {
  std::vector<RunSpec> runs;
  for (BackboneKind kind : {BackboneKind::pointnet, BackboneKind::tractcloud}) {
    runs.push_back({kind, AuxVariant::none, FusionStrategy::logits_add});
    runs.push_back({kind, AuxVariant::endpoint_only, FusionStrategy::logits_add});
    runs.push_back({kind, AuxVariant::fmri_only, FusionStrategy::logits_add});
    runs.push_back({kind, AuxVariant::full, FusionStrategy::concat});
    runs.push_back({kind, AuxVariant::full, FusionStrategy::logits_add});
  }
  return runs;
}

struct RunResult {
  RunSpec spec;
  std::vector<FoldReport> folds;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;  // population std over folds
};

struct MatrixOptions {
  int64_t folds = 5;
  uint64_t seed = 42;
  int64_t stage1_epochs = 30;
  int64_t stage2_epochs = 20;
  int64_t batch_size = 512;
  double lr = 1e-4;
  int64_t chunk = 64;
  int threads = 1;  // worker threads inside a training step
  int jobs = 1;     // parallel (backbone, fold) jobs
};

struct ExperimentMatrix {
  std::vector<RunResult> runs;
  uint64_t seed = 0;
  std::string dataset_hash;
};

inline void finalize_run_stats(RunResult& run) {
  double mean = 0.0;
  for (const auto& f : run.folds) mean += f.weighted_f1;
  mean /= static_cast<double>(run.folds.size());
  double var = 0.0;
  for (const auto& f : run.folds) var += (f.weighted_f1 - mean) * (f.weighted_f1 - mean);
  var /= static_cast<double>(run.folds.size());
  run.mean_f1 = mean;
  run.std_f1 = std::sqrt(var);
}

inline ConfusionMatrix confusion_from_logits(const nn::Matrix& logits, const std::vector<int>& truth) {
  ConfusionMatrix cm;
  for (int64_t i = 0; i < logits.rows; ++i) cm.add(truth[static_cast<size_t>(i)], argmax_class(logits.row(i)));
  return cm;
}

inline ExperimentMatrix run_matrix(const Dataset& ds, const std::vector<RunSpec>& specs, const MatrixOptions& opt,
                                   const std::string& dataset_hash = "") {
  if (!ds.fully_labeled()) throw DataError("run_matrix: dataset must be fully labeled");
  const auto folds = kfold_split(ds.labels, opt.folds, opt.seed);

  ExperimentMatrix result;
  result.seed = opt.seed;
  result.dataset_hash = dataset_hash;
  result.runs.resize(specs.size());
  for (size_t r = 0; r < specs.size(); ++r) {
    result.runs[r].spec = specs[r];
    result.runs[r].folds.resize(static_cast<size_t>(opt.folds));
  }

  // Job = (backbone, fold): one stage-1 pretrain shared by every spec with
  // that backbone, then per-spec stage 2 + held-out evaluation.
  std::vector<BackboneKind> kinds;
  for (const auto& s : specs)
    if (std::find(kinds.begin(), kinds.end(), s.backbone) == kinds.end()) kinds.push_back(s.backbone);

  struct Job {
    BackboneKind kind;
    int64_t fold;
  };
  std::vector<Job> jobs;
  for (BackboneKind kind : kinds)
    for (int64_t f = 0; f < opt.folds; ++f) jobs.push_back({kind, f});

  OptimConfig stage1;
  stage1.epochs = opt.stage1_epochs;
  stage1.batch_size = opt.batch_size;
  stage1.lr = opt.lr;
  stage1.chunk = opt.chunk;
  stage1.threads = opt.threads;

  auto run_job = [&](const Job& job) {
    const auto train_idx = fold_complement(folds, static_cast<size_t>(job.fold));
    const auto& eval_idx = folds[static_cast<size_t>(job.fold)];
    std::vector<int> truth;
    truth.reserve(eval_idx.size());
    for (int64_t i : eval_idx) truth.push_back(ds.labels[static_cast<size_t>(i)]);

    BackboneConfig bcfg;
    bcfg.kind = job.kind;
    bcfg.points = ds.points;
    bcfg.neighbors = ds.k_neighbors;
    const uint64_t stage1_seed = fnv1a64(to_string(job.kind) + ".stage1." + std::to_string(job.fold)) ^ opt.seed;
    const nn::ParamStore backbone_store = pretrain_backbone(bcfg, ds, train_idx, stage1, stage1_seed);

    for (size_t r = 0; r < specs.size(); ++r) {
      const RunSpec& spec = specs[r];
      if (spec.backbone != job.kind) continue;
      FusionConfig fc;
      fc.strategy = spec.strategy;
      fc.backbone_kind = spec.backbone;
      fc.variant = spec.variant;
      fc.epochs = opt.stage2_epochs;
      fc.batch_size = opt.batch_size;
      fc.lr = opt.lr;
      nn::Matrix logits;
      if (spec.baseline()) {
        logits = backbone_infer(backbone_store, bcfg, ds, eval_idx, stage1, false).logits;
      } else {
        const uint64_t stage2_seed = fnv1a64(spec.label() + ".stage2." + std::to_string(job.fold)) ^ opt.seed;
        const nn::ParamStore fused = train_stage2(backbone_store, bcfg, ds, train_idx, fc, stage1, stage2_seed);
        logits = fused_infer_logits(fused, bcfg, fc, ds, eval_idx, stage1);
      }
      result.runs[r].folds[static_cast<size_t>(job.fold)] = make_fold_report(job.fold, confusion_from_logits(logits, truth));
    }
  };

  if (opt.jobs <= 1) {
    for (const auto& job : jobs) run_job(job);
  } else {
    // Fixed job list, bounded concurrency; each job writes disjoint slots.
    std::vector<std::future<void>> inflight;
    size_t next = 0;
    const size_t width = static_cast<size_t>(opt.jobs);
    while (next < jobs.size() || !inflight.empty()) {
      while (next < jobs.size() && inflight.size() < width) {
        const Job job = jobs[next++];
        inflight.push_back(std::async(std::launch::async, [&run_job, job] { run_job(job); }));
      }
      inflight.front().get();
      inflight.erase(inflight.begin());
    }
  }

  for (auto& run : result.runs) finalize_run_stats(run);
  return result;
}

// ---------------------------------------------------------------------------
// Report serialization.
// ---------------------------------------------------------------------------

inline nlohmann::json fold_report_json(const FoldReport& f) {
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : f.confusion.m) confusion.push_back(row);
  return {{"fold", f.fold},
          {"f1", f.weighted_f1},
          {"samples", f.samples},
          {"per_class_f1", f.scores.f1},
          {"confusion", std::move(confusion)}};
}

inline nlohmann::json experiment_matrix_json(const ExperimentMatrix& m) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : m.runs) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : run.folds) folds.push_back(fold_report_json(f));
    runs.push_back({{"backbone", to_string(run.spec.backbone)},
                    {"variant", to_string(run.spec.variant)},
                    {"strategy", run.spec.baseline() ? "none" : to_string(run.spec.strategy)},
                    {"folds", std::move(folds)},
                    {"mean_f1", run.mean_f1},
                    {"std_f1", run.std_f1}});
  }
  return {{"runs", std::move(runs)}, {"seed", m.seed}, {"dataset_hash", m.dataset_hash}};
}

// ---------------------------------------------------------------------------
// PCA projection of endpoint signals (3 components) for external plotting.
// Deterministic: plain Jacobi eigensolver on the covariance, eigenvector
// sign fixed by the largest-magnitude component.
// ---------------------------------------------------------------------------

inline std::vector<std::array<double, 3>> pca_endpoint_projection(const Dataset& ds) {
  if (!ds.has_signals()) throw DataError("pca: dataset has no endpoint signals");
  const int64_t n = ds.size();
  const int64_t dim = 2 * ds.frames;
  nn::Matrix x(n, dim);
  for (int64_t i = 0; i < n; ++i) {
    std::copy(ds.sig_a.row(i), ds.sig_a.row(i) + ds.frames, x.row(i));
    std::copy(ds.sig_b.row(i), ds.sig_b.row(i) + ds.frames, x.row(i) + ds.frames);
  }
  std::vector<double> mean(static_cast<size_t>(dim), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < dim; ++j) mean[static_cast<size_t>(j)] += x.at(i, j);
  for (auto& v : mean) v /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < dim; ++j) x.at(i, j) -= mean[static_cast<size_t>(j)];

  // Covariance (dim x dim).
  nn::Matrix cov(dim, dim);
  nn::gemm_tn(x, x, cov);
  for (auto& v : cov.data) v /= static_cast<double>(std::max<int64_t>(1, n - 1));

  // Cyclic Jacobi sweeps.
  nn::Matrix vecs(dim, dim);
  for (int64_t i = 0; i < dim; ++i) vecs.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 50; ++sweep) {
    double off = 0.0;
    for (int64_t p = 0; p < dim; ++p)
      for (int64_t q = p + 1; q < dim; ++q) off += cov.at(p, q) * cov.at(p, q);
    if (off < 1e-18) break;
    for (int64_t p = 0; p < dim; ++p)
      for (int64_t q = p + 1; q < dim; ++q) {
        const double apq = cov.at(p, q);
        if (std::fabs(apq) < 1e-14) continue;
        const double app = cov.at(p, p), aqq = cov.at(q, q);
        const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
        const double c = std::cos(theta), s = std::sin(theta);
        for (int64_t k = 0; k < dim; ++k) {
          const double akp = cov.at(k, p), akq = cov.at(k, q);
          cov.at(k, p) = c * akp - s * akq;
          cov.at(k, q) = s * akp + c * akq;
        }
        for (int64_t k = 0; k < dim; ++k) {
          const double apk = cov.at(p, k), aqk = cov.at(q, k);
          cov.at(p, k) = c * apk - s * aqk;
          cov.at(q, k) = s * apk + c * aqk;
        }
        for (int64_t k = 0; k < dim; ++k) {
          const double vkp = vecs.at(k, p), vkq = vecs.at(k, q);
          vecs.at(k, p) = c * vkp - s * vkq;
          vecs.at(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::pair<double, int64_t>> eig;
  for (int64_t j = 0; j < dim; ++j) eig.emplace_back(cov.at(j, j), j);
  std::sort(eig.begin(), eig.end(), [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });

  std::array<std::vector<double>, 3> comp;
  for (int c = 0; c < 3; ++c) {
    auto& v = comp[static_cast<size_t>(c)];
    v.resize(static_cast<size_t>(dim));
    const int64_t j = eig[static_cast<size_t>(c)].second;
    int64_t maxk = 0;
    for (int64_t k = 0; k < dim; ++k) {
      v[static_cast<size_t>(k)] = vecs.at(k, j);
      if (std::fabs(v[static_cast<size_t>(k)]) > std::fabs(v[static_cast<size_t>(maxk)])) maxk = k;
    }
    if (v[static_cast<size_t>(maxk)] < 0.0)
      for (auto& vk : v) vk = -vk;
  }
  std::vector<std::array<double, 3>> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      double dot = 0.0;
      for (int64_t k = 0; k < dim; ++k) dot += x.at(i, k) * comp[static_cast<size_t>(c)][static_cast<size_t>(k)];
      out[static_cast<size_t>(i)][static_cast<size_t>(c)] = dot;
    }
  return out;
}

}  // namespace tractfusion
