// tractfusion: dual-stream dMRI+fMRI streamline classification toolkit.
//
// Subcommands cover the full pipeline: phantom data generation, BOLD
// denoising, backbone pretraining, frozen-backbone fusion training,
// fold-wise evaluation, the ablation matrix, inference, and the PCA
// endpoint-signal emitter.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tractfusion/common.hpp"
#include "tractfusion/dataset.hpp"
#include "tractfusion/eval.hpp"
#include "tractfusion/fusion.hpp"
#include "tractfusion/io.hpp"
#include "tractfusion/phantom.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tractfusion;

namespace {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void emit_summary(const json& j) { std::cout << j.dump() << std::endl; }

struct DataPaths {
  std::string streamlines;
  std::string grid;
  std::string mask;

  static DataPaths in_dir(const std::string& dir) {
    DataPaths p;
    p.streamlines = (fs::path(dir) / "streamlines.jsonl").string();
    p.grid = (fs::path(dir) / "grid.json").string();
    p.mask = (fs::path(dir) / "mask.json").string();
    return p;
  }
};

struct DataOptions {
  std::string dir;
  bool no_denoise = false;
  DenoiseParams denoise_params;
  DatasetOptions dataset_opts;
};

Dataset load_dataset(const DataOptions& opt, bool need_signals, std::string* hash_out = nullptr) {
  const auto paths = DataPaths::in_dir(opt.dir);
  auto bundle = io::read_streamlines_jsonl(paths.streamlines);
  uint64_t h = io::hash_file(paths.streamlines);
  if (!need_signals) {
    if (hash_out) *hash_out = hex64(h);
    return build_dataset(bundle, nullptr, nullptr, opt.dataset_opts);
  }
  auto grid = io::read_grid(paths.grid);
  auto mask = io::read_mask(paths.mask);
  h = io::hash_file(io::raw_sibling(paths.grid), h);
  h = io::hash_file(io::raw_sibling(paths.mask), h);
  if (hash_out) *hash_out = hex64(h);
  if (!opt.no_denoise) grid = denoise(grid, mask, opt.denoise_params);
  return build_dataset(bundle, &grid, &mask, opt.dataset_opts);
}

PhantomSpec phantom_spec_from_json(const json& j) {
  PhantomSpec spec;
  if (j.contains("n_per_class")) {
    const auto& a = j.at("n_per_class");
    if (!a.is_array() || a.size() != 4) throw DataError("phantom spec: n_per_class must be a 4-element array");
    for (int c = 0; c < 4; ++c) spec.n_per_class[static_cast<size_t>(c)] = a.at(static_cast<size_t>(c)).get<int64_t>();
  }
  if (j.contains("grid_dims")) {
    const auto& a = j.at("grid_dims");
    if (!a.is_array() || a.size() != 3) throw DataError("phantom spec: grid_dims must be a 3-element array");
    for (int c = 0; c < 3; ++c) spec.grid_dims[static_cast<size_t>(c)] = a.at(static_cast<size_t>(c)).get<int64_t>();
  }
  spec.voxel_size_mm = j.value("voxel_size_mm", spec.voxel_size_mm);
  spec.tr_s = j.value("tr_s", spec.tr_s);
  spec.frames = j.value("frames", spec.frames);
  spec.geometric_overlap = j.value("geometric_overlap", spec.geometric_overlap);
  spec.activation_snr = j.value("activation_snr", spec.activation_snr);
  spec.drift_amplitude = j.value("drift_amplitude", spec.drift_amplitude);
  spec.rng_seed = j.value("rng_seed", spec.rng_seed);
  spec.curve_points = j.value("curve_points", spec.curve_points);
  return spec;
}

json phantom_spec_to_json(const PhantomSpec& spec) {
  return {{"n_per_class", spec.n_per_class},
          {"grid_dims", spec.grid_dims},
          {"voxel_size_mm", spec.voxel_size_mm},
          {"tr_s", spec.tr_s},
          {"frames", spec.frames},
          {"geometric_overlap", spec.geometric_overlap},
          {"activation_snr", spec.activation_snr},
          {"drift_amplitude", spec.drift_amplitude},
          {"rng_seed", spec.rng_seed},
          {"curve_points", spec.curve_points}};
}

json fusion_config_to_json(const FusionConfig& fc) {
  return {{"strategy", to_string(fc.strategy)}, {"backbone", to_string(fc.backbone_kind)},   {"variant", to_string(fc.variant)},
          {"untied_encoders", fc.untied_encoders}, {"epochs", fc.epochs}, {"batch_size", fc.batch_size}, {"lr", fc.lr}};
}

FusionConfig fusion_config_from_json(const json& j) {
  FusionConfig fc;
  fc.strategy = fusion_strategy_from_string(j.value("strategy", "logits_add"));
  fc.backbone_kind = backbone_kind_from_string(j.value("backbone", "tractcloud"));
  fc.variant = aux_variant_from_string(j.value("variant", "full"));
  fc.untied_encoders = j.value("untied_encoders", false);
  fc.epochs = j.value("epochs", int64_t{20});
  fc.batch_size = j.value("batch_size", int64_t{512});
  fc.lr = j.value("lr", 1e-4);
  return fc;
}

std::vector<int64_t> all_rows(const Dataset& ds) {
  std::vector<int64_t> idx(static_cast<size_t>(ds.size()));
  for (int64_t i = 0; i < ds.size(); ++i) idx[static_cast<size_t>(i)] = i;
  return idx;
}

// Evaluates a checkpoint (stage-1 backbone or stage-2 fused) fold-wise.
json eval_checkpoint(const io::Checkpoint& ck, const Dataset& ds, int64_t k_folds, uint64_t seed, const OptimConfig& oc,
                     const std::string& dataset_hash) {
  if (!ds.fully_labeled()) throw DataError("eval: dataset must be fully labeled");
  BackboneConfig bcfg;
  bcfg.points = ds.points;
  bcfg.neighbors = ds.k_neighbors;
  FusionConfig fc;
  bool fused = ck.model_kind == "fused";
  if (fused) {
    fc = fusion_config_from_json(ck.extra);
    bcfg.kind = fc.backbone_kind;
  } else {
    bcfg.kind = backbone_kind_from_string(ck.model_kind);
    fc.backbone_kind = bcfg.kind;
    fc.variant = AuxVariant::none;
  }
  const auto folds = kfold_split(ds.labels, k_folds, seed);
  RunResult run;
  run.spec = {bcfg.kind, fc.variant, fc.strategy};
  for (size_t f = 0; f < folds.size(); ++f) {
    const auto& idx = folds[f];
    std::vector<int> truth;
    for (int64_t i : idx) truth.push_back(ds.labels[static_cast<size_t>(i)]);
    nn::Matrix logits = fused_infer_logits(ck.store, bcfg, fc, ds, idx, oc);
    run.folds.push_back(make_fold_report(static_cast<int64_t>(f), confusion_from_logits(logits, truth)));
  }
  finalize_run_stats(run);
  ExperimentMatrix m;
  m.runs.push_back(run);
  m.seed = seed;
  m.dataset_hash = dataset_hash;
  return experiment_matrix_json(m);
}

// JSON config file with flag overrides: entries named like the long options
// ("seed": 7, "epochs": 10) become trailing arguments unless the flag was
// given explicitly, so the command line always wins.
std::vector<std::string> apply_config_file(int argc, char** argv) {
  std::vector<std::string> args;
  std::string config_path;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      config_path = argv[++i];
      continue;
    }
    if (a.rfind("--config=", 0) == 0) {
      config_path = a.substr(9);
      continue;
    }
    args.push_back(a);
  }
  if (config_path.empty()) return args;
  std::ifstream f(config_path);
  if (!f) throw UsageError("cannot open config file: " + config_path);
  json cfg;
  try {
    f >> cfg;
  } catch (const json::exception& e) {
    throw DataError("config file: invalid JSON: " + std::string(e.what()));
  }
  if (!cfg.is_object()) throw DataError("config file: expected a JSON object of flag values");
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    if (given) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else {
      args.push_back(flag);
      args.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  return args;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"dual-stream dMRI+fMRI streamline classification"};
  app.require_subcommand(1);
  app.fallthrough(true);

  uint64_t seed = 42;
  int threads = 1;
  bool no_timestamp = false;
  app.add_option("--seed", seed, "global RNG seed; every stochastic component derives a named substream");
  app.add_option("--threads", threads,
                 "worker threads inside a training step (default 1; results are byte-identical for any value)");
  app.add_flag("--no-timestamp", no_timestamp, "omit the timestamp field from outputs");
  std::string config_doc;  // consumed before parsing; present for --help
  app.add_option("--config", config_doc, "JSON config file whose entries act as flag defaults");
  app.set_help_all_flag("--help-all", "expanded help for every subcommand");

  // ---- phantom ----
  auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic labeled bundle with paired BOLD grid");
  std::string phantom_spec_path, phantom_out;
  cmd_phantom->add_option("--spec", phantom_spec_path, "phantom spec JSON (missing fields take defaults)");
  cmd_phantom->add_option("--out", phantom_out, "output directory")->required();

  // ---- denoise ----
  auto* cmd_denoise = app.add_subcommand("denoise", "run the composite filtering chain on a grid");
  std::string dn_grid, dn_mask, dn_out;
  DenoiseParams dn_params;
  cmd_denoise->add_option("--grid", dn_grid, "grid header JSON")->required();
  cmd_denoise->add_option("--mask", dn_mask, "mask header JSON")->required();
  cmd_denoise->add_option("--out", dn_out, "output grid header JSON")->required();
  cmd_denoise->add_option("--fwhm", dn_params.fwhm_mm, "Gaussian FWHM in mm");
  cmd_denoise->add_option("--highpass", dn_params.highpass_hz, "high-pass cutoff in Hz");
  cmd_denoise->add_option("--radius", dn_params.boxcar_radius, "boxcar radius in voxels");

  // ---- shared data options ----
  auto add_data_options = [](CLI::App* cmd, DataOptions& d) {
    cmd->add_option("--data", d.dir, "dataset directory (streamlines.jsonl, grid.json, mask.json)")->required();
    cmd->add_flag("--no-denoise", d.no_denoise, "grid is already denoised; skip the in-memory chain");
    cmd->add_option("--fwhm", d.denoise_params.fwhm_mm, "Gaussian FWHM in mm");
    cmd->add_option("--highpass", d.denoise_params.highpass_hz, "high-pass cutoff in Hz");
    cmd->add_option("--radius", d.denoise_params.boxcar_radius, "boxcar radius in voxels");
    cmd->add_option("--points", d.dataset_opts.points, "resampled points per streamline");
    cmd->add_option("--neighbors", d.dataset_opts.k_neighbors, "nearest neighbors per streamline");
  };

  // ---- pretrain ----
  auto* cmd_pretrain = app.add_subcommand("pretrain", "stage 1: train a geometric backbone alone");
  DataOptions pre_data;
  add_data_options(cmd_pretrain, pre_data);
  std::string pre_backbone = "tractcloud", pre_out;
  int64_t pre_epochs = 30, pre_batch = 512;
  double pre_lr = 1e-4;
  cmd_pretrain->add_option("--backbone", pre_backbone, "tractcloud|pointnet");
  cmd_pretrain->add_option("--out", pre_out, "checkpoint manifest path")->required();
  cmd_pretrain->add_option("--epochs", pre_epochs, "training epochs");
  cmd_pretrain->add_option("--batch", pre_batch, "batch size");
  cmd_pretrain->add_option("--lr", pre_lr, "Adam learning rate");

  // ---- train (stage 2) ----
  auto* cmd_train = app.add_subcommand("train", "stage 2: frozen backbone + trainable auxiliary pathway");
  DataOptions tr_data;
  add_data_options(cmd_train, tr_data);
  std::string tr_ckpt, tr_out, tr_variant = "full", tr_strategy = "logits_add";
  int64_t tr_epochs = 20, tr_batch = 512;
  double tr_lr = 1e-4;
  bool tr_untied = false;
  cmd_train->add_option("--backbone-ckpt", tr_ckpt, "stage-1 checkpoint manifest")->required();
  cmd_train->add_option("--variant", tr_variant, "full|endpoint_only|fmri_only");
  cmd_train->add_option("--strategy", tr_strategy, "logits_add|concat");
  cmd_train->add_option("--out", tr_out, "fused checkpoint manifest path")->required();
  cmd_train->add_option("--epochs", tr_epochs, "stage-2 epochs");
  cmd_train->add_option("--batch", tr_batch, "batch size");
  cmd_train->add_option("--lr", tr_lr, "Adam learning rate");
  cmd_train->add_flag("--untied-encoders", tr_untied, "untie the two endpoint CNN encoders (non-default)");

  // ---- eval ----
  auto* cmd_eval = app.add_subcommand("eval", "fold-wise evaluation of a checkpoint");
  DataOptions ev_data;
  add_data_options(cmd_eval, ev_data);
  std::string ev_ckpt, ev_out;
  int64_t ev_folds = 5;
  cmd_eval->add_option("--ckpt", ev_ckpt, "checkpoint manifest (stage-1 or stage-2)")->required();
  cmd_eval->add_option("--folds", ev_folds, "number of folds");
  cmd_eval->add_option("--out", ev_out, "report JSON path")->required();

  // ---- ablate ----
  auto* cmd_ablate = app.add_subcommand("ablate", "full Table-1-style matrix: 5 configurations x 2 backbones");
  DataOptions ab_data;
  add_data_options(cmd_ablate, ab_data);
  std::string ab_out;
  MatrixOptions ab_opt;
  cmd_ablate->add_option("--out", ab_out, "report JSON path")->required();
  cmd_ablate->add_option("--folds", ab_opt.folds, "cross-validation folds");
  cmd_ablate->add_option("--stage1-epochs", ab_opt.stage1_epochs, "backbone pretraining epochs");
  cmd_ablate->add_option("--stage2-epochs", ab_opt.stage2_epochs, "fusion training epochs");
  cmd_ablate->add_option("--batch", ab_opt.batch_size, "batch size");
  cmd_ablate->add_option("--lr", ab_opt.lr, "Adam learning rate");
  cmd_ablate->add_option("--jobs", ab_opt.jobs, "parallel (backbone, fold) jobs");

  // ---- infer ----
  auto* cmd_infer = app.add_subcommand("infer", "per-streamline predictions and final logits");
  DataOptions in_data;
  add_data_options(cmd_infer, in_data);
  std::string in_ckpt, in_out;
  cmd_infer->add_option("--ckpt", in_ckpt, "checkpoint manifest (stage-1 or stage-2)")->required();
  cmd_infer->add_option("--out", in_out, "output JSONL path")->required();

  // ---- pca-endpoints ----
  auto* cmd_pca = app.add_subcommand("pca-endpoints", "3-component PCA of endpoint signals, CSV");
  DataOptions pc_data;
  add_data_options(cmd_pca, pc_data);
  std::string pc_out;
  cmd_pca->add_option("--out", pc_out, "output CSV path")->required();

  auto args = apply_config_file(argc, argv);
  std::reverse(args.begin(), args.end());  // CLI11 consumes the vector form back to front
  app.parse(args);

  OptimConfig base_oc;
  base_oc.threads = threads;

  if (cmd_phantom->parsed()) {
    PhantomSpec spec;
    if (!phantom_spec_path.empty()) {
      json j;
      std::ifstream f(phantom_spec_path);
      if (!f) throw UsageError("cannot open phantom spec: " + phantom_spec_path);
      try {
        f >> j;
      } catch (const json::exception& e) {
        throw DataError("phantom spec: invalid JSON: " + std::string(e.what()));
      }
      spec = phantom_spec_from_json(j);
    }
    if (app.count("--seed") > 0) spec.rng_seed = seed;
    auto data = generate_phantom(spec);
    fs::create_directories(phantom_out);
    const auto paths = DataPaths::in_dir(phantom_out);
    io::write_streamlines_jsonl(paths.streamlines, data.bundle);
    json prov = {{"spec", phantom_spec_to_json(spec)}, {"class_frequencies_hz", data.class_frequencies_hz}};
    if (!no_timestamp) prov["generated_at"] = utc_timestamp();
    io::write_grid(paths.grid, data.grid, prov);
    io::write_mask(paths.mask, data.mask);
    std::ofstream((fs::path(phantom_out) / "provenance.json").string()) << prov.dump(2) << "\n";
    emit_summary({{"command", "phantom"},
                  {"out", phantom_out},
                  {"streamlines", data.bundle.size()},
                  {"grid_dims", spec.grid_dims},
                  {"frames", spec.frames},
                  {"mask_voxels", data.mask.count()}});
    return 0;
  }

  if (cmd_denoise->parsed()) {
    auto grid = io::read_grid(dn_grid);
    auto mask = io::read_mask(dn_mask);
    auto out = denoise(grid, mask, dn_params);
    json prov = {{"denoise", {{"fwhm_mm", dn_params.fwhm_mm}, {"highpass_hz", dn_params.highpass_hz}, {"boxcar_radius", dn_params.boxcar_radius}}},
                 {"source", dn_grid}};
    if (!no_timestamp) prov["generated_at"] = utc_timestamp();
    io::write_grid(dn_out, out, prov);
    emit_summary({{"command", "denoise"}, {"out", dn_out}, {"fwhm_mm", dn_params.fwhm_mm}, {"highpass_hz", dn_params.highpass_hz},
                  {"boxcar_radius", dn_params.boxcar_radius}});
    return 0;
  }

  if (cmd_pretrain->parsed()) {
    const BackboneKind kind = backbone_kind_from_string(pre_backbone);
    auto ds = load_dataset(pre_data, false);
    if (!ds.fully_labeled()) throw DataError("pretrain: dataset must be fully labeled");
    OptimConfig oc = base_oc;
    oc.epochs = pre_epochs;
    oc.batch_size = pre_batch;
    oc.lr = pre_lr;
    BackboneConfig bcfg;
    bcfg.kind = kind;
    bcfg.points = ds.points;
    bcfg.neighbors = ds.k_neighbors;
    std::vector<double> losses;
    auto store = pretrain_backbone(bcfg, ds, all_rows(ds), oc, seed, &losses);
    json extra = {{"backbone", to_string(kind)}, {"points", ds.points}, {"neighbors", ds.k_neighbors},
                  {"epochs", pre_epochs},        {"batch_size", pre_batch}, {"lr", pre_lr}, {"seed", seed}};
    if (!no_timestamp) extra["generated_at"] = utc_timestamp();
    io::write_checkpoint(pre_out, store, to_string(kind), extra);
    emit_summary({{"command", "pretrain"}, {"out", pre_out}, {"backbone", to_string(kind)}, {"epochs", pre_epochs},
                  {"final_loss", losses.empty() ? 0.0 : losses.back()}});
    return 0;
  }

  if (cmd_train->parsed()) {
    FusionConfig fc;
    fc.strategy = fusion_strategy_from_string(tr_strategy);
    fc.variant = aux_variant_from_string(tr_variant);
    fc.untied_encoders = tr_untied;
    fc.epochs = tr_epochs;
    fc.batch_size = tr_batch;
    fc.lr = tr_lr;
    fc.validate();
    auto ck = io::read_checkpoint(tr_ckpt);
    if (ck.model_kind != "tractcloud" && ck.model_kind != "pointnet")
      throw DataError("train: --backbone-ckpt must be a stage-1 checkpoint, got model kind '" + ck.model_kind + "'");
    fc.backbone_kind = backbone_kind_from_string(ck.model_kind);
    const bool needs_signals = fc.variant == AuxVariant::full || fc.variant == AuxVariant::fmri_only;
    auto ds = load_dataset(tr_data, needs_signals);
    if (!ds.fully_labeled()) throw DataError("train: dataset must be fully labeled");
    BackboneConfig bcfg;
    bcfg.kind = fc.backbone_kind;
    bcfg.points = ds.points;
    bcfg.neighbors = ds.k_neighbors;
    OptimConfig oc = base_oc;
    std::vector<double> losses;
    auto fused = train_stage2(ck.store, bcfg, ds, all_rows(ds), fc, oc, seed, &losses);
    json extra = fusion_config_to_json(fc);
    extra["seed"] = seed;
    extra["stage1_ckpt"] = tr_ckpt;
    if (!no_timestamp) extra["generated_at"] = utc_timestamp();
    io::write_checkpoint(tr_out, fused, "fused", extra);
    emit_summary({{"command", "train"}, {"out", tr_out}, {"variant", tr_variant}, {"strategy", tr_strategy},
                  {"final_loss", losses.empty() ? 0.0 : losses.back()}});
    return 0;
  }

  if (cmd_eval->parsed()) {
    auto ck = io::read_checkpoint(ev_ckpt);
    const bool needs_signals =
        ck.model_kind == "fused" && aux_variant_from_string(ck.extra.value("variant", "none")) != AuxVariant::none &&
        aux_variant_from_string(ck.extra.value("variant", "none")) != AuxVariant::endpoint_only;
    std::string hash;
    auto ds = load_dataset(ev_data, needs_signals, &hash);
    json report = eval_checkpoint(ck, ds, ev_folds, seed, base_oc, hash);
    if (!no_timestamp) report["generated_at"] = utc_timestamp();
    std::ofstream(ev_out) << report.dump(2) << "\n";
    emit_summary({{"command", "eval"}, {"out", ev_out}, {"folds", ev_folds},
                  {"mean_f1", report["runs"][0]["mean_f1"]}, {"std_f1", report["runs"][0]["std_f1"]}});
    return 0;
  }

  if (cmd_ablate->parsed()) {
    std::string hash;
    auto ds = load_dataset(ab_data, true, &hash);
    ab_opt.seed = seed;
    ab_opt.threads = threads;
    auto result = run_matrix(ds, table1_runs(), ab_opt, hash);
    json report = experiment_matrix_json(result);
    if (!no_timestamp) report["generated_at"] = utc_timestamp();
    std::ofstream(ab_out) << report.dump(2) << "\n";
    emit_summary({{"command", "ablate"}, {"out", ab_out}, {"runs", result.runs.size()}, {"folds", ab_opt.folds}, {"seed", seed}});
    return 0;
  }

  if (cmd_infer->parsed()) {
    auto ck = io::read_checkpoint(in_ckpt);
    BackboneConfig bcfg;
    FusionConfig fc;
    if (ck.model_kind == "fused") {
      fc = fusion_config_from_json(ck.extra);
      bcfg.kind = fc.backbone_kind;
    } else {
      bcfg.kind = backbone_kind_from_string(ck.model_kind);
      fc.backbone_kind = bcfg.kind;
      fc.variant = AuxVariant::none;
    }
    const bool needs_signals = fc.variant == AuxVariant::full || fc.variant == AuxVariant::fmri_only;
    auto ds = load_dataset(in_data, needs_signals);
    bcfg.points = ds.points;
    bcfg.neighbors = ds.k_neighbors;
    auto idx = all_rows(ds);
    auto logits = fused_infer_logits(ck.store, bcfg, fc, ds, idx, base_oc);
    std::ofstream out(in_out);
    if (!out) throw DataError("cannot open for writing: " + in_out);
    for (int64_t i = 0; i < logits.rows; ++i) {
      json line = {{"id", ds.ids[static_cast<size_t>(i)]},
                   {"label", argmax_class(logits.row(i))},
                   {"logits", {logits.at(i, 0), logits.at(i, 1), logits.at(i, 2), logits.at(i, 3)}}};
      out << line.dump() << "\n";
    }
    emit_summary({{"command", "infer"}, {"out", in_out}, {"streamlines", logits.rows}});
    return 0;
  }

  if (cmd_pca->parsed()) {
    auto ds = load_dataset(pc_data, true);
    auto proj = pca_endpoint_projection(ds);
    std::ofstream out(pc_out);
    if (!out) throw DataError("cannot open for writing: " + pc_out);
    out << "id,label,pc1,pc2,pc3\n";
    char buf[160];
    for (size_t i = 0; i < proj.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g,%.17g,%.17g\n", static_cast<long long>(ds.ids[i]), ds.labels[i], proj[i][0],
                    proj[i][1], proj[i][2]);
      out << buf;
    }
    emit_summary({{"command", "pca-endpoints"}, {"out", pc_out}, {"streamlines", proj.size()}});
    return 0;
  }

  throw UsageError("no subcommand given");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::cerr << json{{"error", e.what()}, {"code", 1}}.dump() << std::endl;
    return 1;
  } catch (const UsageError& e) {
    std::cerr << json{{"error", e.what()}, {"code", 1}}.dump() << std::endl;
    return 1;
  } catch (const DataError& e) {
    std::cerr << json{{"error", e.what()}, {"code", 2}}.dump() << std::endl;
    return 2;
  } catch (const NumericError& e) {
    std::cerr << json{{"error", e.what()}, {"code", 3}}.dump() << std::endl;
    return 3;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"code", 2}}.dump() << std::endl;
    return 2;
  }
}
