#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voxseg/checkpoint.hpp"
#include "voxseg/config.hpp"
#include "voxseg/inference.hpp"
#include "voxseg/metrics.hpp"
#include "voxseg/train.hpp"

namespace voxseg {
namespace cli {

inline SegmentationMap fuse_maps(const LabelGrid& wt, const LabelGrid& tc, const LabelGrid& en,
                                 const std::string& mode, const FusionConfig& cfg) {
  return mode == "naive" ? fuse_naive(wt, tc, en) : fuse_full(wt, tc, en, cfg);
}

inline int cmd_phantom(const std::string& config_path) {
  RunConfig cfg = load_run_config(config_path);
  validate_run_config(cfg);
  if (cfg.data_dir.empty()) throw ConfigError("phantom: [paths] data_dir must be set");
  make_phantoms(cfg.phantom, cfg.data_dir);
  std::printf("wrote %d phantom subjects to %s\n", cfg.phantom.count, cfg.data_dir.c_str());
  return 0;
}

inline int cmd_split(const std::string& ids_path, int k, uint64_t seed) {
  std::vector<std::string> ids;
  if (std::filesystem::is_directory(ids_path)) {
    ids = list_subjects(ids_path);
  } else {
    std::ifstream in(ids_path);
    if (!in) throw IoFailure("cannot open id list " + ids_path);
    std::string line;
    while (std::getline(in, line)) {
      const std::string id = detail::strip(line);
      if (!id.empty()) ids.push_back(id);
    }
  }
  const auto folds = kfold_split(ids, k, seed);
  for (size_t f = 0; f < folds.size(); ++f)
    for (const std::string& id : folds[f]) std::printf("%zu,%s\n", f, id.c_str());
  return 0;
}

inline int cmd_train(const std::string& config_path) {
  RunConfig cfg = load_run_config(config_path);
  validate_run_config(cfg);

  std::vector<LabeledVolume> subjects;
  for (const std::string& id : list_subjects(cfg.data_dir)) {
    LabeledVolume v = load_subject((std::filesystem::path(cfg.data_dir) / id).string(), cfg.suffixes);
    if (!v.labels) throw MissingModality(id + ": training requires a segmentation");
    normalize_volume(v);
    subjects.push_back(std::move(v));
  }
  if (subjects.empty()) throw TooFewSubjects("no subjects under " + cfg.data_dir);
  std::printf("training on %zu subjects\n", subjects.size());

  const NetworkPlan plan = make_plan(cfg.network);
  NetworkState state = init_network(plan, Rng(cfg.seed).split("init").next_u64());

  const index_t segment = cfg.segment;
  const bool use_augment = cfg.augment_enabled;
  const AugmentConfig aug = cfg.augment;
  const auto* pool = &subjects;
  SampleSource source = [pool, segment, use_augment, aug](Rng& rng) {
    const LabeledVolume& v = (*pool)[rng.uniform_int(pool->size())];
    SegmentPair pair = sample_segment(v, segment, rng);
    return use_augment ? augment(pair, rng, aug) : pair;
  };

  std::filesystem::create_directories(cfg.output_dir);
  const std::string log_path = (std::filesystem::path(cfg.output_dir) / "train_log.tsv").string();
  std::ofstream log(log_path);
  if (!log) throw IoFailure("cannot create " + log_path);
  const std::string ckpt_path = (std::filesystem::path(cfg.output_dir) / "checkpoint.bin").string();

  train(
      plan, state, cfg.train, source,
      [&log](const LossReport& r, double lr, int64_t epoch) { log << format_log_line(r, lr, epoch) << "\n"; },
      [&](int64_t epoch, const NetworkState& s) {
        save_checkpoint(ckpt_path, plan, s);
        if (epoch > 0) std::printf("epoch %lld done\n", static_cast<long long>(epoch));
      });
  if (!log.flush()) throw IoFailure("write failed: " + log_path);
  std::printf("checkpoint: %s\nlog: %s\n", ckpt_path.c_str(), log_path.c_str());
  return 0;
}

inline RegionProbMaps infer_subject(const RunConfig& cfg, const NetworkPlan& plan, const NetworkState& state,
                                    const LabeledVolume& v, bool tta) {
  const std::array<index_t, 3> w = {cfg.window, cfg.window, cfg.window};
  const std::array<index_t, 3> s = {cfg.stride, cfg.stride, cfg.stride};
  const BoundingBox box = pad_box_to_window(brain_bbox(v.brain_mask), w);
  const TilePlan plan_tiles_for_box = plan_tiles(box, w, s);
  const RegionModel model = make_region_model(plan, state);
  return tta ? predict_with_tta(model, v, plan_tiles_for_box) : predict_volume(model, v, plan_tiles_for_box);
}

inline int cmd_infer(const std::string& config_path, const std::string& checkpoint_path,
                     const std::string& subject_dir, int tta_on, int tta_off, const std::string& fusion_override,
                     bool save_probs) {
  RunConfig cfg = load_run_config(config_path);
  validate_run_config(cfg);
  if (tta_on) cfg.tta = true;
  if (tta_off) cfg.tta = false;
  if (!fusion_override.empty()) cfg.fusion_mode = fusion_override;

  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const NetworkPlan plan = make_plan(ck.spec);
  const NetworkState state = restore_network(plan, ck);

  LabeledVolume v = load_subject(subject_dir, cfg.suffixes);
  const NiftiHeader* base = v.header ? &*v.header : nullptr;
  const std::string id = std::filesystem::path(subject_dir).filename().string();
  normalize_volume(v);

  const RegionProbMaps maps = infer_subject(cfg, plan, state, v, cfg.tta);
  std::filesystem::create_directories(cfg.output_dir);
  const std::filesystem::path out(cfg.output_dir);
  if (save_probs) {
    const char* names[3] = {"_prob_wt", "_prob_tc", "_prob_en"};
    for (int r = 0; r < 3; ++r)
      write_nifti(maps.map(static_cast<Region>(r)), (out / (id + names[r] + ".nii.gz")).string(),
                  nifti_type::kFloat32, base);
  }
  const auto masks = binarize(maps, cfg.fusion.threshold);
  const SegmentationMap seg = fuse_maps(masks[0], masks[1], masks[2], cfg.fusion_mode, cfg.fusion);
  const std::string pred_path = (out / (id + "_pred.nii.gz")).string();
  write_nifti(seg, pred_path, base);
  std::printf("%s\n", pred_path.c_str());
  return 0;
}

inline int cmd_fuse(const std::string& wt_path, const std::string& tc_path, const std::string& en_path,
                    const std::string& mode, const std::string& out_path, double threshold) {
  FusionConfig cfg;
  cfg.threshold = threshold;
  const NiftiVolume wt_vol = read_nifti(wt_path);
  const LabelGrid wt = binarize(wt_vol.image, threshold);
  const LabelGrid tc = binarize(read_nifti(tc_path).image, threshold);
  const LabelGrid en = binarize(read_nifti(en_path).image, threshold);
  write_nifti(fuse_maps(wt, tc, en, mode, cfg), out_path, &wt_vol.header);
  std::printf("%s\n", out_path.c_str());
  return 0;
}

struct LabelFileSet {
  std::map<std::string, std::string> all;     // id -> path, _pred/_seg tails stripped
  std::map<std::string, std::string> tagged;  // only files that carried a _pred tail
};

// Accepts flat directories of label maps and dataset roots with per-subject
// folders; ids are basenames with the extension and a _pred/_seg tail removed.
inline LabelFileSet collect_label_files(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoFailure("directory missing: " + root);
  LabelFileSet out;
  auto consider = [&out](const fs::path& p) {
    std::string name = p.filename().string();
    for (const char* ext : {".nii.gz", ".nii"})
      if (detail::ends_with(name, ext)) {
        name.resize(name.size() - std::string(ext).size());
        // probability maps written by `infer --save-probs` are not label maps
        for (const char* prob : {"_prob_wt", "_prob_tc", "_prob_en"})
          if (detail::ends_with(name, prob)) return;
        bool pred_tagged = false;
        for (const char* tail : {"_pred", "_seg"}) {
          const std::string t(tail);
          if (name.size() > t.size() && name.compare(name.size() - t.size(), t.size(), t) == 0) {
            name.resize(name.size() - t.size());
            pred_tagged = t == "_pred";
          }
        }
        out.all[name] = p.string();
        if (pred_tagged) out.tagged[name] = p.string();
        return;
      }
  };
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_regular_file()) consider(entry.path());
    if (entry.is_directory())
      for (const auto& sub : fs::directory_iterator(entry.path()))
        if (sub.is_regular_file()) consider(sub.path());
  }
  return out;
}

inline int cmd_evaluate(const std::string& pred_dir, const std::string& ref_dir, const std::string& csv_path) {
  // when the directory holds _pred-tagged maps, score exactly those; scratch
  // files written next to them (a fuse output, say) are then ignored
  const LabelFileSet pred_set = collect_label_files(pred_dir);
  const auto& preds = pred_set.tagged.empty() ? pred_set.all : pred_set.tagged;
  const auto refs = collect_label_files(ref_dir).all;
  if (preds.empty()) throw IoFailure("no label maps under " + pred_dir);

  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path);
    if (!csv) throw IoFailure("cannot create " + csv_path);
  }
  auto emit = [&csv](const std::string& line) {
    std::printf("%s\n", line.c_str());
    if (csv.is_open()) csv << line << "\n";
  };
  emit(metric_csv_header());
  for (const auto& [id, path] : preds) {
    const auto ref = refs.find(id);
    if (ref == refs.end()) throw IoFailure("no reference segmentation for " + id);
    const MetricReport report = evaluate(read_labels(path), read_labels(ref->second));
    emit(metric_csv_row(id, report));
  }
  if (csv.is_open() && !csv.flush()) throw IoFailure("write failed: " + csv_path);
  return 0;
}

}  // namespace cli

inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"hierarchical-region volumetric segmentation pipeline"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, subject_dir, ids_path;
  std::string wt_path, tc_path, en_path, pred_dir, ref_dir;
  std::string mode = "full", fuse_out = "fused_seg.nii.gz", csv_path, fusion_override;
  double threshold = 0.5;
  int k = 5;
  uint64_t seed = 0;
  bool save_probs = false;

  CLI::App* train = app.add_subcommand("train", "fit a network from a config file");
  train->add_option("config", config_path, "run config")->required();

  CLI::App* infer = app.add_subcommand("infer", "segment one subject with a trained checkpoint");
  infer->add_option("config", config_path, "run config")->required();
  infer->add_option("--checkpoint", checkpoint_path, "trained weights")->required();
  infer->add_option("--subject", subject_dir, "subject directory")->required();
  CLI::Option* tta_on = infer->add_flag("--tta", "force flip averaging on");
  CLI::Option* tta_off = infer->add_flag("--no-tta", "force flip averaging off");
  tta_on->excludes(tta_off);
  infer->add_option("--fusion", fusion_override, "override fusion mode")->check(CLI::IsMember({"full", "naive"}));
  infer->add_flag("--save-probs", save_probs, "also write the three region probability maps");

  CLI::App* fuse = app.add_subcommand("fuse", "combine three region maps into one label map");
  fuse->add_option("wt", wt_path, "whole-region map")->required();
  fuse->add_option("tc", tc_path, "core-region map")->required();
  fuse->add_option("en", en_path, "enhancing-region map")->required();
  fuse->add_option("--mode", mode, "full or naive")->check(CLI::IsMember({"full", "naive"}));
  fuse->add_option("--out", fuse_out, "output path");
  fuse->add_option("--threshold", threshold, "probability cutoff");

  CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions against references");
  evaluate->add_option("pred_dir", pred_dir, "predicted label maps")->required();
  evaluate->add_option("ref_dir", ref_dir, "reference label maps")->required();
  evaluate->add_option("--csv", csv_path, "also write rows to this file");

  CLI::App* phantom = app.add_subcommand("phantom", "generate a synthetic dataset");
  phantom->add_option("config", config_path, "run config")->required();

  CLI::App* split = app.add_subcommand("split", "deal subject ids into folds");
  split->add_option("ids", ids_path, "id list file or dataset directory")->required();
  split->add_option("--k", k, "fold count");
  split->add_option("--seed", seed, "shuffle seed");

  std::vector<const char*> argv{"voxseg"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cli::cmd_train(config_path);
    if (infer->parsed())
      return cli::cmd_infer(config_path, checkpoint_path, subject_dir, static_cast<int>(tta_on->count()),
                            static_cast<int>(tta_off->count()), fusion_override, save_probs);
    if (fuse->parsed()) return cli::cmd_fuse(wt_path, tc_path, en_path, mode, fuse_out, threshold);
    if (evaluate->parsed()) return cli::cmd_evaluate(pred_dir, ref_dir, csv_path);
    if (phantom->parsed()) return cli::cmd_phantom(config_path);
    if (split->parsed()) return cli::cmd_split(ids_path, k, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace voxseg
