#pragma once

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "voxseg/augment.hpp"
#include "voxseg/dataset.hpp"
#include "voxseg/fusion.hpp"
#include "voxseg/network.hpp"
#include "voxseg/optimizer.hpp"
#include "voxseg/phantom.hpp"

namespace voxseg {

// One file drives the whole pipeline. Sections mirror the module configs;
// unknown sections or keys are hard errors so a typo can't silently fall back
// to a default. Missing keys keep their defaults.
struct RunConfig {
  std::string data_dir;
  std::string output_dir = ".";
  ModalitySuffixes suffixes;
  NetworkSpec network;
  TrainConfig train;
  index_t segment = 96;  // training crop extent
  AugmentConfig augment;
  bool augment_enabled = true;
  index_t window = 96;
  index_t stride = 0;  // 0: half the window
  bool tta = true;
  FusionConfig fusion;
  std::string fusion_mode = "full";
  PhantomSpec phantom;
  uint64_t seed = 0;
};

namespace detail {

inline std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct ConfigValue {
  std::string key, raw;
  int line;

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("line " + std::to_string(line) + ": " + key + ": " + why);
  }
  double as_double() const {
    char* end = nullptr;
    const double v = std::strtod(raw.c_str(), &end);
    if (end != raw.c_str() + raw.size() || raw.empty()) fail("expected a number, got \"" + raw + "\"");
    return v;
  }
  int64_t as_int() const {
    const double v = as_double();
    const int64_t i = static_cast<int64_t>(v);
    if (static_cast<double>(i) != v) fail("expected an integer, got \"" + raw + "\"");
    return i;
  }
  uint64_t as_seed() const {
    const int64_t v = as_int();
    if (v < 0) fail("seed must be non-negative");
    return static_cast<uint64_t>(v);
  }
  bool as_bool() const {
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    fail("expected a boolean, got \"" + raw + "\"");
  }
};

inline Variant parse_variant(const ConfigValue& v) {
  for (Variant cand : {Variant::E1D3, Variant::E1D1, Variant::E1D1Wide, Variant::E1D3Ens})
    if (v.raw == variant_name(cand)) return cand;
  v.fail("unknown variant \"" + v.raw + "\" (e1d3, e1d1, e1d1_wide, e1d3_ens)");
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in, const std::string& origin = "config") {
  RunConfig cfg;
  bool phantom_seed_set = false;
  std::string section, line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = detail::strip(line);
    if (text.empty() || text[0] == '#' || text[0] == ';') continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      section = detail::strip(text.substr(1, text.size() - 2));
      static const char* known[] = {"paths", "network", "train", "augment", "inference", "fusion", "phantom"};
      if (std::find_if(std::begin(known), std::end(known),
                       [&](const char* s) { return section == s; }) == std::end(known))
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got \"" + text + "\"");
    const detail::ConfigValue v{detail::strip(text.substr(0, eq)), detail::strip(text.substr(eq + 1)), line_no};
    const std::string& k = v.key;

    if (section.empty()) {
      if (k == "seed")
        cfg.seed = v.as_seed();
      else
        v.fail("unknown top-level key (only \"seed\" may precede the first section)");
    } else if (section == "paths") {
      if (k == "data_dir") cfg.data_dir = v.raw;
      else if (k == "output_dir") cfg.output_dir = v.raw;
      else if (k == "t1_suffix") cfg.suffixes.t1 = v.raw;
      else if (k == "t1ce_suffix") cfg.suffixes.t1ce = v.raw;
      else if (k == "t2_suffix") cfg.suffixes.t2 = v.raw;
      else if (k == "flair_suffix") cfg.suffixes.flair = v.raw;
      else if (k == "seg_suffix") cfg.suffixes.seg = v.raw;
      else v.fail("unknown key in [paths]");
    } else if (section == "network") {
      if (k == "variant") cfg.network.variant = detail::parse_variant(v);
      else if (k == "in_channels") cfg.network.in_channels = v.as_int();
      else if (k == "levels") cfg.network.levels = v.as_int();
      else if (k == "base_width") cfg.network.base_width = v.as_int();
      else if (k == "width_cap") cfg.network.width_cap = v.as_int();
      else v.fail("unknown key in [network]");
    } else if (section == "train") {
      if (k == "eta0") cfg.train.eta0 = v.as_double();
      else if (k == "t_max") cfg.train.t_max = v.as_int();
      else if (k == "momentum") cfg.train.momentum = v.as_double();
      else if (k == "weight_decay") cfg.train.weight_decay = v.as_double();
      else if (k == "batch_size") cfg.train.batch_size = v.as_int();
      else if (k == "steps_per_epoch") cfg.train.steps_per_epoch = v.as_int();
      else if (k == "dice_epsilon") cfg.train.dice_epsilon = v.as_double();
      else if (k == "segment") cfg.segment = v.as_int();
      else v.fail("unknown key in [train]");
    } else if (section == "augment") {
      if (k == "enabled") cfg.augment_enabled = v.as_bool();
      else if (k == "distort_prob") cfg.augment.distort_prob = v.as_double();
      else if (k == "per_op_prob") cfg.augment.per_op_prob = v.as_double();
      else if (k == "rotation_deg") cfg.augment.rotation_deg = v.as_double();
      else if (k == "scale_min") cfg.augment.scale_min = v.as_double();
      else if (k == "scale_max") cfg.augment.scale_max = v.as_double();
      else if (k == "elastic_grid") cfg.augment.elastic_grid = v.as_int();
      else if (k == "elastic_max_disp") cfg.augment.elastic_max_disp = v.as_double();
      else if (k == "log_gamma") cfg.augment.log_gamma = v.as_double();
      else v.fail("unknown key in [augment]");
    } else if (section == "inference") {
      if (k == "window") cfg.window = v.as_int();
      else if (k == "stride") cfg.stride = v.as_int();
      else if (k == "tta") cfg.tta = v.as_bool();
      else v.fail("unknown key in [inference]");
    } else if (section == "fusion") {
      if (k == "mode") {
        if (v.raw != "full" && v.raw != "naive") v.fail("mode must be full or naive");
        cfg.fusion_mode = v.raw;
      } else if (k == "threshold") cfg.fusion.threshold = v.as_double();
      else if (k == "min_cluster_frac") cfg.fusion.min_cluster_frac = v.as_double();
      else v.fail("unknown key in [fusion]");
    } else {  // phantom
      if (k == "shape") {
        cfg.phantom.shape[0] = cfg.phantom.shape[1] = cfg.phantom.shape[2] = v.as_int();
      } else if (k == "count") cfg.phantom.count = static_cast<int>(v.as_int());
      else if (k == "brain_min") cfg.phantom.brain_frac[0] = v.as_double();
      else if (k == "brain_max") cfg.phantom.brain_frac[1] = v.as_double();
      else if (k == "wt_min") cfg.phantom.wt_frac[0] = v.as_double();
      else if (k == "wt_max") cfg.phantom.wt_frac[1] = v.as_double();
      else if (k == "tc_min") cfg.phantom.tc_frac[0] = v.as_double();
      else if (k == "tc_max") cfg.phantom.tc_frac[1] = v.as_double();
      else if (k == "en_min") cfg.phantom.en_frac[0] = v.as_double();
      else if (k == "en_max") cfg.phantom.en_frac[1] = v.as_double();
      else if (k == "center_jitter") cfg.phantom.center_jitter = v.as_double();
      else if (k == "noise") cfg.phantom.noise = v.as_double();
      else if (k == "seed") {
        cfg.phantom.seed = v.as_seed();
        phantom_seed_set = true;
      } else v.fail("unknown key in [phantom]");
    }
  }
  if (in.bad()) throw IoFailure("read failed: " + origin);
  cfg.train.seed = cfg.seed;
  if (!phantom_seed_set) cfg.phantom.seed = cfg.seed;
  if (cfg.stride == 0) cfg.stride = std::max<index_t>(1, cfg.window / 2);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config " + path);
  return parse_run_config(in, path);
}

inline void validate_run_config(const RunConfig& cfg) {
  validate_spec(cfg.network);
  validate_train_config(cfg.train);
  validate_augment_config(cfg.augment);
  validate_fusion_config(cfg.fusion);
  validate_phantom_spec(cfg.phantom);
  if (cfg.segment < 1) throw InvalidSpec("config: segment extent must be positive");
  if (cfg.window < 1) throw InvalidSpec("config: inference window must be positive");
  if (cfg.stride < 1 || cfg.stride > cfg.window)
    throw InvalidSpec("config: stride must lie in [1, window]");
}

}  // namespace voxseg
