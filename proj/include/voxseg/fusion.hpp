#pragma once

#include <array>

#include "voxseg/errors.hpp"
#include "voxseg/inference.hpp"
#include "voxseg/morphology.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// Final multi-class map: 4 = enhancing, 1 = necrotic core, 2 = edema.
using SegmentationMap = LabelGrid;

struct FusionConfig {
  double threshold = 0.5;
  double min_cluster_frac = 0.1;
};

inline void validate_fusion_config(const FusionConfig& cfg) {
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw InvalidSpec("fusion threshold must lie in (0, 1)");
  if (cfg.min_cluster_frac < 0.0 || cfg.min_cluster_frac >= 1.0)
    throw InvalidSpec("min_cluster_frac must lie in [0, 1)");
}

inline LabelGrid binarize(const Volume3& prob, double threshold) {
  LabelGrid out(prob.dim[0], prob.dim[1], prob.dim[2], 0);
  for (int a = 0; a < 3; ++a) out.spacing[a] = prob.spacing[a];
  for (size_t i = 0; i < prob.data.size(); ++i) out.data[i] = prob.data[i] >= threshold ? 1 : 0;
  return out;
}

inline std::array<LabelGrid, 3> binarize(const RegionProbMaps& maps, double threshold) {
  return {binarize(maps.wt, threshold), binarize(maps.tc, threshold), binarize(maps.en, threshold)};
}

namespace detail {

inline void check_congruent_regions(const LabelGrid& wt, const LabelGrid& tc, const LabelGrid& en) {
  if (!wt.same_shape(tc) || !wt.same_shape(en)) throw ShapeMismatch("fuse: region map shapes differ");
}

// ENC = enhancing voxels, NEC = core minus enhancing, PTE = whole minus core.
// Assumes en <= tc <= wt voxelwise.
inline SegmentationMap assemble_labels(const LabelGrid& wt, const LabelGrid& tc, const LabelGrid& en) {
  SegmentationMap out(wt.dim[0], wt.dim[1], wt.dim[2], 0);
  for (int a = 0; a < 3; ++a) out.spacing[a] = wt.spacing[a];
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (en.data[i])
      out.data[i] = 4;
    else if (tc.data[i])
      out.data[i] = 1;
    else if (wt.data[i])
      out.data[i] = 2;
  }
  return out;
}

}  // namespace detail

// Hierarchy by intersection only; no morphological cleanup.
inline SegmentationMap fuse_naive(const LabelGrid& wt, const LabelGrid& tc, const LabelGrid& en) {
  detail::check_congruent_regions(wt, tc, en);
  LabelGrid tc2 = tc, en2 = en;
  for (size_t i = 0; i < tc2.data.size(); ++i) {
    tc2.data[i] = (tc2.data[i] && wt.data[i]) ? 1 : 0;
    en2.data[i] = (en2.data[i] && tc2.data[i]) ? 1 : 0;
  }
  return detail::assemble_labels(wt, tc2, en2);
}

// Full pipeline: clean the whole-tumor map (fill holes, drop small clusters),
// reconcile the core against it (clip, but restore core components that lie
// wholly outside and are too large to be noise), fill core holes, clip the
// enhancing map, then assemble labels.
inline SegmentationMap fuse_full(const LabelGrid& wt_in, const LabelGrid& tc_in, const LabelGrid& en_in,
                                 const FusionConfig& cfg = {}) {
  detail::check_congruent_regions(wt_in, tc_in, en_in);
  validate_fusion_config(cfg);

  LabelGrid wt = remove_small_clusters(fill_holes(wt_in), cfg.min_cluster_frac);

  ComponentSet tc_comps = connected_components(tc_in, 26);
  index_t largest_tc = 0;
  for (index_t s : tc_comps.sizes) largest_tc = std::max(largest_tc, s);

  // which core components overlap the cleaned whole-tumor map?
  std::vector<uint8_t> touches(tc_comps.sizes.size(), 0);
  for (size_t i = 0; i < wt.data.size(); ++i)
    if (tc_comps.labels.data[i] > 0 && wt.data[i]) touches[static_cast<size_t>(tc_comps.labels.data[i] - 1)] = 1;

  LabelGrid tc(tc_in.dim[0], tc_in.dim[1], tc_in.dim[2], 0);
  for (int a = 0; a < 3; ++a) tc.spacing[a] = tc_in.spacing[a];
  const double restore_cutoff = cfg.min_cluster_frac * static_cast<double>(largest_tc);
  for (size_t i = 0; i < tc.data.size(); ++i) {
    const int32_t lab = tc_comps.labels.data[i];
    if (lab <= 0) continue;
    if (touches[static_cast<size_t>(lab - 1)]) {
      tc.data[i] = wt.data[i];  // clip to the whole-tumor map
    } else if (static_cast<double>(tc_comps.sizes[static_cast<size_t>(lab - 1)]) > restore_cutoff) {
      tc.data[i] = 1;  // isolated but substantial: keep rather than under-segment
      wt.data[i] = 1;
    }
  }
  tc = fill_holes(tc);
  for (size_t i = 0; i < wt.data.size(); ++i) wt.data[i] |= tc.data[i];  // core holes stay inside the whole map

  LabelGrid en = en_in;
  for (size_t i = 0; i < en.data.size(); ++i) en.data[i] = (en.data[i] && tc.data[i]) ? 1 : 0;
  return detail::assemble_labels(wt, tc, en);
}

}  // namespace voxseg
