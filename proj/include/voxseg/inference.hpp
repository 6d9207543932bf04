#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "voxseg/errors.hpp"
#include "voxseg/network.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// Whole-volume probability fields for the three nested regions.
struct RegionProbMaps {
  Volume3 wt, tc, en;

  Volume3& map(Region r) { return r == Region::WholeTumor ? wt : (r == Region::TumorCore ? tc : en); }
  const Volume3& map(Region r) const { return r == Region::WholeTumor ? wt : (r == Region::TumorCore ? tc : en); }
};

inline RegionProbMaps make_region_maps(const index_t dim[3], const double spacing[3]) {
  RegionProbMaps maps;
  for (Volume3* m : {&maps.wt, &maps.tc, &maps.en}) {
    *m = Volume3(dim[0], dim[1], dim[2], 0.0);
    for (int a = 0; a < 3; ++a) m->spacing[a] = spacing[a];
  }
  return maps;
}

// Window placements covering a bounding box: origins advance by `stride`
// along each axis and the final window is clamped to end at the box edge.
struct TilePlan {
  std::array<index_t, 3> window{96, 96, 96};
  std::array<index_t, 3> stride{48, 48, 48};
  std::vector<std::array<index_t, 3>> origins;
};

namespace detail {

inline std::vector<index_t> tile_axis(index_t lower, index_t extent, index_t window, index_t stride) {
  std::vector<index_t> out;
  for (index_t pos = 0;; pos += stride) {
    out.push_back(lower + std::min(pos, extent - window));
    if (pos + window >= extent) break;
  }
  return out;
}

}  // namespace detail

inline TilePlan plan_tiles(const BoundingBox& box, const std::array<index_t, 3>& window,
                           const std::array<index_t, 3>& stride) {
  for (int a = 0; a < 3; ++a) {
    if (window[a] < 1 || stride[a] < 1) throw InvalidSpec("plan_tiles: window and stride must be positive");
    if (stride[a] > window[a]) throw InvalidSpec("plan_tiles: stride larger than window leaves coverage gaps");
    if (box.extent(a) < window[a]) throw WindowTooLarge("plan_tiles: window exceeds box extent; pad the box first");
  }
  TilePlan plan;
  plan.window = window;
  plan.stride = stride;
  std::vector<index_t> axis[3];
  for (int a = 0; a < 3; ++a) axis[a] = detail::tile_axis(box.lower[a], box.extent(a), window[a], stride[a]);
  for (index_t z : axis[0])
    for (index_t y : axis[1])
      for (index_t x : axis[2]) plan.origins.push_back({z, y, x});
  return plan;
}

// Widens the box symmetrically along any axis narrower than the window. The
// padded box may overhang the volume; window extraction zero-fills there.
inline BoundingBox pad_box_to_window(const BoundingBox& box, const std::array<index_t, 3>& window) {
  BoundingBox out = box;
  for (int a = 0; a < 3; ++a) {
    const index_t deficit = window[a] - box.extent(a);
    if (deficit > 0) {
      out.lower[a] = box.lower[a] - deficit / 2;
      out.upper[a] = out.lower[a] + window[a];
    }
  }
  return out;
}

// Brain-box tiling with the default half-window overlap.
inline TilePlan plan_for_volume(const LabeledVolume& v, index_t window_extent = 96) {
  const std::array<index_t, 3> window{window_extent, window_extent, window_extent};
  const std::array<index_t, 3> stride{std::max<index_t>(1, window_extent / 2), std::max<index_t>(1, window_extent / 2),
                                      std::max<index_t>(1, window_extent / 2)};
  return plan_tiles(pad_box_to_window(brain_bbox(v.brain_mask), window), window, stride);
}

// A window predictor: multi-channel input block -> (1, 3, d, h, w) region
// probabilities ordered whole/core/enhancing.
using RegionModel = std::function<Tensor5(const Tensor5&)>;

// Collapses the network heads of one forward pass to region probabilities.
// Two-class variants read each head's foreground channel directly; four-class
// variants average their heads and sum class probabilities per region.
inline Tensor5 reduce_to_regions(const NetworkPlan& plan, const ForwardTrace& tr) {
  const Tensor5& first = head_output(plan, tr, 0);
  Tensor5 out(1, 3, first.d, first.h, first.w);
  const index_t vox = first.voxels();
  if (plan.spec.head_classes() == 2) {
    for (index_t r = 0; r < 3; ++r) {
      const Tensor5& head = head_output(plan, tr, r);
      const double* fg = head.channel(0, 1);
      double* dst = out.channel(0, r);
      for (index_t i = 0; i < vox; ++i) dst[i] = std::clamp(fg[i], 0.0, 1.0);
    }
    return out;
  }
  const index_t heads = plan.spec.num_heads();
  const double inv_heads = 1.0 / static_cast<double>(heads);
  // class channels 1..3 carry labels 1, 2, 4
  for (index_t i = 0; i < vox; ++i) {
    double p1 = 0, p2 = 0, p4 = 0;
    for (index_t h = 0; h < heads; ++h) {
      const Tensor5& head = head_output(plan, tr, h);
      p1 += head.channel(0, 1)[i];
      p2 += head.channel(0, 2)[i];
      p4 += head.channel(0, 3)[i];
    }
    p1 *= inv_heads;
    p2 *= inv_heads;
    p4 *= inv_heads;
    out.channel(0, 0)[i] = std::clamp(p1 + p2 + p4, 0.0, 1.0);
    out.channel(0, 1)[i] = std::clamp(p1 + p4, 0.0, 1.0);
    out.channel(0, 2)[i] = std::clamp(p4, 0.0, 1.0);
  }
  return out;
}

inline RegionModel make_region_model(const NetworkPlan& plan, const NetworkState& state) {
  auto trace = std::make_shared<ForwardTrace>();
  return [&plan, &state, trace](const Tensor5& x) {
    forward(plan, state, x, *trace);
    return reduce_to_regions(plan, *trace);
  };
}

// Sliding-window prediction: each planned window is cropped (zero padding
// outside the volume), pushed through the model, and accumulated into
// per-voxel sums with a hit count; the result is sum/count, zero where no
// window reached. Windows run in plan order, keeping accumulation exact.
inline RegionProbMaps predict_volume(const RegionModel& model, const LabeledVolume& v, const TilePlan& plan) {
  if (v.channels.empty()) throw ShapeMismatch("predict_volume: no channels");
  const index_t* dim = v.channels[0].dim;
  RegionProbMaps sums = make_region_maps(dim, v.channels[0].spacing);
  Grid3<int32_t> count(dim[0], dim[1], dim[2], 0);

  for (const auto& origin : plan.origins) {
    BoundingBox wb;
    for (int a = 0; a < 3; ++a) {
      wb.lower[a] = origin[static_cast<size_t>(a)];
      wb.upper[a] = wb.lower[a] + plan.window[static_cast<size_t>(a)];
    }
    const Tensor5 x = crop_channels(v.channels, wb);
    const Tensor5 y = model(x);
    if (y.n != 1 || y.c != 3 || y.d != x.d || y.h != x.h || y.w != x.w)
      throw ShapeMismatch("predict_volume: model output is not a (1,3,window) block");
    for (index_t z = 0; z < y.d; ++z)
      for (index_t yy = 0; yy < y.h; ++yy)
        for (index_t xx = 0; xx < y.w; ++xx) {
          const index_t gz = wb.lower[0] + z, gy = wb.lower[1] + yy, gx = wb.lower[2] + xx;
          if (!count.in_bounds(gz, gy, gx)) continue;
          sums.wt(gz, gy, gx) += y.at(0, 0, z, yy, xx);
          sums.tc(gz, gy, gx) += y.at(0, 1, z, yy, xx);
          sums.en(gz, gy, gx) += y.at(0, 2, z, yy, xx);
          count(gz, gy, gx) += 1;
        }
  }
  for (size_t i = 0; i < count.data.size(); ++i) {
    const double div = count.data[i] > 0 ? 1.0 / static_cast<double>(count.data[i]) : 0.0;
    sums.wt.data[i] *= div;
    sums.tc.data[i] *= div;
    sums.en.data[i] *= div;
  }
  return sums;
}

// The same tiling as seen from a flipped volume: each origin is mirrored
// along the flipped axes so windows land on the same anatomy.
inline TilePlan mirror_plan(const TilePlan& plan, const index_t dim[3], unsigned axes_mask) {
  TilePlan out = plan;
  for (auto& origin : out.origins)
    for (int a = 0; a < 3; ++a)
      if (axes_mask & (1u << a))
        origin[static_cast<size_t>(a)] = dim[a] - (origin[static_cast<size_t>(a)] + plan.window[static_cast<size_t>(a)]);
  return out;
}

// Flip test-time augmentation: predict the volume under all eight axis-flip
// combinations, un-flip each result, and average the maps voxelwise.
inline RegionProbMaps predict_with_tta(const RegionModel& model, const LabeledVolume& v, const TilePlan& plan) {
  if (v.channels.empty()) throw ShapeMismatch("predict_with_tta: no channels");
  const index_t* dim = v.channels[0].dim;
  RegionProbMaps acc = make_region_maps(dim, v.channels[0].spacing);
  for (unsigned mask = 0; mask < 8; ++mask) {
    LabeledVolume fv;
    fv.channels.reserve(v.channels.size());
    for (const auto& ch : v.channels) fv.channels.push_back(flip_grid(ch, mask));
    const RegionProbMaps m = predict_volume(model, fv, mirror_plan(plan, dim, mask));
    for (int r = 0; r < 3; ++r) {
      const Volume3 unflipped = flip_grid(m.map(static_cast<Region>(r)), mask);
      Volume3& dst = acc.map(static_cast<Region>(r));
      for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += unflipped.data[i];
    }
  }
  for (int r = 0; r < 3; ++r)
    for (double& val : acc.map(static_cast<Region>(r)).data) val *= 0.125;
  return acc;
}

}  // namespace voxseg
