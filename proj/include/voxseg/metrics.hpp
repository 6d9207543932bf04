#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "voxseg/errors.hpp"
#include "voxseg/fusion.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

struct MetricReport {
  double dice[3] = {0, 0, 0};  // whole, core, enhancing
  double hd95[3] = {0, 0, 0};
};

inline double dice_binary(const LabelGrid& a, const LabelGrid& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("dice: shapes differ");
  index_t na = 0, nb = 0, inter = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    na += a.data[i] ? 1 : 0;
    nb += b.data[i] ? 1 : 0;
    inter += (a.data[i] && b.data[i]) ? 1 : 0;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// Foreground voxels with at least one 6-neighbor background voxel; voxels on
// the volume border count as surface (outside is background).
inline std::vector<std::array<index_t, 3>> surface_voxels(const LabelGrid& mask) {
  std::vector<std::array<index_t, 3>> out;
  for (index_t z = 0; z < mask.dim[0]; ++z)
    for (index_t y = 0; y < mask.dim[1]; ++y)
      for (index_t x = 0; x < mask.dim[2]; ++x) {
        if (!mask(z, y, x)) continue;
        bool surface = false;
        const index_t nb[6][3] = {{z - 1, y, x}, {z + 1, y, x}, {z, y - 1, x},
                                  {z, y + 1, x}, {z, y, x - 1}, {z, y, x + 1}};
        for (const auto& n : nb)
          if (!mask.in_bounds(n[0], n[1], n[2]) || !mask(n[0], n[1], n[2])) {
            surface = true;
            break;
          }
        if (surface) out.push_back({z, y, x});
      }
  return out;
}

namespace detail {

// 3-d tree over millimeter-space points for nearest-surface queries.
class KdTree3 {
 public:
  explicit KdTree3(std::vector<std::array<double, 3>> pts) : pts_(std::move(pts)) {
    idx_.resize(pts_.size());
    for (size_t i = 0; i < idx_.size(); ++i) idx_[i] = i;
    if (!idx_.empty()) build(0, idx_.size(), 0);
  }

  double nearest_sq(const std::array<double, 3>& q) const {
    double best = HUGE_VAL;
    query(0, idx_.size(), 0, q, best);
    return best;
  }

 private:
  static double dist_sq(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double dz = a[0] - b[0], dy = a[1] - b[1], dx = a[2] - b[2];
    return dz * dz + dy * dy + dx * dx;
  }

  // median split in place over idx_[lo, hi)
  void build(size_t lo, size_t hi, int axis) {
    if (hi - lo <= 1) return;
    const size_t mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](size_t a, size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void query(size_t lo, size_t hi, int axis, const std::array<double, 3>& q, double& best) const {
    if (lo >= hi) return;
    const size_t mid = (lo + hi) / 2;
    const std::array<double, 3>& p = pts_[idx_[mid]];
    best = std::min(best, dist_sq(p, q));
    const double diff = q[axis] - p[axis];
    const int next = (axis + 1) % 3;
    if (diff < 0) {
      query(lo, mid, next, q, best);
      if (diff * diff < best) query(mid + 1, hi, next, q, best);
    } else {
      query(mid + 1, hi, next, q, best);
      if (diff * diff < best) query(lo, mid, next, q, best);
    }
  }

  std::vector<std::array<double, 3>> pts_;
  std::vector<size_t> idx_;
};

inline std::vector<std::array<double, 3>> scale_points(const std::vector<std::array<index_t, 3>>& voxels,
                                                       const double spacing[3]) {
  std::vector<std::array<double, 3>> out(voxels.size());
  for (size_t i = 0; i < voxels.size(); ++i)
    for (int a = 0; a < 3; ++a) out[i][a] = static_cast<double>(voxels[i][a]) * spacing[a];
  return out;
}

}  // namespace detail

// Physical diagonal of the volume; stands in for the distance when exactly
// one of the two masks is empty.
inline double empty_mask_sentinel(const index_t dim[3], const double spacing[3]) {
  double sq = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double side = static_cast<double>(dim[a]) * spacing[a];
    sq += side * side;
  }
  return std::sqrt(sq);
}

// 95th-percentile symmetric surface distance: directed nearest-surface
// distances are pooled from both directions and the nearest-rank percentile
// of the combined multiset is returned. Both masks empty -> 0; exactly one
// empty -> the volume-diagonal sentinel.
inline double hd95(const LabelGrid& a, const LabelGrid& b, const double spacing[3]) {
  if (!a.same_shape(b)) throw ShapeMismatch("hd95: shapes differ");
  const auto sa = surface_voxels(a), sb = surface_voxels(b);
  if (sa.empty() && sb.empty()) return 0.0;
  if (sa.empty() || sb.empty()) return empty_mask_sentinel(a.dim, spacing);
  const auto pa = detail::scale_points(sa, spacing), pb = detail::scale_points(sb, spacing);
  detail::KdTree3 ta(pa), tb(pb);
  std::vector<double> dists;
  dists.reserve(pa.size() + pb.size());
  for (const auto& p : pa) dists.push_back(std::sqrt(tb.nearest_sq(p)));
  for (const auto& q : pb) dists.push_back(std::sqrt(ta.nearest_sq(q)));
  std::sort(dists.begin(), dists.end());
  const size_t rank = (dists.size() * 95 + 99) / 100;  // ceil(0.95 n) without float error
  return dists[rank - 1];
}

inline MetricReport evaluate(const SegmentationMap& pred, const SegmentationMap& ref) {
  if (!pred.same_shape(ref)) throw ShapeMismatch("evaluate: shapes differ");
  for (int a = 0; a < 3; ++a)
    if (pred.spacing[a] != ref.spacing[a]) throw ShapeMismatch("evaluate: voxel spacings differ");
  validate_labels(pred);
  validate_labels(ref);
  MetricReport report;
  for (int r = 0; r < 3; ++r) {
    const LabelGrid pm = region_mask(pred, static_cast<Region>(r));
    const LabelGrid rm = region_mask(ref, static_cast<Region>(r));
    report.dice[r] = dice_binary(pm, rm);
    report.hd95[r] = hd95(pm, rm, ref.spacing);
  }
  return report;
}

inline std::string metric_csv_header() { return "subject_id,dice_wt,dice_tc,dice_en,hd95_wt,hd95_tc,hd95_en"; }

inline std::string metric_csv_row(const std::string& subject_id, const MetricReport& m) {
  char buf[32];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  std::string row = subject_id;
  for (int r = 0; r < 3; ++r) row += "," + fmt(m.dice[r]);
  for (int r = 0; r < 3; ++r) row += "," + fmt(m.hd95[r]);
  return row;
}

}  // namespace voxseg
