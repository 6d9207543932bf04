#pragma once

#include <vector>

#include "voxseg/errors.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

// Connected-component labeling of a binary mask. Component k (1-based) has
// sizes[k-1] voxels; 0 stays background.
struct ComponentSet {
  Grid3<int32_t> labels;
  std::vector<index_t> sizes;
};

namespace detail {

inline const int (*neighbor_offsets(int connectivity, int& count))[3] {
  static const int six[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  static int twentysix[26][3];
  static const bool built = [] {
    int k = 0;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dz == 0 && dy == 0 && dx == 0) continue;
          twentysix[k][0] = dz;
          twentysix[k][1] = dy;
          twentysix[k][2] = dx;
          ++k;
        }
    return true;
  }();
  (void)built;
  if (connectivity == 6) {
    count = 6;
    return six;
  }
  if (connectivity == 26) {
    count = 26;
    return twentysix;
  }
  throw InvalidSpec("connectivity must be 6 or 26");
}

}  // namespace detail

inline ComponentSet connected_components(const LabelGrid& mask, int connectivity) {
  int ncand = 0;
  const int(*offs)[3] = detail::neighbor_offsets(connectivity, ncand);
  ComponentSet out;
  out.labels = Grid3<int32_t>(mask.dim[0], mask.dim[1], mask.dim[2], 0);
  std::vector<std::array<index_t, 3>> stack;
  int32_t next = 0;
  for (index_t z = 0; z < mask.dim[0]; ++z)
    for (index_t y = 0; y < mask.dim[1]; ++y)
      for (index_t x = 0; x < mask.dim[2]; ++x) {
        if (!mask(z, y, x) || out.labels(z, y, x) != 0) continue;
        ++next;
        index_t size = 0;
        stack.push_back({z, y, x});
        out.labels(z, y, x) = next;
        while (!stack.empty()) {
          const auto [cz, cy, cx] = stack.back();
          stack.pop_back();
          ++size;
          for (int k = 0; k < ncand; ++k) {
            const index_t nz = cz + offs[k][0], ny = cy + offs[k][1], nx = cx + offs[k][2];
            if (!mask.in_bounds(nz, ny, nx) || !mask(nz, ny, nx) || out.labels(nz, ny, nx) != 0) continue;
            out.labels(nz, ny, nx) = next;
            stack.push_back({nz, ny, nx});
          }
        }
        out.sizes.push_back(size);
      }
  return out;
}

// Drops 26-connected components smaller than frac times the largest one.
inline LabelGrid remove_small_clusters(const LabelGrid& mask, double min_cluster_frac) {
  if (min_cluster_frac < 0.0 || min_cluster_frac >= 1.0)
    throw InvalidSpec("min_cluster_frac must lie in [0, 1)");
  ComponentSet comps = connected_components(mask, 26);
  if (comps.sizes.empty()) return mask;
  index_t largest = 0;
  for (index_t s : comps.sizes) largest = std::max(largest, s);
  const double cutoff = min_cluster_frac * static_cast<double>(largest);
  LabelGrid out = mask;
  for (size_t i = 0; i < out.data.size(); ++i) {
    const int32_t lab = comps.labels.data[i];
    if (lab > 0 && static_cast<double>(comps.sizes[static_cast<size_t>(lab - 1)]) < cutoff) out.data[i] = 0;
  }
  return out;
}

// Turns enclosed background into foreground: background is kept only where a
// 6-connected path reaches the volume border.
inline LabelGrid fill_holes(const LabelGrid& mask) {
  const index_t d = mask.dim[0], h = mask.dim[1], w = mask.dim[2];
  Grid3<uint8_t> reachable(d, h, w, 0);
  std::vector<std::array<index_t, 3>> stack;
  auto seed = [&](index_t z, index_t y, index_t x) {
    if (!mask(z, y, x) && !reachable(z, y, x)) {
      reachable(z, y, x) = 1;
      stack.push_back({z, y, x});
    }
  };
  for (index_t z = 0; z < d; ++z)
    for (index_t y = 0; y < h; ++y)
      for (index_t x = 0; x < w; ++x)
        if (z == 0 || z == d - 1 || y == 0 || y == h - 1 || x == 0 || x == w - 1) seed(z, y, x);
  int ncand = 0;
  const int(*offs)[3] = detail::neighbor_offsets(6, ncand);
  while (!stack.empty()) {
    const auto [cz, cy, cx] = stack.back();
    stack.pop_back();
    for (int k = 0; k < ncand; ++k) {
      const index_t nz = cz + offs[k][0], ny = cy + offs[k][1], nx = cx + offs[k][2];
      if (!mask.in_bounds(nz, ny, nx) || mask(nz, ny, nx) || reachable(nz, ny, nx)) continue;
      reachable(nz, ny, nx) = 1;
      stack.push_back({nz, ny, nx});
    }
  }
  LabelGrid out = mask;
  for (size_t i = 0; i < out.data.size(); ++i)
    if (!out.data[i] && !reachable.data[i]) out.data[i] = 1;
  return out;
}

}  // namespace voxseg
