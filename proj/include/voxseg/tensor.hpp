#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "voxseg/errors.hpp"

namespace voxseg {

using index_t = int64_t;

// Dense 3D grid, depth-major (width fastest). Voxel spacing rides along so
// physical distances survive cropping and resampling.
template <typename T>
struct Grid3 {
  index_t dim[3] = {0, 0, 0};  // depth, height, width
  double spacing[3] = {1.0, 1.0, 1.0};
  std::vector<T> data;

  Grid3() = default;
  Grid3(index_t d, index_t h, index_t w, T fill = T{}) : dim{d, h, w}, data(static_cast<size_t>(d * h * w), fill) {}

  index_t size() const { return dim[0] * dim[1] * dim[2]; }

  T& operator()(index_t z, index_t y, index_t x) { return data[static_cast<size_t>((z * dim[1] + y) * dim[2] + x)]; }
  const T& operator()(index_t z, index_t y, index_t x) const {
    return data[static_cast<size_t>((z * dim[1] + y) * dim[2] + x)];
  }

  bool in_bounds(index_t z, index_t y, index_t x) const {
    return z >= 0 && z < dim[0] && y >= 0 && y < dim[1] && x >= 0 && x < dim[2];
  }

  template <typename U>
  bool same_shape(const Grid3<U>& other) const {
    return dim[0] == other.dim[0] && dim[1] == other.dim[1] && dim[2] == other.dim[2];
  }
};

using Volume3 = Grid3<double>;
using LabelGrid = Grid3<uint8_t>;

// 5D activation tensor: (batch, channel, depth, height, width), width fastest.
struct Tensor5 {
  index_t n = 0, c = 0, d = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor5() = default;
  Tensor5(index_t n_, index_t c_, index_t d_, index_t h_, index_t w_, double fill = 0.0)
      : n(n_), c(c_), d(d_), h(h_), w(w_), data(static_cast<size_t>(n_ * c_ * d_ * h_ * w_), fill) {}

  index_t size() const { return n * c * d * h * w; }
  index_t voxels() const { return d * h * w; }

  double& at(index_t in, index_t ic, index_t iz, index_t iy, index_t ix) {
    return data[static_cast<size_t>((((in * c + ic) * d + iz) * h + iy) * w + ix)];
  }
  const double& at(index_t in, index_t ic, index_t iz, index_t iy, index_t ix) const {
    return data[static_cast<size_t>((((in * c + ic) * d + iz) * h + iy) * w + ix)];
  }

  double* channel(index_t in, index_t ic) { return data.data() + static_cast<size_t>((in * c + ic) * voxels()); }
  const double* channel(index_t in, index_t ic) const {
    return data.data() + static_cast<size_t>((in * c + ic) * voxels());
  }

  bool same_shape(const Tensor5& o) const { return n == o.n && c == o.c && d == o.d && h == o.h && w == o.w; }

  void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

// Half-open voxel box [lower, upper). Bounds may lie outside the grid the box
// is applied to; crop_pad fills the overhang.
struct BoundingBox {
  index_t lower[3] = {0, 0, 0};
  index_t upper[3] = {0, 0, 0};

  index_t extent(int axis) const { return upper[axis] - lower[axis]; }
};

template <typename T>
Grid3<T> crop_pad(const Grid3<T>& g, const BoundingBox& box, T pad_value) {
  for (int a = 0; a < 3; ++a)
    if (box.extent(a) <= 0) throw ShapeMismatch("crop_pad: empty box extent");
  Grid3<T> out(box.extent(0), box.extent(1), box.extent(2), pad_value);
  for (int a = 0; a < 3; ++a) out.spacing[a] = g.spacing[a];
  // Intersection of the box with the source grid, in output coordinates.
  index_t lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<index_t>(0, -box.lower[a]);
    hi[a] = std::min<index_t>(box.extent(a), g.dim[a] - box.lower[a]);
    if (hi[a] < lo[a]) hi[a] = lo[a];
  }
  for (index_t z = lo[0]; z < hi[0]; ++z)
    for (index_t y = lo[1]; y < hi[1]; ++y) {
      const T* src = &g(box.lower[0] + z, box.lower[1] + y, box.lower[2] + lo[2]);
      T* dst = &out(z, y, lo[2]);
      std::copy(src, src + (hi[2] - lo[2]), dst);
    }
  return out;
}

// Restores a cropped block into a grid of the original shape; exact inverse
// of crop_pad on the in-bounds region.
template <typename T>
void paste(const Grid3<T>& block, const BoundingBox& box, Grid3<T>& target) {
  if (block.dim[0] != box.extent(0) || block.dim[1] != box.extent(1) || block.dim[2] != box.extent(2))
    throw ShapeMismatch("paste: block shape does not match box");
  for (index_t z = 0; z < block.dim[0]; ++z)
    for (index_t y = 0; y < block.dim[1]; ++y)
      for (index_t x = 0; x < block.dim[2]; ++x) {
        const index_t tz = box.lower[0] + z, ty = box.lower[1] + y, tx = box.lower[2] + x;
        if (target.in_bounds(tz, ty, tx)) target(tz, ty, tx) = block(z, y, x);
      }
}

// axes_mask bit 0 flips depth, bit 1 height, bit 2 width.
template <typename T>
Grid3<T> flip_grid(const Grid3<T>& g, unsigned axes_mask) {
  Grid3<T> out(g.dim[0], g.dim[1], g.dim[2]);
  for (int a = 0; a < 3; ++a) out.spacing[a] = g.spacing[a];
  const bool fz = axes_mask & 1u, fy = axes_mask & 2u, fx = axes_mask & 4u;
  for (index_t z = 0; z < g.dim[0]; ++z)
    for (index_t y = 0; y < g.dim[1]; ++y)
      for (index_t x = 0; x < g.dim[2]; ++x)
        out(fz ? g.dim[0] - 1 - z : z, fy ? g.dim[1] - 1 - y : y, fx ? g.dim[2] - 1 - x : x) = g(z, y, x);
  return out;
}

inline Tensor5 flip_tensor(const Tensor5& t, unsigned axes_mask) {
  Tensor5 out(t.n, t.c, t.d, t.h, t.w);
  const bool fz = axes_mask & 1u, fy = axes_mask & 2u, fx = axes_mask & 4u;
  for (index_t in = 0; in < t.n; ++in)
    for (index_t ic = 0; ic < t.c; ++ic)
      for (index_t z = 0; z < t.d; ++z)
        for (index_t y = 0; y < t.h; ++y)
          for (index_t x = 0; x < t.w; ++x)
            out.at(in, ic, fz ? t.d - 1 - z : z, fy ? t.h - 1 - y : y, fx ? t.w - 1 - x : x) = t.at(in, ic, z, y, x);
  return out;
}

// Spatial crop of every (batch, channel) plane with zero padding outside.
inline Tensor5 crop_pad(const Tensor5& t, const BoundingBox& box, double pad_value) {
  for (int a = 0; a < 3; ++a)
    if (box.extent(a) <= 0) throw ShapeMismatch("crop_pad: empty box extent");
  Tensor5 out(t.n, t.c, box.extent(0), box.extent(1), box.extent(2), pad_value);
  index_t lo[3], hi[3];
  const index_t dims[3] = {t.d, t.h, t.w};
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<index_t>(0, -box.lower[a]);
    hi[a] = std::min<index_t>(box.extent(a), dims[a] - box.lower[a]);
    if (hi[a] < lo[a]) hi[a] = lo[a];
  }
  for (index_t in = 0; in < t.n; ++in)
    for (index_t ic = 0; ic < t.c; ++ic)
      for (index_t z = lo[0]; z < hi[0]; ++z)
        for (index_t y = lo[1]; y < hi[1]; ++y)
          for (index_t x = lo[2]; x < hi[2]; ++x)
            out.at(in, ic, z, y, x) = t.at(in, ic, box.lower[0] + z, box.lower[1] + y, box.lower[2] + x);
  return out;
}

}  // namespace voxseg
