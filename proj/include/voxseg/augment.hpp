#pragma once

#include <cmath>
#include <vector>

#include "voxseg/errors.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/sampler.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

struct AugmentConfig {
  double distort_prob = 0.5;
  double per_op_prob = 0.5;
  double rotation_deg = 10.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  index_t elastic_grid = 7;       // control points per axis
  double elastic_max_disp = 7.5;  // voxels
  double log_gamma = 0.3;
};

inline void validate_augment_config(const AugmentConfig& cfg) {
  if (cfg.distort_prob < 0.0 || cfg.distort_prob > 1.0 || cfg.per_op_prob < 0.0 || cfg.per_op_prob > 1.0)
    throw InvalidSpec("augment config: probabilities must lie in [0,1]");
  if (cfg.scale_min > cfg.scale_max || cfg.scale_min <= 0.0) throw InvalidSpec("augment config: bad scale range");
  if (cfg.rotation_deg < 0.0 || cfg.log_gamma < 0.0 || cfg.elastic_max_disp < 0.0)
    throw InvalidSpec("augment config: ranges must be non-negative");
  if (cfg.elastic_grid < 2) throw InvalidSpec("augment config: elastic grid needs at least 2 points per axis");
}

// Which pipeline stages actually fired; purely observational (lets tests
// count gate activations without diffing voxels).
struct AugmentTrace {
  bool distorted = false;
  bool flip = false, affine = false, elastic = false, gamma = false;
};

namespace detail {

inline double sample_trilinear(const double* ch, const index_t dim[3], double z, double y, double x) {
  const double fz = std::floor(z), fy = std::floor(y), fx = std::floor(x);
  const index_t z0 = static_cast<index_t>(fz), y0 = static_cast<index_t>(fy), x0 = static_cast<index_t>(fx);
  const double tz = z - fz, ty = y - fy, tx = x - fx;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const index_t iz = z0 + dz, iy = y0 + dy, ix = x0 + dx;
        if (iz < 0 || iz >= dim[0] || iy < 0 || iy >= dim[1] || ix < 0 || ix >= dim[2]) continue;
        const double w = (dz ? tz : 1.0 - tz) * (dy ? ty : 1.0 - ty) * (dx ? tx : 1.0 - tx);
        acc += w * ch[(iz * dim[1] + iy) * dim[2] + ix];
      }
  return acc;
}

inline uint8_t sample_nearest(const uint8_t* lab, const index_t dim[3], double z, double y, double x) {
  const index_t iz = static_cast<index_t>(std::llround(z));
  const index_t iy = static_cast<index_t>(std::llround(y));
  const index_t ix = static_cast<index_t>(std::llround(x));
  if (iz < 0 || iz >= dim[0] || iy < 0 || iy >= dim[1] || ix < 0 || ix >= dim[2]) return 0;
  return lab[(iz * dim[1] + iy) * dim[2] + ix];
}

// Resamples a pair through an arbitrary source-coordinate map: image channels
// trilinearly, labels nearest-neighbor (class values are never blended).
template <typename SourceMap>
SegmentPair resample_pair(const SegmentPair& pair, SourceMap&& src_of) {
  const index_t dim[3] = {pair.image.d, pair.image.h, pair.image.w};
  if (pair.image.n != 1 || dim[0] != pair.label.dim[0] || dim[1] != pair.label.dim[1] || dim[2] != pair.label.dim[2])
    throw ShapeMismatch("resample: image/label extents disagree");
  SegmentPair out;
  out.image = Tensor5(1, pair.image.c, dim[0], dim[1], dim[2]);
  out.label = LabelGrid(dim[0], dim[1], dim[2], 0);
  for (int a = 0; a < 3; ++a) out.label.spacing[a] = pair.label.spacing[a];
  for (index_t z = 0; z < dim[0]; ++z)
    for (index_t y = 0; y < dim[1]; ++y)
      for (index_t x = 0; x < dim[2]; ++x) {
        double s[3];
        src_of(z, y, x, s);
        for (index_t c = 0; c < pair.image.c; ++c)
          out.image.at(0, c, z, y, x) = sample_trilinear(pair.image.channel(0, c), dim, s[0], s[1], s[2]);
        out.label(z, y, x) = sample_nearest(pair.label.data.data(), dim, s[0], s[1], s[2]);
      }
  return out;
}

}  // namespace detail

inline SegmentPair flip_segment(const SegmentPair& pair, unsigned axes_mask) {
  SegmentPair out;
  out.image = flip_tensor(pair.image, axes_mask);
  out.label = flip_grid(pair.label, axes_mask);
  return out;
}

// Rotations (degrees) about the depth/height/width axes composed in that
// order, then per-axis scaling, all about the segment center (N-1)/2.
// Output voxels are pulled from source coordinates (inverse map).
inline SegmentPair affine_segment(const SegmentPair& pair, const double angles_deg[3], const double scales[3]) {
  const index_t dim[3] = {pair.image.d, pair.image.h, pair.image.w};
  double R[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  // rotation about axis k mixes the other two coordinate axes
  for (int k = 0; k < 3; ++k) {
    const double a = angles_deg[k] * M_PI / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    const int i = (k + 1) % 3, j = (k + 2) % 3;
    double Rk[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    Rk[i][i] = c;
    Rk[i][j] = -s;
    Rk[j][i] = s;
    Rk[j][j] = c;
    double T[3][3] = {};
    for (int r = 0; r < 3; ++r)
      for (int cc = 0; cc < 3; ++cc)
        for (int m = 0; m < 3; ++m) T[r][cc] += R[r][m] * Rk[m][cc];
    for (int r = 0; r < 3; ++r)
      for (int cc = 0; cc < 3; ++cc) R[r][cc] = T[r][cc];
  }
  const double center[3] = {(dim[0] - 1) / 2.0, (dim[1] - 1) / 2.0, (dim[2] - 1) / 2.0};
  return detail::resample_pair(pair, [&](index_t z, index_t y, index_t x, double* s) {
    const double q[3] = {z - center[0], y - center[1], x - center[2]};
    // inverse of R*diag(scale): scale down, rotate by R^T
    for (int r = 0; r < 3; ++r) s[r] = (R[0][r] * q[0] + R[1][r] * q[1] + R[2][r] * q[2]) / scales[r] + center[r];
  });
}

// Control-grid displacement field: offsets (voxels) at grid x grid x grid
// points spanning the segment, trilinearly interpolated between them.
struct ElasticField {
  index_t grid = 7;
  std::vector<double> disp[3];  // per axis, grid^3 values, width fastest
};

inline void elastic_displacement(const ElasticField& field, const index_t dim[3], double z, double y, double x,
                                 double* d) {
  const index_t g = field.grid;
  const index_t gdim[3] = {g, g, g};
  double t[3];
  const double p[3] = {z, y, x};
  for (int a = 0; a < 3; ++a)
    t[a] = dim[a] > 1 ? p[a] * static_cast<double>(g - 1) / static_cast<double>(dim[a] - 1) : 0.0;
  for (int a = 0; a < 3; ++a) d[a] = detail::sample_trilinear(field.disp[a].data(), gdim, t[0], t[1], t[2]);
}

inline SegmentPair elastic_segment(const SegmentPair& pair, const ElasticField& field) {
  const index_t dim[3] = {pair.image.d, pair.image.h, pair.image.w};
  return detail::resample_pair(pair, [&](index_t z, index_t y, index_t x, double* s) {
    double d[3];
    elastic_displacement(field, dim, static_cast<double>(z), static_cast<double>(y), static_cast<double>(x), d);
    s[0] = z + d[0];
    s[1] = y + d[1];
    s[2] = x + d[2];
  });
}

// Per-channel gamma in min/max-normalized units; constant channels skipped.
inline SegmentPair gamma_segment(const SegmentPair& pair, const std::vector<double>& gammas) {
  if (static_cast<index_t>(gammas.size()) != pair.image.c) throw ShapeMismatch("gamma_segment: one gamma per channel");
  SegmentPair out = pair;
  for (index_t c = 0; c < pair.image.c; ++c) {
    double* ch = out.image.channel(0, c);
    const index_t vox = out.image.voxels();
    double lo = HUGE_VAL, hi = -HUGE_VAL;
    for (index_t i = 0; i < vox; ++i) {
      lo = std::min(lo, ch[i]);
      hi = std::max(hi, ch[i]);
    }
    if (hi - lo < 1e-12) continue;
    const double span = hi - lo, gamma = gammas[static_cast<size_t>(c)];
    for (index_t i = 0; i < vox; ++i) ch[i] = lo + span * std::pow((ch[i] - lo) / span, gamma);
  }
  return out;
}

inline SegmentPair random_flip(const SegmentPair& pair, Rng& rng, double per_op_prob) {
  unsigned mask = 0;
  for (int a = 0; a < 3; ++a)
    if (rng.bernoulli(per_op_prob)) mask |= 1u << a;
  return mask ? flip_segment(pair, mask) : pair;
}

inline SegmentPair random_affine(const SegmentPair& pair, Rng& rng, const AugmentConfig& cfg) {
  double angles[3], scales[3];
  for (int a = 0; a < 3; ++a) angles[a] = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
  for (int a = 0; a < 3; ++a) scales[a] = rng.uniform(cfg.scale_min, cfg.scale_max);
  return affine_segment(pair, angles, scales);
}

inline SegmentPair random_elastic(const SegmentPair& pair, Rng& rng, const AugmentConfig& cfg) {
  ElasticField field;
  field.grid = cfg.elastic_grid;
  const size_t n = static_cast<size_t>(field.grid * field.grid * field.grid);
  for (int a = 0; a < 3; ++a) field.disp[a].resize(n);
  for (size_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) field.disp[a][i] = rng.uniform(-cfg.elastic_max_disp, cfg.elastic_max_disp);
  return elastic_segment(pair, field);
}

inline SegmentPair random_gamma(const SegmentPair& pair, Rng& rng, const AugmentConfig& cfg) {
  std::vector<double> gammas(static_cast<size_t>(pair.image.c));
  for (auto& g : gammas) g = std::exp(rng.uniform(-cfg.log_gamma, cfg.log_gamma));
  return gamma_segment(pair, gammas);
}

// The full stochastic pipeline: one master gate, then flip/affine/elastic/
// gamma in order, each behind its own gate.
inline SegmentPair augment(const SegmentPair& pair, Rng& rng, const AugmentConfig& cfg,
                           AugmentTrace* trace = nullptr) {
  validate_augment_config(cfg);
  AugmentTrace local;
  SegmentPair out = pair;
  if (rng.bernoulli(cfg.distort_prob)) {
    local.distorted = true;
    if (rng.bernoulli(cfg.per_op_prob)) {
      local.flip = true;
      out = random_flip(out, rng, cfg.per_op_prob);
    }
    if (rng.bernoulli(cfg.per_op_prob)) {
      local.affine = true;
      out = random_affine(out, rng, cfg);
    }
    if (rng.bernoulli(cfg.per_op_prob)) {
      local.elastic = true;
      out = random_elastic(out, rng, cfg);
    }
    if (rng.bernoulli(cfg.per_op_prob)) {
      local.gamma = true;
      out = random_gamma(out, rng, cfg);
    }
  }
  if (trace) *trace = local;
  return out;
}

}  // namespace voxseg
