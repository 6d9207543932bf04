#pragma once

#include <cstdio>
#include <filesystem>
#include <string>

#include "voxseg/dataset.hpp"
#include "voxseg/nifti.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// Synthetic subject: concentric ellipsoids carve the brain into healthy
// tissue, edema (2), necrotic core (1) and enhancing core (4), so the region
// hierarchy holds by construction. Radii are drawn per axis from fractions of
// the half-extent; the range bounds must be strictly ordered so the nesting
// can never invert.
struct PhantomSpec {
  index_t shape[3] = {64, 64, 64};
  int count = 4;
  double brain_frac[2] = {0.80, 0.90};
  double wt_frac[2] = {0.40, 0.55};
  double tc_frac[2] = {0.22, 0.34};
  double en_frac[2] = {0.10, 0.20};
  double center_jitter = 0.04;  // fraction of extent
  double noise = 0.02;
  uint64_t seed = 0;
};

inline void validate_phantom_spec(const PhantomSpec& spec) {
  for (index_t e : spec.shape)
    if (e < 8) throw InvalidSpec("phantom: each extent must be at least 8");
  if (spec.count < 1) throw InvalidSpec("phantom: need at least one subject");
  const double* ranges[4] = {spec.en_frac, spec.tc_frac, spec.wt_frac, spec.brain_frac};
  double prev = 0.0;
  for (const double* r : ranges) {
    if (!(prev < r[0] && r[0] <= r[1])) throw InvalidSpec("phantom: radius ranges must nest strictly EN<TC<WT<brain");
    prev = r[1];
  }
  if (prev > 1.0) throw InvalidSpec("phantom: brain radius fraction must not exceed 1");
  if (spec.center_jitter < 0.0 || spec.center_jitter > 0.05)
    throw InvalidSpec("phantom: center jitter must lie in [0, 0.05]");
  if (spec.noise < 0.0) throw InvalidSpec("phantom: noise level must be non-negative");
}

struct PhantomGeometry {
  double center[3];
  double brain_r[3], wt_r[3], tc_r[3], en_r[3];
};

namespace detail {

inline double ellipsoid_metric(index_t z, index_t y, index_t x, const double c[3], const double r[3]) {
  const double dz = (z - c[0]) / r[0], dy = (y - c[1]) / r[1], dx = (x - c[2]) / r[2];
  return dz * dz + dy * dy + dx * dx;
}

// rows: T1, T1ce, T2, FLAIR; columns: tissue, edema, necrotic, enhancing
constexpr double kPhantomIntensity[4][4] = {
    {0.40, 0.50, 0.30, 0.70},
    {0.40, 0.45, 0.35, 0.95},
    {0.35, 0.85, 0.60, 0.50},
    {0.30, 0.90, 0.55, 0.45},
};

}  // namespace detail

inline LabeledVolume make_phantom(const PhantomSpec& spec, Rng& rng, PhantomGeometry* geo_out = nullptr) {
  validate_phantom_spec(spec);
  PhantomGeometry geo;
  for (int a = 0; a < 3; ++a)
    geo.center[a] = (spec.shape[a] - 1) / 2.0 + rng.uniform(-1.0, 1.0) * spec.center_jitter * spec.shape[a];
  double* radii[4] = {geo.brain_r, geo.wt_r, geo.tc_r, geo.en_r};
  const double* fracs[4] = {spec.brain_frac, spec.wt_frac, spec.tc_frac, spec.en_frac};
  for (int r = 0; r < 4; ++r)
    for (int a = 0; a < 3; ++a) radii[r][a] = rng.uniform(fracs[r][0], fracs[r][1]) * (spec.shape[a] / 2.0);

  LabeledVolume v;
  LabelGrid labels(spec.shape[0], spec.shape[1], spec.shape[2], 0);
  // class per voxel: -1 outside brain, else column of the intensity table
  std::vector<int8_t> cls(labels.data.size(), -1);
  size_t i = 0;
  for (index_t z = 0; z < spec.shape[0]; ++z)
    for (index_t y = 0; y < spec.shape[1]; ++y)
      for (index_t x = 0; x < spec.shape[2]; ++x, ++i) {
        if (detail::ellipsoid_metric(z, y, x, geo.center, geo.en_r) <= 1.0) {
          labels.data[i] = 4;
          cls[i] = 3;
        } else if (detail::ellipsoid_metric(z, y, x, geo.center, geo.tc_r) <= 1.0) {
          labels.data[i] = 1;
          cls[i] = 2;
        } else if (detail::ellipsoid_metric(z, y, x, geo.center, geo.wt_r) <= 1.0) {
          labels.data[i] = 2;
          cls[i] = 1;
        } else if (detail::ellipsoid_metric(z, y, x, geo.center, geo.brain_r) <= 1.0) {
          cls[i] = 0;
        }
      }

  for (int c = 0; c < 4; ++c) {
    Volume3 ch(spec.shape[0], spec.shape[1], spec.shape[2], 0.0);
    for (size_t j = 0; j < ch.data.size(); ++j) {
      if (cls[j] < 0) continue;  // outside the head: exact zero keeps the mask tight
      double val = detail::kPhantomIntensity[c][cls[j]];
      if (spec.noise > 0.0) val += spec.noise * rng.normal();
      ch.data[j] = val;
    }
    v.channels.push_back(std::move(ch));
  }
  v.labels = std::move(labels);
  v.brain_mask = make_brain_mask(v.channels);
  if (geo_out) *geo_out = geo;
  return v;
}

inline std::string phantom_subject_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "phantom_%03d", index);
  return buf;
}

// Writes <out_dir>/<id>/<id>_{t1,t1ce,t2,flair,seg}.nii.gz per subject. Each
// subject gets its own stream split off the spec seed, so regenerating with a
// larger count reproduces the earlier subjects bit for bit.
inline void make_phantoms(const PhantomSpec& spec, const std::string& out_dir) {
  validate_phantom_spec(spec);
  const ModalitySuffixes sfx;
  for (int s = 0; s < spec.count; ++s) {
    const std::string id = phantom_subject_id(s);
    Rng rng = Rng(spec.seed).split(id);
    LabeledVolume v = make_phantom(spec, rng);
    const std::filesystem::path dir = std::filesystem::path(out_dir) / id;
    std::filesystem::create_directories(dir);
    const std::vector<std::string> suffixes = sfx.channels();
    for (size_t c = 0; c < v.channels.size(); ++c)
      write_nifti(v.channels[c], (dir / (id + suffixes[c] + ".nii.gz")).string(), nifti_type::kFloat32);
    write_nifti(*v.labels, (dir / (id + sfx.seg + ".nii.gz")).string());
  }
}

}  // namespace voxseg
