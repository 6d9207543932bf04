#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "voxseg/augment.hpp"
#include "voxseg/sampler.hpp"

using namespace voxseg;

namespace {

// Volume whose brain mask is exactly the given box; channel 0 is 1 inside the
// box, channel 1 encodes the voxel's linear index (so tests can recover where
// a segment was cut from).
LabeledVolume boxed_volume(index_t extent, const BoundingBox& box) {
  LabeledVolume v;
  v.channels.resize(2);
  for (auto& ch : v.channels) ch = Volume3(extent, extent, extent, 0.0);
  v.labels = LabelGrid(extent, extent, extent, 0);
  for (index_t z = box.lower[0]; z < box.upper[0]; ++z)
    for (index_t y = box.lower[1]; y < box.upper[1]; ++y)
      for (index_t x = box.lower[2]; x < box.upper[2]; ++x) {
        v.channels[0](z, y, x) = 1.0;
        v.channels[1](z, y, x) = static_cast<double>((z * extent + y) * extent + x);
        (*v.labels)(z, y, x) = 1;
      }
  v.brain_mask = make_brain_mask(v.channels);
  return v;
}

}  // namespace

TEST(Sampler, BoxEqualToSegmentIsDeterministic) {
  BoundingBox box{{4, 6, 8}, {20, 22, 24}};  // extent 16 on every axis
  LabeledVolume v = boxed_volume(32, box);
  Rng rng(11);
  SegmentPair first = sample_segment(v, 16, rng);
  for (int i = 0; i < 5; ++i) {
    SegmentPair again = sample_segment(v, 16, rng);
    EXPECT_EQ(again.image.data, first.image.data);
    EXPECT_EQ(again.label.data, first.label.data);
  }
  // the only possible segment starts at box.lower
  EXPECT_EQ(first.image.at(0, 1, 0, 0, 0), static_cast<double>((4 * 32 + 6) * 32 + 8));
  for (double val : std::vector<double>(first.image.channel(0, 0), first.image.channel(0, 0) + 16 * 16 * 16))
    EXPECT_EQ(val, 1.0);
}

TEST(Sampler, SegmentsStayInsideBrainBox) {
  BoundingBox box{{8, 10, 12}, {32, 34, 36}};  // extent 24
  LabeledVolume v = boxed_volume(48, box);
  Rng rng(12);
  std::set<double> corners;
  std::set<index_t> z_origins;
  for (int i = 0; i < 1000; ++i) {
    SegmentPair p = sample_segment(v, 16, rng);
    // channel 0 is the box indicator: a segment inside the box is all ones
    const double* ind = p.image.channel(0, 0);
    double lo = 1.0;
    for (index_t k = 0; k < 16 * 16 * 16; ++k) lo = std::min(lo, ind[k]);
    ASSERT_EQ(lo, 1.0) << "segment escaped the bounding box on draw " << i;
    for (const uint8_t lab : p.label.data) ASSERT_EQ(lab, 1);
    const double corner = p.image.at(0, 1, 0, 0, 0);
    corners.insert(corner);
    z_origins.insert(static_cast<index_t>(corner) / (48 * 48));
  }
  // all 9 admissible origins along the depth axis should show up in 1000 draws
  EXPECT_GT(corners.size(), 1u);
  EXPECT_EQ(z_origins.size(), 9u);
  EXPECT_EQ(*z_origins.begin(), 8);
  EXPECT_EQ(*z_origins.rbegin(), 16);
}

TEST(Sampler, FullScaleDrawInsideBox) {
  BoundingBox box{{16, 16, 16}, {112, 112, 112}};  // 96-wide box in a 128 volume
  LabeledVolume v;
  v.channels.resize(1);
  v.channels[0] = Volume3(128, 128, 128, 0.0);
  v.labels = LabelGrid(128, 128, 128, 0);
  for (index_t z = box.lower[0]; z < box.upper[0]; ++z)
    for (index_t y = box.lower[1]; y < box.upper[1]; ++y)
      for (index_t x = box.lower[2]; x < box.upper[2]; ++x) v.channels[0](z, y, x) = 1.0;
  v.brain_mask = make_brain_mask(v.channels);
  Rng rng(13);
  SegmentPair p = sample_segment(v, 96, rng);
  ASSERT_EQ(p.image.d, 96);
  double lo = 1.0;
  for (double val : p.image.data) lo = std::min(lo, val);
  EXPECT_EQ(lo, 1.0);
}

TEST(Sampler, NarrowBoxIsCenteredAndZeroPadded) {
  // 10-wide box inside a 12-wide volume, segment 16: origin -2, overhang both sides
  BoundingBox box{{1, 1, 1}, {11, 11, 11}};
  LabeledVolume v = boxed_volume(12, box);
  Rng rng(14);
  SegmentPair p = sample_segment(v, 16, rng);
  ASSERT_EQ(p.image.d, 16);
  ASSERT_EQ(p.label.dim[0], 16);
  for (index_t z = 0; z < 16; ++z)
    for (index_t y = 0; y < 16; ++y)
      for (index_t x = 0; x < 16; ++x) {
        const index_t sz = z - 2, sy = y - 2, sx = x - 2;
        const bool inside = sz >= 0 && sz < 12 && sy >= 0 && sy < 12 && sx >= 0 && sx < 12;
        const double want0 = inside ? v.channels[0](sz, sy, sx) : 0.0;
        ASSERT_EQ(p.image.at(0, 0, z, y, x), want0) << z << "," << y << "," << x;
        const uint8_t wantl = inside ? (*v.labels)(sz, sy, sx) : 0;
        ASSERT_EQ(p.label(z, y, x), wantl);
      }
}

TEST(Sampler, RejectsMissingLabelsAndEmptyMask) {
  BoundingBox box{{1, 1, 1}, {11, 11, 11}};
  LabeledVolume v = boxed_volume(12, box);
  Rng rng(15);
  LabeledVolume unlabeled = v;
  unlabeled.labels.reset();
  EXPECT_THROW(sample_segment(unlabeled, 8, rng), InvalidSpec);
  LabeledVolume empty;
  empty.channels.resize(1);
  empty.channels[0] = Volume3(8, 8, 8, 0.0);
  empty.labels = LabelGrid(8, 8, 8, 0);
  empty.brain_mask = make_brain_mask(empty.channels);
  EXPECT_THROW(sample_segment(empty, 4, rng), EmptyMask);
}

namespace {

// Labeled segment with nested regions and an image channel that copies the
// label value (congruence probe) plus one smooth random channel.
SegmentPair synthetic_pair(index_t extent, uint64_t seed) {
  Rng rng(seed);
  SegmentPair p;
  p.image = Tensor5(1, 2, extent, extent, extent);
  p.label = LabelGrid(extent, extent, extent, 0);
  const double c = static_cast<double>(extent - 1) / 2.0;
  for (index_t z = 0; z < extent; ++z)
    for (index_t y = 0; y < extent; ++y)
      for (index_t x = 0; x < extent; ++x) {
        const double r = std::sqrt((z - c) * (z - c) + (y - c) * (y - c) + (x - c) * (x - c));
        uint8_t lab = 0;
        if (r < extent * 0.15)
          lab = 4;
        else if (r < extent * 0.27)
          lab = 1;
        else if (r < extent * 0.4)
          lab = 2;
        p.label(z, y, x) = lab;
        p.image.at(0, 0, z, y, x) = static_cast<double>(lab);
        p.image.at(0, 1, z, y, x) = rng.uniform();
      }
  return p;
}

}  // namespace

TEST(Augment, FlipMovesMarkerAcrossTheSegment) {
  SegmentPair p;
  p.image = Tensor5(1, 1, 96, 96, 96);
  p.label = LabelGrid(96, 96, 96, 0);
  p.image.at(0, 0, 0, 0, 0) = 1.0;
  p.label(0, 0, 0) = 4;
  SegmentPair f = flip_segment(p, 7u);
  EXPECT_EQ(f.image.at(0, 0, 95, 95, 95), 1.0);
  EXPECT_EQ(f.image.at(0, 0, 0, 0, 0), 0.0);
  EXPECT_EQ(f.label(95, 95, 95), 4);
  SegmentPair back = flip_segment(f, 7u);
  EXPECT_EQ(back.image.data, p.image.data);
  EXPECT_EQ(back.label.data, p.label.data);
}

TEST(Augment, FlipZeroProbabilityIsIdentity) {
  SegmentPair p = synthetic_pair(10, 21);
  Rng rng(22);
  SegmentPair out = random_flip(p, rng, 0.0);
  EXPECT_EQ(out.image.data, p.image.data);
  EXPECT_EQ(out.label.data, p.label.data);
}

TEST(Augment, AffineIdentityIsExact) {
  SegmentPair p = synthetic_pair(12, 23);
  const double angles[3] = {0, 0, 0}, scales[3] = {1, 1, 1};
  SegmentPair out = affine_segment(p, angles, scales);
  EXPECT_EQ(out.image.data, p.image.data);
  EXPECT_EQ(out.label.data, p.label.data);
}

TEST(Augment, HalfTurnEqualsDoubleFlip) {
  SegmentPair p = synthetic_pair(14, 24);
  const double scales[3] = {1, 1, 1};
  for (int axis = 0; axis < 3; ++axis) {
    double angles[3] = {0, 0, 0};
    angles[axis] = 180.0;
    SegmentPair rot = affine_segment(p, angles, scales);
    // half turn about an axis reverses the other two axes
    const unsigned mask = 7u & ~(1u << axis);
    SegmentPair flipped = flip_segment(p, mask);
    EXPECT_EQ(rot.label.data, flipped.label.data) << "axis " << axis;
    for (size_t i = 0; i < rot.image.data.size(); ++i)
      ASSERT_NEAR(rot.image.data[i], flipped.image.data[i], 1e-9) << "axis " << axis << " elem " << i;
  }
}

TEST(Augment, QuarterTurnKeepsImageLabelCongruence) {
  SegmentPair p = synthetic_pair(14, 25);
  const double scales[3] = {1, 1, 1};
  for (int axis = 0; axis < 3; ++axis) {
    double angles[3] = {0, 0, 0};
    angles[axis] = 90.0;
    SegmentPair rot = affine_segment(p, angles, scales);
    // channel 0 copies the label; a grid-preserving rotation keeps that true
    for (index_t z = 0; z < 14; ++z)
      for (index_t y = 0; y < 14; ++y)
        for (index_t x = 0; x < 14; ++x)
          ASSERT_NEAR(rot.image.at(0, 0, z, y, x), static_cast<double>(rot.label(z, y, x)), 1e-6);
  }
}

TEST(Augment, AffineKeepsLabelValuesClosed) {
  SegmentPair p = synthetic_pair(16, 26);
  Rng rng(27);
  AugmentConfig cfg;
  for (int i = 0; i < 5; ++i) {
    SegmentPair out = random_affine(p, rng, cfg);
    for (uint8_t lab : out.label.data)
      ASSERT_TRUE(lab == 0 || lab == 1 || lab == 2 || lab == 4) << static_cast<int>(lab);
    ASSERT_EQ(out.image.c, p.image.c);
    ASSERT_EQ(out.image.d, p.image.d);
  }
}

TEST(Augment, ElasticZeroFieldIsIdentity) {
  SegmentPair p = synthetic_pair(12, 28);
  ElasticField field;
  field.grid = 5;
  for (int a = 0; a < 3; ++a) field.disp[a].assign(5 * 5 * 5, 0.0);
  SegmentPair out = elastic_segment(p, field);
  EXPECT_EQ(out.image.data, p.image.data);
  EXPECT_EQ(out.label.data, p.label.data);
}

TEST(Augment, ElasticConstantFieldIsTranslation) {
  SegmentPair p = synthetic_pair(12, 29);
  ElasticField field;
  field.grid = 4;
  field.disp[0].assign(64, 3.0);
  field.disp[1].assign(64, -2.0);
  field.disp[2].assign(64, 1.0);
  SegmentPair out = elastic_segment(p, field);
  for (index_t z = 0; z < 12; ++z)
    for (index_t y = 0; y < 12; ++y)
      for (index_t x = 0; x < 12; ++x) {
        const index_t sz = z + 3, sy = y - 2, sx = x + 1;
        const bool in = sz >= 0 && sz < 12 && sy >= 0 && sy < 12 && sx >= 0 && sx < 12;
        ASSERT_EQ(out.label(z, y, x), in ? p.label(sz, sy, sx) : 0);
        for (index_t c = 0; c < 2; ++c)
          ASSERT_NEAR(out.image.at(0, c, z, y, x), in ? p.image.at(0, c, sz, sy, sx) : 0.0, 1e-12);
      }
}

TEST(Augment, ElasticDisplacementRespectsBound) {
  Rng rng(30);
  ElasticField field;
  field.grid = 7;
  for (int a = 0; a < 3; ++a) {
    field.disp[a].resize(7 * 7 * 7);
    for (double& d : field.disp[a]) d = rng.uniform(-7.5, 7.5);
  }
  const index_t dim[3] = {96, 96, 96};
  for (int i = 0; i < 500; ++i) {
    const double z = rng.uniform(0.0, 95.0), y = rng.uniform(0.0, 95.0), x = rng.uniform(0.0, 95.0);
    double d[3];
    elastic_displacement(field, dim, z, y, x, d);
    for (int a = 0; a < 3; ++a) ASSERT_LE(std::abs(d[a]), 7.5 + 1e-9);
  }
  // corners interpolate to the control values exactly
  double d[3];
  elastic_displacement(field, dim, 0, 0, 0, d);
  EXPECT_EQ(d[0], field.disp[0][0]);
  elastic_displacement(field, dim, 95, 95, 95, d);
  EXPECT_EQ(d[2], field.disp[2][7 * 7 * 7 - 1]);
}

TEST(Augment, GammaOneIsIdentityAndEndpointsFixed) {
  SegmentPair p = synthetic_pair(10, 31);
  SegmentPair same = gamma_segment(p, {1.0, 1.0});
  for (size_t i = 0; i < p.image.data.size(); ++i) ASSERT_NEAR(same.image.data[i], p.image.data[i], 1e-12);
  EXPECT_EQ(same.label.data, p.label.data);

  SegmentPair curved = gamma_segment(p, {2.0, 0.5});
  for (index_t c = 0; c < 2; ++c) {
    auto span = [&](const Tensor5& t) {
      const double* ch = t.channel(0, c);
      double lo = HUGE_VAL, hi = -HUGE_VAL;
      for (index_t k = 0; k < t.voxels(); ++k) {
        lo = std::min(lo, ch[k]);
        hi = std::max(hi, ch[k]);
      }
      return std::pair<double, double>(lo, hi);
    };
    auto [lo0, hi0] = span(p.image);
    auto [lo1, hi1] = span(curved.image);
    EXPECT_NEAR(lo1, lo0, 1e-12);
    EXPECT_NEAR(hi1, hi0, 1e-12);
  }
  EXPECT_EQ(curved.label.data, p.label.data);
}

TEST(Augment, GammaMidpointAndConstantChannel) {
  SegmentPair p;
  p.image = Tensor5(1, 2, 1, 1, 3);
  p.label = LabelGrid(1, 1, 3, 0);
  p.image.at(0, 0, 0, 0, 0) = 0.0;
  p.image.at(0, 0, 0, 0, 1) = 0.5;
  p.image.at(0, 0, 0, 0, 2) = 1.0;
  for (index_t x = 0; x < 3; ++x) p.image.at(0, 1, 0, 0, x) = 7.7;  // constant channel
  SegmentPair out = gamma_segment(p, {2.0, 2.0});
  EXPECT_EQ(out.image.at(0, 0, 0, 0, 0), 0.0);
  EXPECT_NEAR(out.image.at(0, 0, 0, 0, 1), 0.25, 1e-15);
  EXPECT_EQ(out.image.at(0, 0, 0, 0, 2), 1.0);
  for (index_t x = 0; x < 3; ++x) EXPECT_EQ(out.image.at(0, 1, 0, 0, x), 7.7);
}

TEST(Augment, DistortZeroIsIdentity) {
  SegmentPair p = synthetic_pair(10, 32);
  AugmentConfig cfg;
  cfg.distort_prob = 0.0;
  Rng rng(33);
  AugmentTrace trace;
  SegmentPair out = augment(p, rng, cfg, &trace);
  EXPECT_EQ(out.image.data, p.image.data);
  EXPECT_EQ(out.label.data, p.label.data);
  EXPECT_FALSE(trace.distorted);
}

TEST(Augment, FixedSeedReproduces) {
  SegmentPair p = synthetic_pair(10, 34);
  AugmentConfig cfg;
  cfg.distort_prob = 1.0;
  cfg.per_op_prob = 1.0;
  auto run = [&] {
    Rng rng(35);
    AugmentTrace trace;
    SegmentPair out = augment(p, rng, cfg, &trace);
    EXPECT_TRUE(trace.distorted && trace.flip && trace.affine && trace.elastic && trace.gamma);
    return out;
  };
  SegmentPair a = run(), b = run();
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.label.data, b.label.data);
}

TEST(Augment, GateRatesMatchProbabilities) {
  SegmentPair p = synthetic_pair(4, 36);
  AugmentConfig cfg;  // defaults: 0.5 * 0.5 per op
  Rng rng(37);
  int flips = 0, affines = 0, elastics = 0, gammas = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    AugmentTrace trace;
    augment(p, rng, cfg, &trace);
    flips += trace.flip;
    affines += trace.affine;
    elastics += trace.elastic;
    gammas += trace.gamma;
  }
  for (int count : {flips, affines, elastics, gammas}) {
    const double rate = static_cast<double>(count) / n;
    EXPECT_NEAR(rate, 0.25, 0.02);
  }
}

TEST(Augment, LabelsStayInValueSetAndShapeIsPreserved) {
  SegmentPair p = synthetic_pair(12, 38);
  AugmentConfig cfg;
  cfg.distort_prob = 1.0;
  cfg.per_op_prob = 1.0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    SegmentPair out = augment(p, rng, cfg);
    ASSERT_EQ(out.image.n, 1);
    ASSERT_EQ(out.image.c, 2);
    ASSERT_EQ(out.image.d, 12);
    ASSERT_EQ(out.image.h, 12);
    ASSERT_EQ(out.image.w, 12);
    ASSERT_EQ(out.label.dim[0], 12);
    for (uint8_t lab : out.label.data) ASSERT_TRUE(lab == 0 || lab == 1 || lab == 2 || lab == 4);
    for (double val : out.image.data) ASSERT_TRUE(std::isfinite(val));
  }
}

TEST(Augment, RejectsBadConfig) {
  SegmentPair p = synthetic_pair(6, 39);
  Rng rng(40);
  AugmentConfig cfg;
  cfg.distort_prob = 1.5;
  EXPECT_THROW(augment(p, rng, cfg), InvalidSpec);
  cfg = AugmentConfig{};
  cfg.scale_min = 1.2;
  cfg.scale_max = 0.8;
  EXPECT_THROW(augment(p, rng, cfg), InvalidSpec);
  cfg = AugmentConfig{};
  cfg.elastic_grid = 1;
  EXPECT_THROW(augment(p, rng, cfg), InvalidSpec);
}
