#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "voxseg/conv.hpp"
#include "voxseg/layers.hpp"
#include "voxseg/rng.hpp"

using namespace voxseg;

namespace {

// Oracle: direct seven-loop convolution, no im2col, no BLAS. Zero padding of
// (k-1)/2 per side, output extent ceil(in/stride).
Tensor5 conv_ref(const Tensor5& x, const std::vector<double>& w, const std::vector<double>& b, index_t out_ch,
                 index_t k, index_t s) {
  const index_t pad = (k - 1) / 2;
  const index_t od = (x.d + s - 1) / s, oh = (x.h + s - 1) / s, ow = (x.w + s - 1) / s;
  Tensor5 y(x.n, out_ch, od, oh, ow);
  for (index_t n = 0; n < x.n; ++n)
    for (index_t oc = 0; oc < out_ch; ++oc)
      for (index_t oz = 0; oz < od; ++oz)
        for (index_t oy = 0; oy < oh; ++oy)
          for (index_t ox = 0; ox < ow; ++ox) {
            double acc = b[oc];
            for (index_t ic = 0; ic < x.c; ++ic)
              for (index_t dz = 0; dz < k; ++dz)
                for (index_t dy = 0; dy < k; ++dy)
                  for (index_t dx = 0; dx < k; ++dx) {
                    const index_t iz = oz * s + dz - pad;
                    const index_t iy = oy * s + dy - pad;
                    const index_t ix = ox * s + dx - pad;
                    if (iz < 0 || iz >= x.d || iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                    acc += w[(((oc * x.c + ic) * k + dz) * k + dy) * k + dx] * x.at(n, ic, iz, iy, ix);
                  }
            y.at(n, oc, oz, oy, ox) = acc;
          }
  return y;
}

// Oracle: gather form of the 2x2x2 stride-2 transpose convolution.
Tensor5 convt_ref(const Tensor5& x, const std::vector<double>& w, const std::vector<double>& b, index_t out_ch) {
  Tensor5 y(x.n, out_ch, 2 * x.d, 2 * x.h, 2 * x.w);
  for (index_t n = 0; n < x.n; ++n)
    for (index_t oc = 0; oc < out_ch; ++oc)
      for (index_t qz = 0; qz < y.d; ++qz)
        for (index_t qy = 0; qy < y.h; ++qy)
          for (index_t qx = 0; qx < y.w; ++qx) {
            double acc = b[oc];
            const index_t p = ((qz % 2) * 2 + (qy % 2)) * 2 + (qx % 2);
            for (index_t ic = 0; ic < x.c; ++ic)
              acc += w[(ic * out_ch + oc) * 8 + p] * x.at(n, ic, qz / 2, qy / 2, qx / 2);
            y.at(n, oc, qz, qy, qx) = acc;
          }
  return y;
}

std::vector<double> random_vec(size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return v;
}

double project(const Tensor5& y, const Tensor5& r) {
  double acc = 0.0;
  for (size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * r.data[i];
  return acc;
}

}  // namespace

TEST(Conv3, MatchesDirectSummation) {
  Rng rng(101);
  struct Case {
    index_t cin, cout, k, s, d, h, w;
  } cases[] = {
      {3, 4, 3, 1, 4, 5, 6},
      {2, 3, 1, 1, 3, 3, 3},
      {1, 2, 5, 1, 6, 6, 5},
      {3, 4, 3, 2, 5, 6, 7},  // odd extents, ceil semantics
      {2, 2, 3, 2, 4, 4, 4},
      {24, 24, 3, 1, 3, 4, 5},  // wide enough to stay on the gemm path
      {16, 32, 3, 1, 3, 3, 3},  // widest shape the tap path accepts
      {2, 3, 3, 1, 3, 3, 2},    // rows narrower than the kernel
      {2, 2, 3, 1, 2, 2, 1},
  };
  for (const auto& cs : cases) {
    Tensor5 x = vt::random_tensor(2, cs.cin, cs.d, cs.h, cs.w, rng);
    auto w = random_vec(static_cast<size_t>(cs.cout * cs.cin * cs.k * cs.k * cs.k), rng);
    auto b = random_vec(static_cast<size_t>(cs.cout), rng);
    Tensor5 want = conv_ref(x, w, b, cs.cout, cs.k, cs.s);
    Tensor5 got;
    conv3_forward(x, w, b, ConvShape{cs.cin, cs.cout, cs.k, cs.s}, got);
    ASSERT_EQ(got.d, (cs.d + cs.s - 1) / cs.s);
    ASSERT_EQ(got.h, (cs.h + cs.s - 1) / cs.s);
    ASSERT_EQ(got.w, (cs.w + cs.s - 1) / cs.s);
    vt::expect_allclose(got.data, want.data, 1e-12, "conv3 vs direct summation");
  }
}

TEST(Conv3, CenterDeltaKernelIsIdentity) {
  Rng rng(102);
  const index_t c = 3;
  Tensor5 x = vt::random_tensor(1, c, 5, 4, 6, rng);
  std::vector<double> w(static_cast<size_t>(c * c * 27), 0.0);
  for (index_t i = 0; i < c; ++i) w[(((i * c + i) * 3 + 1) * 3 + 1) * 3 + 1] = 1.0;
  std::vector<double> b(c, 0.0);
  Tensor5 y;
  conv3_forward(x, w, b, ConvShape{c, c, 3, 1}, y);
  vt::expect_allclose(y.data, x.data, 0.0, "center delta kernel passes input through");
}

TEST(Conv3, EvenKernelRejected) {
  Tensor5 x(1, 1, 4, 4, 4);
  std::vector<double> w(8, 0.0), b(1, 0.0);
  Tensor5 y;
  EXPECT_THROW(conv3_forward(x, w, b, ConvShape{1, 1, 2, 1}, y), InvalidSpec);
}

// Conv output is linear in weights, biases, and input, so central differences
// are exact up to roundoff; the comparison tolerance is tight.
TEST(Conv3, BackwardMatchesFiniteDifference) {
  Rng rng(103);
  for (index_t s : {index_t{1}, index_t{2}}) {
    const index_t cin = 3, cout = 4, k = 3;
    Tensor5 x = vt::random_tensor(2, cin, 4, 5, 3, rng);
    auto w = random_vec(static_cast<size_t>(cout * cin * 27), rng, 0.3);
    auto b = random_vec(static_cast<size_t>(cout), rng, 0.3);
    const ConvShape cs{cin, cout, k, s};
    Tensor5 y;
    conv3_forward(x, w, b, cs, y);
    Tensor5 r = vt::random_tensor(y.n, y.c, y.d, y.h, y.w, rng);

    Tensor5 gx(x.n, x.c, x.d, x.h, x.w);
    std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
    conv3_backward(x, w, r, cs, gx, gw, gb);

    auto loss = [&] {
      Tensor5 t;
      conv3_forward(x, w, b, cs, t);
      return project(t, r);
    };
    const double step = 1e-4;
    for (size_t i = 0; i < w.size(); ++i)
      ASSERT_LT(vt::rel_err(gw[i], vt::central_diff(w, i, step, loss)), 1e-6) << "gw[" << i << "] stride " << s;
    for (size_t i = 0; i < b.size(); ++i)
      ASSERT_LT(vt::rel_err(gb[i], vt::central_diff(b, i, step, loss)), 1e-6) << "gb[" << i << "]";
    for (size_t i = 0; i < x.data.size(); ++i)
      ASSERT_LT(vt::rel_err(gx.data[i], vt::central_diff(x.data, i, step, loss)), 1e-6) << "gx[" << i << "]";
  }
}

// Same check with enough channels that the column-matrix path handles the
// stride-1 case too.
TEST(Conv3, BackwardWideChannelsMatchesFiniteDifference) {
  Rng rng(104);
  const index_t cin = 16, cout = 17;
  const ConvShape cs{cin, cout, 3, 1};
  Tensor5 x = vt::random_tensor(1, cin, 3, 3, 3, rng);
  auto w = random_vec(static_cast<size_t>(cout * cin * 27), rng, 0.2);
  auto b = random_vec(static_cast<size_t>(cout), rng, 0.2);
  Tensor5 y;
  conv3_forward(x, w, b, cs, y);
  Tensor5 r = vt::random_tensor(y.n, y.c, y.d, y.h, y.w, rng);
  Tensor5 gx(x.n, x.c, x.d, x.h, x.w);
  std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
  conv3_backward(x, w, r, cs, gx, gw, gb);
  auto loss = [&] {
    Tensor5 t;
    conv3_forward(x, w, b, cs, t);
    return project(t, r);
  };
  const double step = 1e-4;
  for (size_t i = 0; i < w.size(); i += 5)
    ASSERT_LT(vt::rel_err(gw[i], vt::central_diff(w, i, step, loss)), 1e-6) << "gw[" << i << "]";
  for (size_t i = 0; i < b.size(); ++i)
    ASSERT_LT(vt::rel_err(gb[i], vt::central_diff(b, i, step, loss)), 1e-6) << "gb[" << i << "]";
  for (size_t i = 0; i < x.data.size(); i += 3)
    ASSERT_LT(vt::rel_err(gx.data[i], vt::central_diff(x.data, i, step, loss)), 1e-6) << "gx[" << i << "]";
}

TEST(Conv3, BackwardAccumulates) {
  Rng rng(104);
  const ConvShape cs{2, 3, 3, 1};
  Tensor5 x = vt::random_tensor(1, 2, 3, 3, 3, rng);
  auto w = random_vec(static_cast<size_t>(3 * 2 * 27), rng);
  auto b = random_vec(3, rng);
  Tensor5 y;
  conv3_forward(x, w, b, cs, y);
  Tensor5 go = vt::random_tensor(y.n, y.c, y.d, y.h, y.w, rng);
  Tensor5 gx1(1, 2, 3, 3, 3);
  std::vector<double> gw1(w.size(), 0.0), gb1(3, 0.0);
  conv3_backward(x, w, go, cs, gx1, gw1, gb1);
  Tensor5 gx2 = gx1;
  std::vector<double> gw2 = gw1, gb2 = gb1;
  conv3_backward(x, w, go, cs, gx2, gw2, gb2);
  for (size_t i = 0; i < gw1.size(); ++i) ASSERT_NEAR(gw2[i], 2.0 * gw1[i], 1e-12);
  for (size_t i = 0; i < gb1.size(); ++i) ASSERT_NEAR(gb2[i], 2.0 * gb1[i], 1e-12);
  for (size_t i = 0; i < gx1.data.size(); ++i) ASSERT_NEAR(gx2.data[i], 2.0 * gx1.data[i], 1e-12);
}

TEST(ConvT3, MatchesGatherReference) {
  Rng rng(105);
  const index_t cin = 3, cout = 2;
  Tensor5 x = vt::random_tensor(2, cin, 3, 4, 2, rng);
  auto w = random_vec(static_cast<size_t>(cin * cout * 8), rng);
  auto b = random_vec(static_cast<size_t>(cout), rng);
  Tensor5 want = convt_ref(x, w, b, cout);
  Tensor5 got;
  convt3_forward(x, w, b, cout, got);
  ASSERT_EQ(got.d, 2 * x.d);
  ASSERT_EQ(got.h, 2 * x.h);
  ASSERT_EQ(got.w, 2 * x.w);
  vt::expect_allclose(got.data, want.data, 1e-12, "convt3 vs gather reference");
}

// Every output voxel receives exactly one (offset, input voxel) contribution.
TEST(ConvT3, PartitionsOutput) {
  Tensor5 x(1, 1, 2, 2, 2, 1.0);
  std::vector<double> w(8, 1.0), b(1, 0.0);
  Tensor5 y;
  convt3_forward(x, w, b, 1, y);
  for (double v : y.data) ASSERT_EQ(v, 1.0);
}

TEST(ConvT3, BackwardMatchesFiniteDifference) {
  Rng rng(106);
  const index_t cin = 3, cout = 2;
  Tensor5 x = vt::random_tensor(1, cin, 2, 3, 2, rng);
  auto w = random_vec(static_cast<size_t>(cin * cout * 8), rng, 0.5);
  auto b = random_vec(static_cast<size_t>(cout), rng, 0.5);
  Tensor5 y;
  convt3_forward(x, w, b, cout, y);
  Tensor5 r = vt::random_tensor(y.n, y.c, y.d, y.h, y.w, rng);

  Tensor5 gx(x.n, x.c, x.d, x.h, x.w);
  std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
  convt3_backward(x, w, r, cout, gx, gw, gb);

  auto loss = [&] {
    Tensor5 t;
    convt3_forward(x, w, b, cout, t);
    return project(t, r);
  };
  const double step = 1e-4;
  for (size_t i = 0; i < w.size(); ++i) ASSERT_LT(vt::rel_err(gw[i], vt::central_diff(w, i, step, loss)), 1e-6);
  for (size_t i = 0; i < b.size(); ++i) ASSERT_LT(vt::rel_err(gb[i], vt::central_diff(b, i, step, loss)), 1e-6);
  for (size_t i = 0; i < x.data.size(); ++i)
    ASSERT_LT(vt::rel_err(gx.data[i], vt::central_diff(x.data, i, step, loss)), 1e-6);
}

TEST(LeakyRelu, ForwardTableAndZeroDerivative) {
  Tensor5 x(1, 1, 1, 1, 4);
  x.data = {2.0, -3.0, 0.0, -0.5};
  Tensor5 y;
  leaky_relu_forward(x, 0.01, y);
  EXPECT_EQ(y.data[0], 2.0);
  EXPECT_EQ(y.data[1], -0.03);
  EXPECT_EQ(y.data[2], 0.0);
  EXPECT_EQ(y.data[3], -0.005);
  Tensor5 go(1, 1, 1, 1, 4, 1.0), gx(1, 1, 1, 1, 4);
  leaky_relu_backward(y, go, 0.01, gx);
  EXPECT_EQ(gx.data[0], 1.0);
  EXPECT_EQ(gx.data[1], 0.01);
  EXPECT_EQ(gx.data[2], 1.0);  // derivative at exactly zero defined as 1
  EXPECT_EQ(gx.data[3], 0.01);
}

TEST(LeakyRelu, BackwardMatchesFiniteDifferenceAwayFromZero) {
  Rng rng(107);
  Tensor5 x = vt::random_tensor(1, 2, 3, 3, 3, rng);
  for (auto& v : x.data)
    if (std::fabs(v) < 1e-2) v = 0.5;  // keep clear of the kink
  Tensor5 y;
  leaky_relu_forward(x, 0.01, y);
  Tensor5 r = vt::random_tensor(1, 2, 3, 3, 3, rng);
  Tensor5 gx(1, 2, 3, 3, 3);
  leaky_relu_backward(y, r, 0.01, gx);
  auto loss = [&] {
    Tensor5 t;
    leaky_relu_forward(x, 0.01, t);
    return project(t, r);
  };
  for (size_t i = 0; i < x.data.size(); ++i)
    ASSERT_LT(vt::rel_err(gx.data[i], vt::central_diff(x.data, i, 1e-5, loss)), 1e-6);
}

TEST(Softmax, MatchesExpSumReferenceAndNormalizes) {
  Rng rng(108);
  Tensor5 x = vt::random_tensor(2, 4, 2, 2, 2, rng, 3.0);
  Tensor5 p;
  softmax_channel_forward(x, p);
  for (index_t n = 0; n < 2; ++n)
    for (index_t v = 0; v < x.voxels(); ++v) {
      double sum = 0.0;
      for (index_t c = 0; c < 4; ++c) sum += std::exp(x.channel(n, c)[v]);
      double total = 0.0;
      for (index_t c = 0; c < 4; ++c) {
        const double want = std::exp(x.channel(n, c)[v]) / sum;
        ASSERT_NEAR(p.channel(n, c)[v], want, 1e-12);
        ASSERT_GT(p.channel(n, c)[v], 0.0);
        total += p.channel(n, c)[v];
      }
      ASSERT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Softmax, InvariantToConstantShift) {
  Rng rng(109);
  Tensor5 x = vt::random_tensor(1, 3, 2, 2, 2, rng);
  Tensor5 shifted = x;
  for (index_t c = 0; c < 3; ++c)
    for (index_t v = 0; v < x.voxels(); ++v) shifted.channel(0, c)[v] += 123.456;
  Tensor5 p1, p2;
  softmax_channel_forward(x, p1);
  softmax_channel_forward(shifted, p2);
  vt::expect_allclose(p1.data, p2.data, 1e-12, "softmax shift invariance");
}

TEST(Softmax, BackwardMatchesFiniteDifference) {
  Rng rng(110);
  Tensor5 x = vt::random_tensor(1, 3, 2, 2, 2, rng);
  Tensor5 p;
  softmax_channel_forward(x, p);
  Tensor5 r = vt::random_tensor(1, 3, 2, 2, 2, rng);
  Tensor5 gx(1, 3, 2, 2, 2);
  softmax_channel_backward(p, r, gx);
  auto loss = [&] {
    Tensor5 t;
    softmax_channel_forward(x, t);
    return project(t, r);
  };
  for (size_t i = 0; i < x.data.size(); ++i)
    ASSERT_LT(vt::rel_err(gx.data[i], vt::central_diff(x.data, i, 1e-5, loss)), 1e-5);
}

TEST(Concat, ForwardLayoutAndBackwardSplit) {
  Rng rng(111);
  Tensor5 a = vt::random_tensor(2, 2, 2, 2, 2, rng);
  Tensor5 b = vt::random_tensor(2, 3, 2, 2, 2, rng);
  Tensor5 y;
  concat_channels_forward(a, b, y);
  ASSERT_EQ(y.c, 5);
  for (index_t n = 0; n < 2; ++n) {
    for (index_t c = 0; c < 2; ++c)
      for (index_t v = 0; v < a.voxels(); ++v) ASSERT_EQ(y.channel(n, c)[v], a.channel(n, c)[v]);
    for (index_t c = 0; c < 3; ++c)
      for (index_t v = 0; v < b.voxels(); ++v) ASSERT_EQ(y.channel(n, 2 + c)[v], b.channel(n, c)[v]);
  }
  Tensor5 go = vt::random_tensor(2, 5, 2, 2, 2, rng);
  Tensor5 ga(2, 2, 2, 2, 2), gb(2, 3, 2, 2, 2);
  concat_channels_backward(go, ga, gb);
  for (index_t n = 0; n < 2; ++n) {
    for (index_t c = 0; c < 2; ++c)
      for (index_t v = 0; v < a.voxels(); ++v) ASSERT_EQ(ga.channel(n, c)[v], go.channel(n, c)[v]);
    for (index_t c = 0; c < 3; ++c)
      for (index_t v = 0; v < b.voxels(); ++v) ASSERT_EQ(gb.channel(n, c)[v], go.channel(n, 2 + c)[v]);
  }
  EXPECT_THROW(concat_channels_forward(a, Tensor5(2, 1, 3, 2, 2), y), ShapeMismatch);
}
