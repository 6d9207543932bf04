#pragma once

#include <cmath>

#include "voxseg/errors.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/conv.hpp"

namespace voxseg {

inline void leaky_relu_forward(const Tensor5& x, double slope, Tensor5& y) {
  detail::ensure_shape(y, x.n, x.c, x.d, x.h, x.w);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double v = x.data[i];
    y.data[i] = v >= 0.0 ? v : slope * v;
  }
}

// The activation mask is recovered from the output sign: y >= 0 iff x >= 0
// for slope > 0, and the derivative at exactly zero is defined as 1.
inline void leaky_relu_backward(const Tensor5& y, const Tensor5& go, double slope, Tensor5& gx) {
  if (!y.same_shape(go) || !y.same_shape(gx)) throw ShapeMismatch("leaky_relu_backward: shape mismatch");
  for (size_t i = 0; i < y.data.size(); ++i) gx.data[i] += go.data[i] * (y.data[i] >= 0.0 ? 1.0 : slope);
}

// Channelwise softmax per voxel, max-subtracted for stability.
inline void softmax_channel_forward(const Tensor5& x, Tensor5& y) {
  detail::ensure_shape(y, x.n, x.c, x.d, x.h, x.w);
  const index_t vox = x.voxels();
  for (index_t n = 0; n < x.n; ++n)
    for (index_t v = 0; v < vox; ++v) {
      double mx = -HUGE_VAL;
      for (index_t c = 0; c < x.c; ++c) mx = std::max(mx, x.channel(n, c)[v]);
      double sum = 0.0;
      for (index_t c = 0; c < x.c; ++c) {
        const double e = std::exp(x.channel(n, c)[v] - mx);
        y.channel(n, c)[v] = e;
        sum += e;
      }
      for (index_t c = 0; c < x.c; ++c) y.channel(n, c)[v] /= sum;
    }
}

// dz_c = p_c * (g_c - sum_k p_k g_k)
inline void softmax_channel_backward(const Tensor5& p, const Tensor5& go, Tensor5& gx) {
  if (!p.same_shape(go) || !p.same_shape(gx)) throw ShapeMismatch("softmax_backward: shape mismatch");
  const index_t vox = p.voxels();
  for (index_t n = 0; n < p.n; ++n)
    for (index_t v = 0; v < vox; ++v) {
      double dot = 0.0;
      for (index_t c = 0; c < p.c; ++c) dot += p.channel(n, c)[v] * go.channel(n, c)[v];
      for (index_t c = 0; c < p.c; ++c) gx.channel(n, c)[v] += p.channel(n, c)[v] * (go.channel(n, c)[v] - dot);
    }
}

// Channel concatenation [a; b] with identical spatial extents.
inline void concat_channels_forward(const Tensor5& a, const Tensor5& b, Tensor5& y) {
  if (a.n != b.n || a.d != b.d || a.h != b.h || a.w != b.w)
    throw ShapeMismatch("concat: spatial/batch extents differ");
  detail::ensure_shape(y, a.n, a.c + b.c, a.d, a.h, a.w);
  const index_t vox = a.voxels();
  for (index_t n = 0; n < a.n; ++n) {
    for (index_t c = 0; c < a.c; ++c) std::copy(a.channel(n, c), a.channel(n, c) + vox, y.channel(n, c));
    for (index_t c = 0; c < b.c; ++c) std::copy(b.channel(n, c), b.channel(n, c) + vox, y.channel(n, a.c + c));
  }
}

inline void concat_channels_backward(const Tensor5& go, Tensor5& ga, Tensor5& gb) {
  if (go.c != ga.c + gb.c || go.n != ga.n || go.d != ga.d || go.h != ga.h || go.w != ga.w)
    throw ShapeMismatch("concat_backward: shape mismatch");
  const index_t vox = go.voxels();
  for (index_t n = 0; n < go.n; ++n) {
    for (index_t c = 0; c < ga.c; ++c) {
      const double* src = go.channel(n, c);
      double* dst = ga.channel(n, c);
      for (index_t i = 0; i < vox; ++i) dst[i] += src[i];
    }
    for (index_t c = 0; c < gb.c; ++c) {
      const double* src = go.channel(n, ga.c + c);
      double* dst = gb.channel(n, c);
      for (index_t i = 0; i < vox; ++i) dst[i] += src[i];
    }
  }
}

}  // namespace voxseg
