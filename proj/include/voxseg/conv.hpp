#pragma once

#include <algorithm>
#include <vector>

#include <cblas.h>

#include "voxseg/errors.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

// "Same" convolution geometry: odd kernel, (k-1)/2 zero padding per side,
// output extent ceil(in/stride).
inline index_t conv_out_extent(index_t e, index_t stride) { return (e + stride - 1) / stride; }

struct ConvShape {
  index_t in_ch = 0;
  index_t out_ch = 0;
  index_t k = 3;
  index_t stride = 1;

  index_t kernel_volume() const { return k * k * k; }
  index_t weight_count() const { return out_ch * in_ch * kernel_volume(); }
};

namespace detail {

// im2col slab over output depth [oz0, oz1). Row r = ((ic*k+dz)*k+dy)*k+dx,
// columns enumerate output voxels of the slab, width fastest. Rows line up
// with weight layout [out_ch][in_ch][kz][ky][kx], so Y = W * Xcol directly.
inline void build_im2col(const double* x, index_t cin, index_t d, index_t h, index_t w, index_t k, index_t s,
                         index_t oz0, index_t oz1, index_t oh, index_t ow, double* col) {
  const index_t pad = (k - 1) / 2;
  double* out = col;
  for (index_t ic = 0; ic < cin; ++ic) {
    const double* src = x + ic * d * h * w;
    for (index_t dz = 0; dz < k; ++dz)
      for (index_t dy = 0; dy < k; ++dy)
        for (index_t dx = 0; dx < k; ++dx) {
          for (index_t oz = oz0; oz < oz1; ++oz) {
            const index_t iz = oz * s + dz - pad;
            if (iz < 0 || iz >= d) {
              std::fill(out, out + oh * ow, 0.0);
              out += oh * ow;
              continue;
            }
            const double* plane = src + iz * h * w;
            for (index_t oy = 0; oy < oh; ++oy) {
              const index_t iy = oy * s + dy - pad;
              if (iy < 0 || iy >= h) {
                std::fill(out, out + ow, 0.0);
                out += ow;
                continue;
              }
              const double* line = plane + iy * w;
              if (s == 1) {
                const index_t ix0 = dx - pad;
                index_t lo = std::max<index_t>(0, -ix0);
                index_t hi = std::min<index_t>(ow, w - ix0);
                if (hi < lo) hi = lo;
                std::fill(out, out + lo, 0.0);
                std::copy(line + ix0 + lo, line + ix0 + hi, out + lo);
                std::fill(out + hi, out + ow, 0.0);
                out += ow;
              } else {
                for (index_t ox = 0; ox < ow; ++ox) {
                  const index_t ix = ox * s + dx - pad;
                  *out++ = (ix >= 0 && ix < w) ? line[ix] : 0.0;
                }
              }
            }
          }
        }
  }
}

// Adjoint of build_im2col: scatter-add columns back into the input grid.
inline void scatter_col2im(const double* col, index_t cin, index_t d, index_t h, index_t w, index_t k, index_t s,
                           index_t oz0, index_t oz1, index_t oh, index_t ow, double* gx) {
  const index_t pad = (k - 1) / 2;
  const double* in = col;
  for (index_t ic = 0; ic < cin; ++ic) {
    double* dst = gx + ic * d * h * w;
    for (index_t dz = 0; dz < k; ++dz)
      for (index_t dy = 0; dy < k; ++dy)
        for (index_t dx = 0; dx < k; ++dx) {
          for (index_t oz = oz0; oz < oz1; ++oz) {
            const index_t iz = oz * s + dz - pad;
            if (iz < 0 || iz >= d) {
              in += oh * ow;
              continue;
            }
            double* plane = dst + iz * h * w;
            for (index_t oy = 0; oy < oh; ++oy) {
              const index_t iy = oy * s + dy - pad;
              if (iy < 0 || iy >= h) {
                in += ow;
                continue;
              }
              double* line = plane + iy * w;
              for (index_t ox = 0; ox < ow; ++ox) {
                const index_t ix = ox * s + dx - pad;
                if (ix >= 0 && ix < w) line[ix] += in[ox];
              }
              in += ow;
            }
          }
        }
  }
}

// Output-depth slab size that keeps the im2col buffer near 128 MB.
inline index_t conv_slab_depth(index_t rows, index_t oh, index_t ow, index_t od) {
  constexpr index_t kBudgetDoubles = (128ll << 20) / 8;
  index_t per_slice = rows * oh * ow;
  index_t slices = per_slice > 0 ? std::max<index_t>(1, kBudgetDoubles / per_slice) : od;
  return std::min(od, slices);
}

inline std::vector<double>& conv_scratch() {
  static thread_local std::vector<double> buf;
  return buf;
}

inline std::vector<double>& convt_scratch(int which) {
  static thread_local std::vector<double> buf[3];
  return buf[which];
}

inline void ensure_shape(Tensor5& t, index_t n, index_t c, index_t d, index_t h, index_t w) {
  if (t.n == n && t.c == c && t.d == d && t.h == h && t.w == w && t.data.size() == size_t(n * c * d * h * w)) return;
  t = Tensor5(n, c, d, h, w);
}

// With few channels the im2col matrix is 27x-duplicated memory traffic that
// dwarfs the arithmetic, so narrow stride-1 33 convs run as fused tap
// accumulation over one output row at a time instead. Identical math to the
// gemm path up to summation order.
inline bool conv3_prefers_taps(const ConvShape& cs) {
  return cs.k == 3 && cs.stride == 1 && cs.in_ch * cs.out_ch <= 512;
}

inline void conv3_forward_taps(const Tensor5& x, const std::vector<double>& w, const std::vector<double>& b,
                               const ConvShape& cs, Tensor5& y) {
  const index_t d = x.d, h = x.h, ww = x.w;
  const index_t vox = d * h * ww;
  for (index_t n = 0; n < x.n; ++n) {
    const double* xb = x.channel(n, 0);
    double* yb = y.channel(n, 0);
    for (index_t oz = 0; oz < d; ++oz) {
      for (index_t oy = 0; oy < h; ++oy) {
        const index_t row = (oz * h + oy) * ww;
        for (index_t co = 0; co < cs.out_ch; ++co) std::fill(yb + co * vox + row, yb + co * vox + row + ww, b[co]);
        for (index_t ci = 0; ci < cs.in_ch; ++ci) {
          const double* xch = xb + ci * vox;
          for (index_t dz = 0; dz < 3; ++dz) {
            const index_t iz = oz + dz - 1;
            if (iz < 0 || iz >= d) continue;
            const double* plane = xch + iz * h * ww;
            if (oy > 0 && oy + 1 < h && ww >= 3) {
              // all nine in-plane taps land inside the grid: one fused pass
              const double* __restrict s0 = plane + (oy - 1) * ww;
              const double* __restrict s1 = plane + oy * ww;
              const double* __restrict s2 = plane + (oy + 1) * ww;
              const index_t wstride = cs.in_ch * 27;
              const double* wt = w.data() + (ci * 3 + dz) * 9;
              index_t co = 0;
              // pairs of output channels share one sweep of the three source rows
              for (; co + 1 < cs.out_ch; co += 2, wt += 2 * wstride) {
                const double* wu = wt + wstride;
                double* __restrict da = yb + co * vox + row;
                double* __restrict db = yb + (co + 1) * vox + row;
                da[0] += wt[1] * s0[0] + wt[2] * s0[1] + wt[4] * s1[0] + wt[5] * s1[1] + wt[7] * s2[0] +
                         wt[8] * s2[1];
                db[0] += wu[1] * s0[0] + wu[2] * s0[1] + wu[4] * s1[0] + wu[5] * s1[1] + wu[7] * s2[0] +
                         wu[8] * s2[1];
                const double a0 = wt[0], a1 = wt[1], a2 = wt[2], a3 = wt[3], a4 = wt[4], a5 = wt[5], a6 = wt[6],
                             a7 = wt[7], a8 = wt[8];
                const double b0 = wu[0], b1 = wu[1], b2 = wu[2], b3 = wu[3], b4 = wu[4], b5 = wu[5], b6 = wu[6],
                             b7 = wu[7], b8 = wu[8];
                for (index_t ox = 1; ox < ww - 1; ++ox) {
                  const double v00 = s0[ox - 1], v01 = s0[ox], v02 = s0[ox + 1];
                  const double v10 = s1[ox - 1], v11 = s1[ox], v12 = s1[ox + 1];
                  const double v20 = s2[ox - 1], v21 = s2[ox], v22 = s2[ox + 1];
                  da[ox] += a0 * v00 + a1 * v01 + a2 * v02 + a3 * v10 + a4 * v11 + a5 * v12 + a6 * v20 +
                            a7 * v21 + a8 * v22;
                  db[ox] += b0 * v00 + b1 * v01 + b2 * v02 + b3 * v10 + b4 * v11 + b5 * v12 + b6 * v20 +
                            b7 * v21 + b8 * v22;
                }
                da[ww - 1] += wt[0] * s0[ww - 2] + wt[1] * s0[ww - 1] + wt[3] * s1[ww - 2] + wt[4] * s1[ww - 1] +
                              wt[6] * s2[ww - 2] + wt[7] * s2[ww - 1];
                db[ww - 1] += wu[0] * s0[ww - 2] + wu[1] * s0[ww - 1] + wu[3] * s1[ww - 2] + wu[4] * s1[ww - 1] +
                              wu[6] * s2[ww - 2] + wu[7] * s2[ww - 1];
              }
              for (; co < cs.out_ch; ++co, wt += wstride) {
                double* __restrict dst = yb + co * vox + row;
                dst[0] += wt[1] * s0[0] + wt[2] * s0[1] + wt[4] * s1[0] + wt[5] * s1[1] + wt[7] * s2[0] +
                          wt[8] * s2[1];
                const double w0 = wt[0], w1 = wt[1], w2 = wt[2], w3 = wt[3], w4 = wt[4], w5 = wt[5], w6 = wt[6],
                             w7 = wt[7], w8 = wt[8];
                for (index_t ox = 1; ox < ww - 1; ++ox)
                  dst[ox] += w0 * s0[ox - 1] + w1 * s0[ox] + w2 * s0[ox + 1] + w3 * s1[ox - 1] + w4 * s1[ox] +
                             w5 * s1[ox + 1] + w6 * s2[ox - 1] + w7 * s2[ox] + w8 * s2[ox + 1];
                dst[ww - 1] += wt[0] * s0[ww - 2] + wt[1] * s0[ww - 1] + wt[3] * s1[ww - 2] + wt[4] * s1[ww - 1] +
                               wt[6] * s2[ww - 2] + wt[7] * s2[ww - 1];
              }
              continue;
            }
            for (index_t dy = 0; dy < 3; ++dy) {
              const index_t iy = oy + dy - 1;
              if (iy < 0 || iy >= h) continue;
              const double* __restrict src = plane + iy * ww;
              for (index_t co = 0; co < cs.out_ch; ++co) {
                const double* wt = w.data() + (((co * cs.in_ch + ci) * 3 + dz) * 3 + dy) * 3;
                const double w0 = wt[0], w1 = wt[1], w2 = wt[2];
                double* __restrict dst = yb + co * vox + row;
                if (ww >= 3) {
                  dst[0] += w1 * src[0] + w2 * src[1];
                  for (index_t ox = 1; ox < ww - 1; ++ox)
                    dst[ox] += w0 * src[ox - 1] + w1 * src[ox] + w2 * src[ox + 1];
                  dst[ww - 1] += w0 * src[ww - 2] + w1 * src[ww - 1];
                } else {
                  for (index_t ox = 0; ox < ww; ++ox) {
                    if (ox > 0) dst[ox] += w0 * src[ox - 1];
                    dst[ox] += w1 * src[ox];
                    if (ox + 1 < ww) dst[ox] += w2 * src[ox + 1];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

// Backward companion to the tap path. gx is the flipped-kernel convolution of
// go (same row-fused walk with the tap indices reversed); gw reduces row dot
// products into nine per-plane accumulators. All three outputs accumulate.
inline void conv3_backward_taps(const Tensor5& x, const std::vector<double>& w, const Tensor5& go,
                                const ConvShape& cs, Tensor5& gx, std::vector<double>& gw, std::vector<double>& gb) {
  const index_t d = x.d, h = x.h, ww = x.w;
  const index_t vox = d * h * ww;
  for (index_t n = 0; n < x.n; ++n) {
    for (index_t co = 0; co < cs.out_ch; ++co) {
      const double* goch = go.channel(n, co);
      double acc = 0.0;
      for (index_t i = 0; i < vox; ++i) acc += goch[i];
      gb[co] += acc;
    }

    const double* gob = go.channel(n, 0);
    double* gxb = gx.channel(n, 0);
    for (index_t oz = 0; oz < d; ++oz) {
      for (index_t oy = 0; oy < h; ++oy) {
        const index_t row = (oz * h + oy) * ww;
        for (index_t co = 0; co < cs.out_ch; ++co) {
          const double* goch = gob + co * vox;
          for (index_t uz = 0; uz < 3; ++uz) {
            const index_t iz = oz + uz - 1;
            if (iz < 0 || iz >= d) continue;
            const double* plane = goch + iz * h * ww;
            const double* wco = w.data() + co * cs.in_ch * 27 + (2 - uz) * 9;
            if (oy > 0 && oy + 1 < h && ww >= 3) {
              const double* __restrict s0 = plane + (oy - 1) * ww;
              const double* __restrict s1 = plane + oy * ww;
              const double* __restrict s2 = plane + (oy + 1) * ww;
              for (index_t ci = 0; ci < cs.in_ch; ++ci, wco += 27) {
                // taps flipped in y and x: row j pairs with source row 2-j
                const double w0 = wco[8], w1 = wco[7], w2 = wco[6], w3 = wco[5], w4 = wco[4], w5 = wco[3],
                             w6 = wco[2], w7 = wco[1], w8 = wco[0];
                double* __restrict dst = gxb + ci * vox + row;
                dst[0] += w1 * s0[0] + w2 * s0[1] + w4 * s1[0] + w5 * s1[1] + w7 * s2[0] + w8 * s2[1];
                for (index_t ox = 1; ox < ww - 1; ++ox)
                  dst[ox] += w0 * s0[ox - 1] + w1 * s0[ox] + w2 * s0[ox + 1] + w3 * s1[ox - 1] + w4 * s1[ox] +
                             w5 * s1[ox + 1] + w6 * s2[ox - 1] + w7 * s2[ox] + w8 * s2[ox + 1];
                dst[ww - 1] += w0 * s0[ww - 2] + w1 * s0[ww - 1] + w3 * s1[ww - 2] + w4 * s1[ww - 1] +
                               w6 * s2[ww - 2] + w7 * s2[ww - 1];
              }
              continue;
            }
            for (index_t uy = 0; uy < 3; ++uy) {
              const index_t iy = oy + uy - 1;
              if (iy < 0 || iy >= h) continue;
              const double* __restrict src = plane + iy * ww;
              const double* wrow = wco + (2 - uy) * 3;
              for (index_t ci = 0; ci < cs.in_ch; ++ci) {
                const double w0 = wrow[ci * 27 + 2], w1 = wrow[ci * 27 + 1], w2 = wrow[ci * 27 + 0];
                double* __restrict dst = gxb + ci * vox + row;
                for (index_t ox = 0; ox < ww; ++ox) {
                  if (ox > 0) dst[ox] += w0 * src[ox - 1];
                  dst[ox] += w1 * src[ox];
                  if (ox + 1 < ww) dst[ox] += w2 * src[ox + 1];
                }
              }
            }
          }
        }
      }
    }

    const double* xb = x.channel(n, 0);
    for (index_t co = 0; co < cs.out_ch; ++co) {
      const double* goch = gob + co * vox;
      for (index_t ci = 0; ci < cs.in_ch; ++ci) {
        const double* xch = xb + ci * vox;
        double* gwk = gw.data() + (co * cs.in_ch + ci) * 27;
        for (index_t dz = 0; dz < 3; ++dz) {
          double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0, a8 = 0;
          for (index_t oz = 0; oz < d; ++oz) {
            const index_t iz = oz + dz - 1;
            if (iz < 0 || iz >= d) continue;
            const double* xplane = xch + iz * h * ww;
            const double* gplane = goch + oz * h * ww;
            for (index_t oy = 0; oy < h; ++oy) {
              const double* __restrict g = gplane + oy * ww;
              if (oy > 0 && oy + 1 < h && ww >= 3) {
                const double* __restrict s0 = xplane + (oy - 1) * ww;
                const double* __restrict s1 = xplane + oy * ww;
                const double* __restrict s2 = xplane + (oy + 1) * ww;
                a1 += g[0] * s0[0];
                a2 += g[0] * s0[1];
                a4 += g[0] * s1[0];
                a5 += g[0] * s1[1];
                a7 += g[0] * s2[0];
                a8 += g[0] * s2[1];
#pragma omp simd reduction(+ : a0, a1, a2, a3, a4, a5, a6, a7, a8)
                for (index_t ox = 1; ox < ww - 1; ++ox) {
                  const double gv = g[ox];
                  a0 += gv * s0[ox - 1];
                  a1 += gv * s0[ox];
                  a2 += gv * s0[ox + 1];
                  a3 += gv * s1[ox - 1];
                  a4 += gv * s1[ox];
                  a5 += gv * s1[ox + 1];
                  a6 += gv * s2[ox - 1];
                  a7 += gv * s2[ox];
                  a8 += gv * s2[ox + 1];
                }
                const double ge = g[ww - 1];
                a0 += ge * s0[ww - 2];
                a1 += ge * s0[ww - 1];
                a3 += ge * s1[ww - 2];
                a4 += ge * s1[ww - 1];
                a6 += ge * s2[ww - 2];
                a7 += ge * s2[ww - 1];
              } else {
                for (index_t dy = 0; dy < 3; ++dy) {
                  const index_t iy = oy + dy - 1;
                  if (iy < 0 || iy >= h) continue;
                  const double* __restrict src = xplane + iy * ww;
                  double t0 = 0, t1 = 0, t2 = 0;
                  for (index_t ox = 0; ox < ww; ++ox) {
                    const double gv = g[ox];
                    if (ox > 0) t0 += gv * src[ox - 1];
                    t1 += gv * src[ox];
                    if (ox + 1 < ww) t2 += gv * src[ox + 1];
                  }
                  if (dy == 0) a0 += t0, a1 += t1, a2 += t2;
                  if (dy == 1) a3 += t0, a4 += t1, a5 += t2;
                  if (dy == 2) a6 += t0, a7 += t1, a8 += t2;
                }
              }
            }
          }
          double* gwz = gwk + dz * 9;
          gwz[0] += a0;
          gwz[1] += a1;
          gwz[2] += a2;
          gwz[3] += a3;
          gwz[4] += a4;
          gwz[5] += a5;
          gwz[6] += a6;
          gwz[7] += a7;
          gwz[8] += a8;
        }
      }
    }
  }
}

}  // namespace detail

inline void conv3_check(const Tensor5& x, const std::vector<double>& w, const std::vector<double>& b,
                        const ConvShape& cs) {
  if (cs.k < 1 || cs.k % 2 == 0) throw InvalidSpec("conv3: kernel extent must be odd");
  if (cs.stride != 1 && cs.stride != 2) throw InvalidSpec("conv3: stride must be 1 or 2");
  if (x.c != cs.in_ch) throw ShapeMismatch("conv3: input channel count mismatch");
  if (static_cast<index_t>(w.size()) != cs.weight_count()) throw ShapeMismatch("conv3: weight size mismatch");
  if (static_cast<index_t>(b.size()) != cs.out_ch) throw ShapeMismatch("conv3: bias size mismatch");
}

inline void conv3_forward(const Tensor5& x, const std::vector<double>& w, const std::vector<double>& b,
                          const ConvShape& cs, Tensor5& y) {
  conv3_check(x, w, b, cs);
  const index_t od = conv_out_extent(x.d, cs.stride);
  const index_t oh = conv_out_extent(x.h, cs.stride);
  const index_t ow = conv_out_extent(x.w, cs.stride);
  detail::ensure_shape(y, x.n, cs.out_ch, od, oh, ow);
  if (detail::conv3_prefers_taps(cs)) {
    detail::conv3_forward_taps(x, w, b, cs, y);
    return;
  }
  const index_t rows = cs.in_ch * cs.kernel_volume();
  const index_t slab = detail::conv_slab_depth(rows, oh, ow, od);
  auto& col = detail::conv_scratch();
  col.resize(static_cast<size_t>(rows * slab * oh * ow));
  for (index_t n = 0; n < x.n; ++n) {
    for (index_t oz0 = 0; oz0 < od; oz0 += slab) {
      const index_t oz1 = std::min(od, oz0 + slab);
      const index_t ncols = (oz1 - oz0) * oh * ow;
      detail::build_im2col(x.channel(n, 0), cs.in_ch, x.d, x.h, x.w, cs.k, cs.stride, oz0, oz1, oh, ow, col.data());
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(cs.out_ch), static_cast<int>(ncols),
                  static_cast<int>(rows), 1.0, w.data(), static_cast<int>(rows), col.data(), static_cast<int>(ncols),
                  0.0, y.channel(n, 0) + oz0 * oh * ow, static_cast<int>(y.voxels()));
    }
    for (index_t oc = 0; oc < cs.out_ch; ++oc) {
      double* ych = y.channel(n, oc);
      const double bias = b[oc];
      for (index_t i = 0; i < y.voxels(); ++i) ych[i] += bias;
    }
  }
}

// Accumulates into gx / gw / gb so one activation can feed several consumers
// and batches can sum; callers zero the buffers at sweep start.
inline void conv3_backward(const Tensor5& x, const std::vector<double>& w, const Tensor5& go, const ConvShape& cs,
                           Tensor5& gx, std::vector<double>& gw, std::vector<double>& gb) {
  conv3_check(x, w, gb, cs);
  const index_t od = conv_out_extent(x.d, cs.stride);
  const index_t oh = conv_out_extent(x.h, cs.stride);
  const index_t ow = conv_out_extent(x.w, cs.stride);
  if (go.n != x.n || go.c != cs.out_ch || go.d != od || go.h != oh || go.w != ow)
    throw ShapeMismatch("conv3_backward: output gradient shape mismatch");
  if (!gx.same_shape(x)) throw ShapeMismatch("conv3_backward: input gradient shape mismatch");
  if (gw.size() != w.size()) throw ShapeMismatch("conv3_backward: weight gradient size mismatch");
  if (detail::conv3_prefers_taps(cs)) {
    detail::conv3_backward_taps(x, w, go, cs, gx, gw, gb);
    return;
  }
  const index_t rows = cs.in_ch * cs.kernel_volume();
  const index_t slab = detail::conv_slab_depth(2 * rows, oh, ow, od);
  auto& col = detail::conv_scratch();
  auto& gcol = detail::convt_scratch(0);
  col.resize(static_cast<size_t>(rows * slab * oh * ow));
  gcol.resize(static_cast<size_t>(rows * slab * oh * ow));
  for (index_t n = 0; n < x.n; ++n) {
    for (index_t oc = 0; oc < cs.out_ch; ++oc) {
      const double* goch = go.channel(n, oc);
      double acc = 0.0;
      for (index_t i = 0; i < go.voxels(); ++i) acc += goch[i];
      gb[oc] += acc;
    }
    for (index_t oz0 = 0; oz0 < od; oz0 += slab) {
      const index_t oz1 = std::min(od, oz0 + slab);
      const index_t ncols = (oz1 - oz0) * oh * ow;
      detail::build_im2col(x.channel(n, 0), cs.in_ch, x.d, x.h, x.w, cs.k, cs.stride, oz0, oz1, oh, ow, col.data());
      // dL/dW += GO * Xcol^T
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(cs.out_ch), static_cast<int>(rows),
                  static_cast<int>(ncols), 1.0, go.channel(n, 0) + oz0 * oh * ow, static_cast<int>(go.voxels()),
                  col.data(), static_cast<int>(ncols), 1.0, gw.data(), static_cast<int>(rows));
      // dL/dXcol = W^T * GO, then scatter back through the im2col map
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(rows), static_cast<int>(ncols),
                  static_cast<int>(cs.out_ch), 1.0, w.data(), static_cast<int>(rows),
                  go.channel(n, 0) + oz0 * oh * ow, static_cast<int>(go.voxels()), 0.0, gcol.data(),
                  static_cast<int>(ncols));
      detail::scatter_col2im(gcol.data(), cs.in_ch, x.d, x.h, x.w, cs.k, cs.stride, oz0, oz1, oh, ow,
                             gx.channel(n, 0));
    }
  }
}

// Transpose convolution, fixed kernel 2 and stride 2: exact x2 upsampling,
// each output voxel touched by exactly one (kernel offset, input voxel) pair:
//   y[oc](2z+dz, 2y+dy, 2x+dx) = b[oc] + sum_ic w[ic][oc][dz][dy][dx] * x[ic](z,y,x)
// Weights laid out [in_ch][out_ch][kz][ky][kx].
inline void convt3_check(const Tensor5& x, const std::vector<double>& w, const std::vector<double>& b,
                         index_t out_ch) {
  if (static_cast<index_t>(w.size()) != x.c * out_ch * 8) throw ShapeMismatch("convt3: weight size mismatch");
  if (static_cast<index_t>(b.size()) != out_ch) throw ShapeMismatch("convt3: bias size mismatch");
}

inline void convt3_forward(const Tensor5& x, const std::vector<double>& w, const std::vector<double>& b,
                           index_t out_ch, Tensor5& y) {
  convt3_check(x, w, b, out_ch);
  detail::ensure_shape(y, x.n, out_ch, 2 * x.d, 2 * x.h, 2 * x.w);
  const index_t cin = x.c, nin = x.voxels();
  auto& wp = detail::convt_scratch(1);
  auto& yp = detail::convt_scratch(2);
  wp.resize(static_cast<size_t>(out_ch * cin));
  yp.resize(static_cast<size_t>(out_ch * nin));
  for (index_t n = 0; n < x.n; ++n) {
    for (index_t p = 0; p < 8; ++p) {
      const index_t dz = p >> 2, dy = (p >> 1) & 1, dx = p & 1;
      for (index_t ic = 0; ic < cin; ++ic)
        for (index_t oc = 0; oc < out_ch; ++oc) wp[oc * cin + ic] = w[(ic * out_ch + oc) * 8 + p];
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(out_ch), static_cast<int>(nin),
                  static_cast<int>(cin), 1.0, wp.data(), static_cast<int>(cin), x.channel(n, 0),
                  static_cast<int>(nin), 0.0, yp.data(), static_cast<int>(nin));
      for (index_t oc = 0; oc < out_ch; ++oc) {
        const double* src = yp.data() + oc * nin;
        const double bias = b[oc];
        for (index_t z = 0; z < x.d; ++z)
          for (index_t iy = 0; iy < x.h; ++iy) {
            double* line = &y.at(n, oc, 2 * z + dz, 2 * iy + dy, dx);
            const double* s = src + (z * x.h + iy) * x.w;
            for (index_t ix = 0; ix < x.w; ++ix) line[2 * ix] = s[ix] + bias;
          }
      }
    }
  }
}

inline void convt3_backward(const Tensor5& x, const std::vector<double>& w, const Tensor5& go, index_t out_ch,
                            Tensor5& gx, std::vector<double>& gw, std::vector<double>& gb) {
  convt3_check(x, w, gb, out_ch);
  if (go.n != x.n || go.c != out_ch || go.d != 2 * x.d || go.h != 2 * x.h || go.w != 2 * x.w)
    throw ShapeMismatch("convt3_backward: output gradient shape mismatch");
  if (!gx.same_shape(x)) throw ShapeMismatch("convt3_backward: input gradient shape mismatch");
  if (gw.size() != w.size()) throw ShapeMismatch("convt3_backward: weight gradient size mismatch");
  const index_t cin = x.c, nin = x.voxels();
  auto& wp = detail::convt_scratch(1);
  auto& gop = detail::convt_scratch(2);
  auto& gwp = detail::convt_scratch(0);
  wp.resize(static_cast<size_t>(out_ch * cin));
  gop.resize(static_cast<size_t>(out_ch * nin));
  gwp.resize(static_cast<size_t>(out_ch * cin));
  for (index_t n = 0; n < x.n; ++n) {
    for (index_t oc = 0; oc < out_ch; ++oc) {
      const double* goch = go.channel(n, oc);
      double acc = 0.0;
      for (index_t i = 0; i < go.voxels(); ++i) acc += goch[i];
      gb[oc] += acc;
    }
    for (index_t p = 0; p < 8; ++p) {
      const index_t dz = p >> 2, dy = (p >> 1) & 1, dx = p & 1;
      for (index_t oc = 0; oc < out_ch; ++oc) {
        double* dst = gop.data() + oc * nin;
        for (index_t z = 0; z < x.d; ++z)
          for (index_t iy = 0; iy < x.h; ++iy) {
            const double* line = &go.at(n, oc, 2 * z + dz, 2 * iy + dy, dx);
            double* d = dst + (z * x.h + iy) * x.w;
            for (index_t ix = 0; ix < x.w; ++ix) d[ix] = line[2 * ix];
          }
      }
      // dL/dWp = GOp * X^T, scattered back into the interleaved layout
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(out_ch), static_cast<int>(cin),
                  static_cast<int>(nin), 1.0, gop.data(), static_cast<int>(nin), x.channel(n, 0),
                  static_cast<int>(nin), 0.0, gwp.data(), static_cast<int>(cin));
      for (index_t ic = 0; ic < cin; ++ic)
        for (index_t oc = 0; oc < out_ch; ++oc) gw[(ic * out_ch + oc) * 8 + p] += gwp[oc * cin + ic];
      // dL/dX += Wp^T * GOp
      for (index_t ic = 0; ic < cin; ++ic)
        for (index_t oc = 0; oc < out_ch; ++oc) wp[oc * cin + ic] = w[(ic * out_ch + oc) * 8 + p];
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(cin), static_cast<int>(nin),
                  static_cast<int>(out_ch), 1.0, wp.data(), static_cast<int>(cin), gop.data(),
                  static_cast<int>(nin), 1.0, gx.channel(n, 0), static_cast<int>(nin));
    }
  }
}

}  // namespace voxseg
