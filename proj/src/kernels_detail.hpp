// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>

#include "patchlab/tensor.hpp"

// Per-element bodies shared by the serial and OpenMP kernel variants. Keeping
// the arithmetic in one place is what makes the two variants bit-identical:
// each output element has a single fixed accumulation order no matter which
// thread computes it.
namespace patchlab::kernels::detail {

inline double conv_out_element(const Tensor& in, const Tensor& w, const double* bias, int stride,
                               int pad, int co, int oy, int ox) {
    const int cin = in.shape[0], h = in.shape[1], wid = in.shape[2];
    const int kh = w.shape[2], kw = w.shape[3];
    const int y0 = oy * stride - pad;
    const int x0 = ox * stride - pad;
    double acc = bias ? bias[co] : 0.0;
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            const int iy = y0 + ky;
            if (iy < 0 || iy >= h) continue;
            const double* in_row = &in.data[(static_cast<size_t>(ci) * h + iy) * wid];
            const double* w_row = &w.data[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw];
            for (int kx = 0; kx < kw; ++kx) {
                const int ix = x0 + kx;
                if (ix < 0 || ix >= wid) continue;
                acc += in_row[ix] * w_row[kx];
            }
        }
    }
    return acc;
}

inline double conv_gin_element(const Tensor& gout, const Tensor& w, int stride, int pad, int ci,
                               int iy, int ix) {
    const int cout = gout.shape[0], oh = gout.shape[1], ow = gout.shape[2];
    const int cin = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    double acc = 0.0;
    for (int co = 0; co < cout; ++co) {
        for (int ky = 0; ky < kh; ++ky) {
            const int ty = iy + pad - ky;
            if (ty < 0 || ty % stride != 0) continue;
            const int oy = ty / stride;
            if (oy >= oh) continue;
            const double* g_row = &gout.data[(static_cast<size_t>(co) * oh + oy) * ow];
            const double* w_row = &w.data[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw];
            for (int kx = 0; kx < kw; ++kx) {
                const int tx = ix + pad - kx;
                if (tx < 0 || tx % stride != 0) continue;
                const int ox = tx / stride;
                if (ox >= ow) continue;
                acc += g_row[ox] * w_row[kx];
            }
        }
    }
    return acc;
}

inline double conv_gw_element(const Tensor& gout, const Tensor& in, int stride, int pad, int co,
                              int ci, int ky, int kx) {
    const int oh = gout.shape[1], ow = gout.shape[2];
    const int h = in.shape[1], wid = in.shape[2];
    double acc = 0.0;
    for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        const double* g_row = &gout.data[(static_cast<size_t>(co) * oh + oy) * ow];
        const double* in_row = &in.data[(static_cast<size_t>(ci) * h + iy) * wid];
        for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= wid) continue;
            acc += g_row[ox] * in_row[ix];
        }
    }
    return acc;
}

struct Taps {
    bool degenerate = false; // homogeneous w ~ 0
    int x0 = 0, y0 = 0;
    double w00 = 0, w01 = 0, w10 = 0, w11 = 0;
    bool in00 = false, in01 = false, in10 = false, in11 = false;
};

inline Taps gsample_taps(const std::array<double, 9>& g, int x, int y, int src_h, int src_w) {
    Taps t;
    const double hx = g[0] * x + g[1] * y + g[2];
    const double hy = g[3] * x + g[4] * y + g[5];
    const double hw = g[6] * x + g[7] * y + g[8];
    if (std::abs(hw) < 1e-12) {
        t.degenerate = true;
        return t;
    }
    const double u = hx / hw;
    const double v = hy / hw;
    double px = 0.5 * (u + 1.0) * (src_w - 1);
    double py = 0.5 * (v + 1.0) * (src_h - 1);
    // snap keeps integer-aligned warps exact at grid points
    if (std::abs(px - std::nearbyint(px)) < 1e-9) px = std::nearbyint(px);
    if (std::abs(py - std::nearbyint(py)) < 1e-9) py = std::nearbyint(py);
    t.x0 = static_cast<int>(std::floor(px));
    t.y0 = static_cast<int>(std::floor(py));
    const double wx = px - t.x0;
    const double wy = py - t.y0;
    t.w00 = (1.0 - wx) * (1.0 - wy);
    t.w01 = wx * (1.0 - wy);
    t.w10 = (1.0 - wx) * wy;
    t.w11 = wx * wy;
    const bool xl = t.x0 >= 0 && t.x0 < src_w;
    const bool xr = t.x0 + 1 >= 0 && t.x0 + 1 < src_w;
    const bool yt = t.y0 >= 0 && t.y0 < src_h;
    const bool yb = t.y0 + 1 >= 0 && t.y0 + 1 < src_h;
    t.in00 = xl && yt;
    t.in01 = xr && yt;
    t.in10 = xl && yb;
    t.in11 = xr && yb;
    return t;
}

// Samples all channels of one output pixel. out_px points at out[0,y,x];
// channel stride is oh*ow.
inline void gsample_pixel(const Tensor& src, const Taps& t, double* out_px, int64_t cstride,
                          double* mask_px) {
    const int c = src.shape[0], h = src.shape[1], w = src.shape[2];
    if (t.degenerate) {
        for (int ci = 0; ci < c; ++ci) out_px[ci * cstride] = 0.0;
        if (mask_px) *mask_px = 0.0;
        return;
    }
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = &src.data[static_cast<size_t>(ci) * h * w];
        double acc = 0.0;
        if (t.in00) acc += t.w00 * plane[static_cast<size_t>(t.y0) * w + t.x0];
        if (t.in01) acc += t.w01 * plane[static_cast<size_t>(t.y0) * w + t.x0 + 1];
        if (t.in10) acc += t.w10 * plane[(static_cast<size_t>(t.y0) + 1) * w + t.x0];
        if (t.in11) acc += t.w11 * plane[(static_cast<size_t>(t.y0) + 1) * w + t.x0 + 1];
        out_px[ci * cstride] = acc;
    }
    if (mask_px) {
        double m = 0.0;
        if (t.in00) m += t.w00;
        if (t.in01) m += t.w01;
        if (t.in10) m += t.w10;
        if (t.in11) m += t.w11;
        *mask_px = m;
    }
}

inline double dot(const double* a, const double* b, int64_t d) {
    double acc = 0.0;
    for (int64_t i = 0; i < d; ++i) acc += a[i] * b[i];
    return acc;
}

} // namespace patchlab::kernels::detail
