// SPDX-License-Identifier: Apache-2.0
#include <omp.h>

#include "patchlab/kernels.hpp"

#include "kernels_detail.hpp"

namespace patchlab::kernels {

using namespace detail;

void conv2d_forward_parallel(const Tensor& in, const Tensor& w, const double* bias, int stride,
                             int pad, Tensor& out) {
    const int cout = out.shape[0], oh = out.shape[1], ow = out.shape[2];
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                out.at3(co, oy, ox) = conv_out_element(in, w, bias, stride, pad, co, oy, ox);
}

void conv2d_backward_input_parallel(const Tensor& gout, const Tensor& w, int stride, int pad,
                                    Tensor& gin) {
    const int cin = gin.shape[0], h = gin.shape[1], wid = gin.shape[2];
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < cin; ++ci)
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < wid; ++ix)
                gin.at3(ci, iy, ix) = conv_gin_element(gout, w, stride, pad, ci, iy, ix);
}

void conv2d_backward_weights_parallel(const Tensor& gout, const Tensor& in, int stride, int pad,
                                      Tensor& gw, double* gbias) {
    const int cout = gw.shape[0], cin = gw.shape[1], kh = gw.shape[2], kw = gw.shape[3];
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx)
                    gw.data[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx] =
                        conv_gw_element(gout, in, stride, pad, co, ci, ky, kx);
    if (gbias) {
        const int oh = gout.shape[1], ow = gout.shape[2];
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co) {
            double acc = 0.0;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) acc += gout.at3(co, oy, ox);
            gbias[co] = acc;
        }
    }
}

void grid_sample_forward_parallel(const Tensor& src, const std::array<double, 9>& g, int oh,
                                  int ow, Tensor& out, Tensor* mask) {
    const int64_t cstride = static_cast<int64_t>(oh) * ow;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const Taps t = gsample_taps(g, x, y, src.shape[1], src.shape[2]);
            const int64_t px = static_cast<int64_t>(y) * ow + x;
            gsample_pixel(src, t, &out.data[px], cstride, mask ? &mask->data[px] : nullptr);
        }
}

void gram_matrix_parallel(const double* rows, int n, int64_t d, double* out) {
    // dynamic schedule balances the shrinking upper-triangle rows; entries are
    // independent so the result is still bit-identical to the serial kernel
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const double v = dot(rows + static_cast<int64_t>(i) * d,
                                 rows + static_cast<int64_t>(j) * d, d);
            out[static_cast<int64_t>(i) * n + j] = v;
            out[static_cast<int64_t>(j) * n + i] = v;
        }
}

void lincomb_rows_parallel(const double* rows, const double* coef, int n, int k, int64_t d,
                           double* out) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < k; ++j) {
        double* oj = out + static_cast<int64_t>(j) * d;
        for (int64_t t = 0; t < d; ++t) oj[t] = 0.0;
        for (int i = 0; i < n; ++i) {
            const double c = coef[static_cast<int64_t>(j) * n + i];
            const double* ri = rows + static_cast<int64_t>(i) * d;
            for (int64_t t = 0; t < d; ++t) oj[t] += c * ri[t];
        }
    }
}

void cross_dots_parallel(const double* a, int n, const double* b, int k, int64_t d, double* out) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            out[static_cast<int64_t>(i) * k + j] =
                dot(a + static_cast<int64_t>(i) * d, b + static_cast<int64_t>(j) * d, d);
}

} // namespace patchlab::kernels
