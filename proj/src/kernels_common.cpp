// SPDX-License-Identifier: Apache-2.0
#include <atomic>

#include "patchlab/kernels.hpp"

namespace patchlab::kernels {

namespace {
std::atomic<Mode> g_mode{Mode::parallel};
}

Mode mode() { return g_mode.load(std::memory_order_relaxed); }
void set_mode(Mode m) { g_mode.store(m, std::memory_order_relaxed); }

std::array<int, 2> conv2d_out_shape(const Tensor& in, const Tensor& w, int stride, int pad) {
    require(in.rank() == 3, ErrKind::validation,
            cat("conv2d: input must be rank 3, got ", in.shape_str()));
    require(w.rank() == 4, ErrKind::validation,
            cat("conv2d: kernels must be rank 4, got ", w.shape_str()));
    require(stride >= 1, ErrKind::validation, "conv2d: stride must be >= 1");
    require(pad >= 0, ErrKind::validation, "conv2d: pad must be >= 0");
    if (w.shape[1] != in.shape[0])
        fail(ErrKind::validation, "conv2d: kernel input channels ", w.shape[1],
             " do not match input channels ", in.shape[0], " (input ", in.shape_str(),
             ", kernels ", w.shape_str(), ")");
    const int h = in.shape[1], wid = in.shape[2];
    const int kh = w.shape[2], kw = w.shape[3];
    if (kh > h + 2 * pad || kw > wid + 2 * pad)
        fail(ErrKind::validation, "conv2d: kernel ", kh, "x", kw, " exceeds padded input ",
             h + 2 * pad, "x", wid + 2 * pad);
    const int ny = h + 2 * pad - kh;
    const int nx = wid + 2 * pad - kw;
    if (ny % stride != 0 || nx % stride != 0)
        fail(ErrKind::validation, "conv2d: output size not exact: (", h, "+2*", pad, "-", kh,
             ") and (", wid, "+2*", pad, "-", kw, ") must divide stride ", stride);
    return {ny / stride + 1, nx / stride + 1};
}

void conv2d_forward(const Tensor& in, const Tensor& w, const double* bias, int stride, int pad,
                    Tensor& out) {
    if (mode() == Mode::parallel)
        conv2d_forward_parallel(in, w, bias, stride, pad, out);
    else
        conv2d_forward_serial(in, w, bias, stride, pad, out);
}

void conv2d_backward_input(const Tensor& gout, const Tensor& w, int stride, int pad, Tensor& gin) {
    if (mode() == Mode::parallel)
        conv2d_backward_input_parallel(gout, w, stride, pad, gin);
    else
        conv2d_backward_input_serial(gout, w, stride, pad, gin);
}

void conv2d_backward_weights(const Tensor& gout, const Tensor& in, int stride, int pad, Tensor& gw,
                             double* gbias) {
    if (mode() == Mode::parallel)
        conv2d_backward_weights_parallel(gout, in, stride, pad, gw, gbias);
    else
        conv2d_backward_weights_serial(gout, in, stride, pad, gw, gbias);
}

void grid_sample_forward(const Tensor& src, const std::array<double, 9>& g, int oh, int ow,
                         Tensor& out, Tensor* mask) {
    if (mode() == Mode::parallel)
        grid_sample_forward_parallel(src, g, oh, ow, out, mask);
    else
        grid_sample_forward_serial(src, g, oh, ow, out, mask);
}

void gram_matrix(const double* rows, int n, int64_t d, double* out) {
    if (mode() == Mode::parallel)
        gram_matrix_parallel(rows, n, d, out);
    else
        gram_matrix_serial(rows, n, d, out);
}

void lincomb_rows(const double* rows, const double* coef, int n, int k, int64_t d, double* out) {
    if (mode() == Mode::parallel)
        lincomb_rows_parallel(rows, coef, n, k, d, out);
    else
        lincomb_rows_serial(rows, coef, n, k, d, out);
}

void cross_dots(const double* a, int n, const double* b, int k, int64_t d, double* out) {
    if (mode() == Mode::parallel)
        cross_dots_parallel(a, n, b, k, d, out);
    else
        cross_dots_serial(a, n, b, k, d, out);
}

} // namespace patchlab::kernels
