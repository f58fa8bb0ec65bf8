// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include "patchlab/tensor.hpp"

// Hot inner loops of the tensor library. Every kernel exists twice: a plain
// serial reference and an OpenMP variant. The parallel variants are
// gather-style (one thread owns each output element, fixed accumulation
// order), so they are bit-identical to the serial reference for any thread
// count. grid_sample_backward_src is a scatter and stays serial; it is a
// negligible share of the compute next to the convolutions.
namespace patchlab::kernels {

enum class Mode { serial, parallel };
Mode mode();
void set_mode(Mode m);

// Validates conv geometry and returns {OH, OW}. Throws on channel mismatch or
// when the output size is not an exact division.
std::array<int, 2> conv2d_out_shape(const Tensor& in, const Tensor& w, int stride, int pad);

// in: [Cin,H,W], w: [Cout,Cin,kh,kw], bias: Cout or nullptr, out: [Cout,OH,OW]
void conv2d_forward(const Tensor& in, const Tensor& w, const double* bias, int stride, int pad,
                    Tensor& out);
void conv2d_forward_serial(const Tensor& in, const Tensor& w, const double* bias, int stride,
                           int pad, Tensor& out);
void conv2d_forward_parallel(const Tensor& in, const Tensor& w, const double* bias, int stride,
                             int pad, Tensor& out);

void conv2d_backward_input(const Tensor& gout, const Tensor& w, int stride, int pad, Tensor& gin);
void conv2d_backward_input_serial(const Tensor& gout, const Tensor& w, int stride, int pad,
                                  Tensor& gin);
void conv2d_backward_input_parallel(const Tensor& gout, const Tensor& w, int stride, int pad,
                                    Tensor& gin);

void conv2d_backward_weights(const Tensor& gout, const Tensor& in, int stride, int pad, Tensor& gw,
                             double* gbias);
void conv2d_backward_weights_serial(const Tensor& gout, const Tensor& in, int stride, int pad,
                                    Tensor& gw, double* gbias);
void conv2d_backward_weights_parallel(const Tensor& gout, const Tensor& in, int stride, int pad,
                                      Tensor& gw, double* gbias);

// G maps output pixel (x, y, 1) homogeneous to source coords normalized to
// [-1,1]^2 (align-corners). Out-of-bounds taps contribute zero; mask, when
// given, receives the in-bounds bilinear weight sum per output pixel.
void grid_sample_forward(const Tensor& src, const std::array<double, 9>& G, int oh, int ow,
                         Tensor& out, Tensor* mask);
void grid_sample_forward_serial(const Tensor& src, const std::array<double, 9>& G, int oh, int ow,
                                Tensor& out, Tensor* mask);
void grid_sample_forward_parallel(const Tensor& src, const std::array<double, 9>& G, int oh,
                                  int ow, Tensor& out, Tensor* mask);

// Scatter; serial only. gsrc must be preallocated [C,sh,sw] and is accumulated into.
void grid_sample_backward_src(const std::array<double, 9>& G, const Tensor& gout, Tensor& gsrc);

// rows: n x D row-major, out: n x n symmetric Gram matrix of dot products.
void gram_matrix(const double* rows, int n, int64_t d, double* out);
void gram_matrix_serial(const double* rows, int n, int64_t d, double* out);
void gram_matrix_parallel(const double* rows, int n, int64_t d, double* out);

// out[j] = sum_i coef[j*n + i] * rows[i], j in [0,k). out: k x D row-major.
void lincomb_rows(const double* rows, const double* coef, int n, int k, int64_t d, double* out);
void lincomb_rows_serial(const double* rows, const double* coef, int n, int k, int64_t d,
                         double* out);
void lincomb_rows_parallel(const double* rows, const double* coef, int n, int k, int64_t d,
                           double* out);

// out[i*k + j] = <a_i, b_j> for a: n x D, b: k x D
void cross_dots(const double* a, int n, const double* b, int k, int64_t d, double* out);
void cross_dots_serial(const double* a, int n, const double* b, int k, int64_t d, double* out);
void cross_dots_parallel(const double* a, int n, const double* b, int k, int64_t d, double* out);

} // namespace patchlab::kernels
