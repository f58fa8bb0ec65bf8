// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "patchlab/kernels.hpp"

#include "oracles.hpp"

using namespace patchlab;
namespace k = patchlab::kernels;
using oracles::random_tensor;

namespace {

struct ModeGuard {
    k::Mode saved = k::mode();
    ~ModeGuard() { k::set_mode(saved); }
};

} // namespace

TEST_CASE("parallel conv kernels are bit-identical to serial") {
    ModeGuard guard;
    for (int seed = 0; seed < 6; ++seed) {
        Rng rng(seed_mix(404, seed));
        const int stride = seed % 2 ? 2 : 1;
        const int kside = stride == 2 ? 4 : 3;
        Tensor in = random_tensor({3, 12, 12}, rng, -1.0, 1.0);
        Tensor w = random_tensor({8, 3, kside, kside}, rng, -1.0, 1.0);
        const auto os = k::conv2d_out_shape(in, w, stride, 1);
        Tensor bias = random_tensor({8}, rng, -0.5, 0.5);

        Tensor out_s({8, os[0], os[1]}), out_p({8, os[0], os[1]});
        k::conv2d_forward_serial(in, w, bias.data.data(), stride, 1, out_s);
        k::conv2d_forward_parallel(in, w, bias.data.data(), stride, 1, out_p);
        CHECK(out_s.data == out_p.data);

        Tensor gout = random_tensor({8, os[0], os[1]}, rng, -1.0, 1.0);
        Tensor gin_s(in.shape), gin_p(in.shape);
        k::conv2d_backward_input_serial(gout, w, stride, 1, gin_s);
        k::conv2d_backward_input_parallel(gout, w, stride, 1, gin_p);
        CHECK(gin_s.data == gin_p.data);

        Tensor gw_s(w.shape), gw_p(w.shape);
        Tensor gb_s({8}), gb_p({8});
        k::conv2d_backward_weights_serial(gout, in, stride, 1, gw_s, gb_s.data.data());
        k::conv2d_backward_weights_parallel(gout, in, stride, 1, gw_p, gb_p.data.data());
        CHECK(gw_s.data == gw_p.data);
        CHECK(gb_s.data == gb_p.data);
    }
}

TEST_CASE("parallel grid sampling is bit-identical to serial") {
    for (int seed = 0; seed < 6; ++seed) {
        Rng rng(seed_mix(11, seed));
        Tensor src = random_tensor({3, 16, 16}, rng);
        const double a = rng.uniform(0.5, 1.5), th = rng.uniform(-0.8, 0.8);
        const std::array<double, 9> g{a * std::cos(th) / 8.0,
                                      -a * std::sin(th) / 8.0,
                                      -1.0,
                                      a * std::sin(th) / 8.0,
                                      a * std::cos(th) / 8.0,
                                      -1.0,
                                      0.0,
                                      0.0,
                                      1.0};
        Tensor out_s({3, 20, 20}), out_p({3, 20, 20});
        Tensor m_s({1, 20, 20}), m_p({1, 20, 20});
        k::grid_sample_forward_serial(src, g, 20, 20, out_s, &m_s);
        k::grid_sample_forward_parallel(src, g, 20, 20, out_p, &m_p);
        CHECK(out_s.data == out_p.data);
        CHECK(m_s.data == m_p.data);
    }
}

TEST_CASE("parallel gram and lincomb are bit-identical to serial") {
    Rng rng(5);
    const int n = 17;
    const int64_t d = 301;
    Tensor rows = random_tensor({n, static_cast<int>(d)}, rng, -1.0, 1.0);
    std::vector<double> g_s(n * n), g_p(n * n);
    k::gram_matrix_serial(rows.data.data(), n, d, g_s.data());
    k::gram_matrix_parallel(rows.data.data(), n, d, g_p.data());
    CHECK(g_s == g_p);

    const int kk = 5;
    Tensor coef = random_tensor({kk, n}, rng, -1.0, 1.0);
    std::vector<double> o_s(kk * d), o_p(kk * d);
    k::lincomb_rows_serial(rows.data.data(), coef.data.data(), n, kk, d, o_s.data());
    k::lincomb_rows_parallel(rows.data.data(), coef.data.data(), n, kk, d, o_p.data());
    CHECK(o_s == o_p);
}

TEST_CASE("conv2d_out_shape validation messages") {
    Tensor in({3, 10, 10}, 0.0);
    Tensor w_badc({4, 2, 3, 3}, 0.0);
    CHECK_THROWS_WITH_AS(k::conv2d_out_shape(in, w_badc, 1, 1),
                         doctest::Contains("input channels 3"), Error);
    Tensor w_inexact({4, 3, 3, 3}, 0.0);
    CHECK_THROWS_WITH_AS(k::conv2d_out_shape(in, w_inexact, 2, 1), doctest::Contains("exact"),
                         Error);
    Tensor w_ok({4, 3, 4, 4}, 0.0);
    const auto os = k::conv2d_out_shape(in, w_ok, 2, 1);
    CHECK(os[0] == 5);
    CHECK(os[1] == 5);
}

TEST_CASE("facade honors mode switch") {
    ModeGuard guard;
    Rng rng(2);
    Tensor in = random_tensor({2, 8, 8}, rng);
    Tensor w = random_tensor({2, 2, 3, 3}, rng, -1.0, 1.0);
    Tensor out_a({2, 8, 8}), out_b({2, 8, 8});
    k::set_mode(k::Mode::serial);
    k::conv2d_forward(in, w, nullptr, 1, 1, out_a);
    k::set_mode(k::Mode::parallel);
    k::conv2d_forward(in, w, nullptr, 1, 1, out_b);
    CHECK(out_a.data == out_b.data);
}
