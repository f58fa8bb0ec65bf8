// SPDX-License-Identifier: Apache-2.0
// Serial vs OpenMP kernel timings on detector-shaped workloads.
#include <chrono>
#include <cstdio>
#include <functional>

#include <omp.h>

#include "patchlab/data.hpp"
#include "patchlab/detector.hpp"
#include "patchlab/kernels.hpp"
#include "patchlab/rng.hpp"

using namespace patchlab;
namespace k = patchlab::kernels;

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

double time_ms(const std::function<void()>& fn, int iters) {
    fn(); // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

void report(const char* name, double serial_ms, double parallel_ms, double mflop) {
    std::printf("%-28s %9.3f ms %9.3f ms  x%4.2f  %8.0f MFLOP/s\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms, mflop / parallel_ms * 1000.0 / 1e6);
}

} // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-28s %12s %12s %6s %15s\n", "kernel", "serial", "parallel", "speed",
                "parallel rate");
    Rng rng(1);

    // conv2d on the widest detector layer: 16 -> 32 channels at 40x40
    {
        const Tensor in = rand_tensor({16, 40, 40}, rng);
        const Tensor w = rand_tensor({32, 16, 4, 4}, rng);
        Tensor out({32, 20, 20});
        const double flops = 2.0 * 32 * 20 * 20 * 16 * 4 * 4;
        k::set_mode(k::Mode::serial);
        const double s = time_ms([&] { k::conv2d_forward(in, w, nullptr, 2, 1, out); }, 20);
        k::set_mode(k::Mode::parallel);
        const double p = time_ms([&] { k::conv2d_forward(in, w, nullptr, 2, 1, out); }, 20);
        report("conv2d forward", s, p, flops);

        Tensor gin({16, 40, 40});
        const Tensor gout = rand_tensor({32, 20, 20}, rng);
        k::set_mode(k::Mode::serial);
        const double sb = time_ms([&] { k::conv2d_backward_input(gout, w, 2, 1, gin); }, 20);
        k::set_mode(k::Mode::parallel);
        const double pb = time_ms([&] { k::conv2d_backward_input(gout, w, 2, 1, gin); }, 20);
        report("conv2d backward input", sb, pb, flops);

        Tensor gw({32, 16, 4, 4});
        k::set_mode(k::Mode::serial);
        const double sw =
            time_ms([&] { k::conv2d_backward_weights(gout, in, 2, 1, gw, nullptr); }, 20);
        k::set_mode(k::Mode::parallel);
        const double pw =
            time_ms([&] { k::conv2d_backward_weights(gout, in, 2, 1, gw, nullptr); }, 20);
        report("conv2d backward weights", sw, pw, flops);
    }

    // full detector forward at the default input size
    {
        const DetectorModel m = make_detector(160, 3);
        const Tensor img = rand_tensor({3, 160, 160}, rng, 0.0, 1.0);
        k::set_mode(k::Mode::serial);
        const double s = time_ms([&] { forward(m, img); }, 10);
        k::set_mode(k::Mode::parallel);
        const double p = time_ms([&] { forward(m, img); }, 10);
        report("detector forward (160)", s, p, 21.6e6);
    }

    // patch warp onto a full scene canvas
    {
        const Tensor patch = rand_tensor({3, 64, 64}, rng, 0.0, 1.0);
        const std::array<double, 9> g{0.02, -0.005, -1.2, 0.005, 0.02, -1.1, 0.0, 0.0, 1.0};
        Tensor out({3, 160, 160}), mask({1, 160, 160});
        k::set_mode(k::Mode::serial);
        const double s =
            time_ms([&] { k::grid_sample_forward(patch, g, 160, 160, out, &mask); }, 50);
        k::set_mode(k::Mode::parallel);
        const double p =
            time_ms([&] { k::grid_sample_forward(patch, g, 160, 160, out, &mask); }, 50);
        report("grid_sample forward", s, p, 3 * 160.0 * 160 * 12);
    }

    // snapshot-PCA Gram matrix: 64 patches of 3x64x64
    {
        const int n = 64;
        const int64_t d = 3 * 64 * 64;
        const Tensor rows = rand_tensor({n, static_cast<int>(d)}, rng);
        std::vector<double> out(static_cast<size_t>(n) * n);
        k::set_mode(k::Mode::serial);
        const double s = time_ms([&] { k::gram_matrix(rows.data.data(), n, d, out.data()); }, 5);
        k::set_mode(k::Mode::parallel);
        const double p = time_ms([&] { k::gram_matrix(rows.data.data(), n, d, out.data()); }, 5);
        report("gram matrix 64x12288", s, p, 2.0 * n * n / 2 * static_cast<double>(d));
    }

    k::set_mode(k::Mode::parallel);
    return 0;
}
