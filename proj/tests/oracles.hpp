// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "patchlab/rng.hpp"
#include "patchlab/tensor.hpp"

// Test-side oracles. These stay independent of the library code paths they
// check: finite differences instead of the tape, direct enumeration instead
// of the metric implementations.
namespace oracles {

inline patchlab::Tensor random_tensor(std::vector<int> shape, patchlab::Rng& rng, double lo = 0.0,
                                      double hi = 1.0) {
    patchlab::Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// central finite differences of a scalar function w.r.t. every entry of x0
template <typename F>
patchlab::Tensor fd_gradient(F f, const patchlab::Tensor& x0, double h = 1e-5) {
    patchlab::Tensor g(x0.shape);
    patchlab::Tensor x = x0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// worst-case |a-n| / max(1, |a|, |n|); absolute for tiny gradients, relative
// for O(1) ones
inline double grad_err(const patchlab::Tensor& a, const patchlab::Tensor& n) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = std::abs(a[i] - n[i]);
        const double scale = std::max({1.0, std::abs(a[i]), std::abs(n[i])});
        worst = std::max(worst, d / scale);
    }
    return worst;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

} // namespace oracles
