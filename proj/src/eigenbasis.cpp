// SPDX-License-Identifier: Apache-2.0
#include "patchlab/eigenbasis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchlab/binio.hpp"
#include "patchlab/kernels.hpp"

namespace patchlab {

void jacobi_eigh(std::vector<double> a, int n, std::vector<double>& evals,
                 std::vector<double>& vecs) {
    require(static_cast<int64_t>(a.size()) == static_cast<int64_t>(n) * n, ErrKind::validation,
            "jacobi_eigh: matrix size mismatch");
    std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

    auto off_norm2 = [&] {
        double s = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double x = a[static_cast<size_t>(p) * n + q];
                s += 2.0 * x * x;
            }
        return s;
    };
    double frob2 = 0.0;
    for (double x : a) frob2 += x * x;
    const double tol2 = std::max(frob2, 1.0) * 1e-30;

    for (int sweep = 0; sweep < 100 && off_norm2() > tol2; ++sweep) {
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (apq == 0.0) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a[static_cast<size_t>(i) * n + p];
                    const double aiq = a[static_cast<size_t>(i) * n + q];
                    a[static_cast<size_t>(i) * n + p] = c * aip - s * aiq;
                    a[static_cast<size_t>(i) * n + q] = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a[static_cast<size_t>(p) * n + i];
                    const double aqi = a[static_cast<size_t>(q) * n + i];
                    a[static_cast<size_t>(p) * n + i] = c * api - s * aqi;
                    a[static_cast<size_t>(q) * n + i] = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = v[static_cast<size_t>(i) * n + p];
                    const double viq = v[static_cast<size_t>(i) * n + q];
                    v[static_cast<size_t>(i) * n + p] = c * vip - s * viq;
                    v[static_cast<size_t>(i) * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return a[static_cast<size_t>(x) * n + x] > a[static_cast<size_t>(y) * n + y];
    });
    evals.assign(static_cast<size_t>(n), 0.0);
    vecs.assign(static_cast<size_t>(n) * n, 0.0);
    for (int r = 0; r < n; ++r) {
        const int src = order[static_cast<size_t>(r)];
        evals[static_cast<size_t>(r)] = a[static_cast<size_t>(src) * n + src];
        for (int i = 0; i < n; ++i)
            vecs[static_cast<size_t>(r) * n + i] = v[static_cast<size_t>(i) * n + src];
    }
}

FitResult fit(const PatchSet& set, bool center) {
    const int n = set.count();
    require(n >= 2, ErrKind::validation, cat("PCA needs at least 2 patches, got ", n));
    const int c = set.channels(), h = set.height(), w = set.width();
    const int64_t d = static_cast<int64_t>(c) * h * w;

    // centered data rows
    std::vector<double> rows(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        std::copy(set.at(i).pixels.data.begin(), set.at(i).pixels.data.end(),
                  rows.begin() + static_cast<int64_t>(i) * d);
    EigenBasis basis;
    basis.c = c;
    basis.h = h;
    basis.w = w;
    basis.n_input = n;
    basis.mean.assign(static_cast<size_t>(d), 0.0);
    if (center) {
        for (int i = 0; i < n; ++i)
            for (int64_t t = 0; t < d; ++t)
                basis.mean[static_cast<size_t>(t)] += rows[static_cast<int64_t>(i) * d + t];
        for (int64_t t = 0; t < d; ++t) basis.mean[static_cast<size_t>(t)] /= n;
        for (int i = 0; i < n; ++i)
            for (int64_t t = 0; t < d; ++t)
                rows[static_cast<int64_t>(i) * d + t] -= basis.mean[static_cast<size_t>(t)];
    }

    std::vector<double> gram(static_cast<size_t>(n) * n);
    kernels::gram_matrix(rows.data(), n, d, gram.data());

    std::vector<double> mu, u; // u rows are Gram eigenvectors
    jacobi_eigh(std::move(gram), n, mu, u);

    const int k_max = static_cast<int>(std::min<int64_t>(center ? n - 1 : n, d));
    const double lift_eps = 1e-12 * std::max(mu.empty() ? 0.0 : mu[0], 1.0);

    std::vector<double> coef(static_cast<size_t>(k_max) * n, 0.0);
    for (int j = 0; j < k_max; ++j) {
        if (mu[static_cast<size_t>(j)] > lift_eps) {
            const double inv = 1.0 / std::sqrt(mu[static_cast<size_t>(j)]);
            for (int i = 0; i < n; ++i)
                coef[static_cast<size_t>(j) * n + i] = u[static_cast<size_t>(j) * n + i] * inv;
        }
    }
    basis.components.assign(static_cast<size_t>(k_max) * d, 0.0);
    kernels::lincomb_rows(rows.data(), coef.data(), n, k_max, d, basis.components.data());

    basis.eigenvalues.assign(static_cast<size_t>(k_max), 0.0);
    for (int j = 0; j < k_max; ++j) {
        double* e = basis.components.data() + static_cast<int64_t>(j) * d;
        const double muj = mu[static_cast<size_t>(j)];
        if (muj <= lift_eps) {
            std::fill(e, e + d, 0.0);
            continue;
        }
        basis.eigenvalues[static_cast<size_t>(j)] = std::max(muj, 0.0) / (n - 1);
        // renormalize the lifted vector, then fix the sign so the
        // largest-magnitude entry is positive
        double norm2 = 0.0;
        for (int64_t t = 0; t < d; ++t) norm2 += e[t] * e[t];
        const double inv = 1.0 / std::sqrt(norm2);
        for (int64_t t = 0; t < d; ++t) e[t] *= inv;
        int64_t arg = 0;
        for (int64_t t = 1; t < d; ++t)
            if (std::abs(e[t]) > std::abs(e[arg])) arg = t;
        if (e[arg] < 0.0)
            for (int64_t t = 0; t < d; ++t) e[t] = -e[t];
    }

    WeightMatrix weights;
    weights.rows = n;
    weights.cols = k_max;
    weights.values.assign(static_cast<size_t>(n) * k_max, 0.0);
    kernels::cross_dots(rows.data(), n, basis.components.data(), k_max, d,
                        weights.values.data());
    return {std::move(basis), std::move(weights)};
}

Reconstruction combine(const EigenBasis& basis, std::span<const double> coeffs, int k,
                       bool include_mean) {
    require(static_cast<int>(coeffs.size()) == k, ErrKind::validation,
            cat("coefficient count ", coeffs.size(), " does not match k=", k));
    require(k >= 0 && k <= basis.k_max(), ErrKind::validation,
            cat("k=", k, " out of range, k_max=", basis.k_max()));
    const int64_t d = basis.dim();
    Tensor pre({basis.c, basis.h, basis.w});
    for (int64_t t = 0; t < d; ++t)
        pre[t] = include_mean ? basis.mean[static_cast<size_t>(t)] : 0.0;
    for (int j = 0; j < k; ++j) {
        const double* e = basis.component(j);
        const double cj = coeffs[static_cast<size_t>(j)];
        for (int64_t t = 0; t < d; ++t) pre[t] += cj * e[t];
    }
    Tensor clamped = pre;
    for (double& v : clamped.data) v = std::min(1.0, std::max(0.0, v));
    return {make_patch(std::move(clamped)), std::move(pre)};
}

Reconstruction reconstruct(const EigenBasis& basis, std::span<const double> weights, int k) {
    require(k >= 1 && k <= basis.k_max(), ErrKind::validation,
            cat("k=", k, " out of range [1,", basis.k_max(), "]"));
    require(static_cast<int>(weights.size()) >= k, ErrKind::validation,
            cat("weight row has ", weights.size(), " entries, need at least ", k));
    return combine(basis, weights.subspan(0, static_cast<size_t>(k)), k, true);
}

std::vector<double> project(const EigenBasis& basis, const Patch& p) {
    require(p.channels() == basis.c && p.height() == basis.h && p.width() == basis.w,
            ErrKind::validation,
            cat("patch shape ", p.pixels.shape_str(), " does not match basis ", basis.c, "x",
                basis.h, "x", basis.w));
    const int64_t d = basis.dim();
    std::vector<double> centered(static_cast<size_t>(d));
    for (int64_t t = 0; t < d; ++t) centered[static_cast<size_t>(t)] = p.pixels[t] - basis.mean[static_cast<size_t>(t)];
    std::vector<double> out(static_cast<size_t>(basis.k_max()), 0.0);
    kernels::cross_dots(centered.data(), 1, basis.components.data(), basis.k_max(), d, out.data());
    return out;
}

double explained_variance(const EigenBasis& basis, int k) {
    require(k >= 0 && k <= basis.k_max(), ErrKind::validation,
            cat("k=", k, " out of range, k_max=", basis.k_max()));
    double total = 0.0;
    for (double v : basis.eigenvalues) total += v;
    if (total <= 0.0) return 1.0;
    double head = 0.0;
    for (int j = 0; j < k; ++j) head += basis.eigenvalues[static_cast<size_t>(j)];
    return head / total;
}

void save_basis(const std::filesystem::path& path, const EigenBasis& basis,
                const WeightMatrix& weights) {
    binio::Writer w(path);
    w.magic("EPCA");
    w.u16(1);
    w.u32(static_cast<uint32_t>(basis.dim()));
    w.u32(static_cast<uint32_t>(basis.k_max()));
    w.u32(static_cast<uint32_t>(basis.n_input));
    w.u32(static_cast<uint32_t>(basis.c));
    w.u32(static_cast<uint32_t>(basis.h));
    w.u32(static_cast<uint32_t>(basis.w));
    w.f64_block(basis.mean.data(), basis.mean.size());
    w.f64_block(basis.eigenvalues.data(), basis.eigenvalues.size());
    w.f64_block(basis.components.data(), basis.components.size());
    w.f64_block(weights.values.data(), weights.values.size());
    w.close();
}

FitResult load_basis(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.magic("EPCA");
    const uint16_t ver = r.u16();
    if (ver != 1) fail(ErrKind::parse, path.string(), ": unsupported EPCA version ", ver);
    const uint32_t d = r.u32();
    const uint32_t k_max = r.u32();
    const uint32_t n = r.u32();
    const uint32_t c = r.u32();
    const uint32_t h = r.u32();
    const uint32_t wd = r.u32();
    if (static_cast<uint64_t>(c) * h * wd != d)
        fail(ErrKind::parse, path.string(), ": shape ", c, "x", h, "x", wd,
             " inconsistent with D=", d);
    FitResult out;
    out.basis.c = static_cast<int>(c);
    out.basis.h = static_cast<int>(h);
    out.basis.w = static_cast<int>(wd);
    out.basis.n_input = static_cast<int>(n);
    out.basis.mean.resize(d);
    out.basis.eigenvalues.resize(k_max);
    out.basis.components.resize(static_cast<size_t>(k_max) * d);
    out.weights.rows = static_cast<int>(n);
    out.weights.cols = static_cast<int>(k_max);
    out.weights.values.resize(static_cast<size_t>(n) * k_max);
    r.f64_block(out.basis.mean.data(), out.basis.mean.size());
    r.f64_block(out.basis.eigenvalues.data(), out.basis.eigenvalues.size());
    r.f64_block(out.basis.components.data(), out.basis.components.size());
    r.f64_block(out.weights.values.data(), out.weights.values.size());
    return out;
}

} // namespace patchlab
