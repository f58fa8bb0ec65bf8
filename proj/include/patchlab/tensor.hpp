// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "patchlab/common.hpp"

namespace patchlab {

// Dense row-major float64 tensor. Rank-3 image tensors are [C,H,W].
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), 0.0) {}
    Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(checked_numel(shape), fill) {}

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }

    // [C,H,W] accessors
    double at3(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double& at3(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

private:
    static int64_t checked_numel(const std::vector<int>& s) {
        require(!s.empty(), ErrKind::validation, "tensor needs at least one dimension");
        int64_t n = 1;
        for (int d : s) {
            require(d > 0, ErrKind::validation, "tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }
};

inline bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline void ensure_finite(const Tensor& t, const char* what) {
    if (!all_finite(t)) fail(ErrKind::validation, "non-finite values produced by ", what);
}

inline double min_value(const Tensor& t) {
    double m = t.data[0];
    for (double v : t.data) m = std::min(m, v);
    return m;
}

inline double max_value(const Tensor& t) {
    double m = t.data[0];
    for (double v : t.data) m = std::max(m, v);
    return m;
}

inline double mean_value(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += v;
    return s / static_cast<double>(t.numel());
}

} // namespace patchlab
