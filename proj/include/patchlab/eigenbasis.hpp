// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "patchlab/patch.hpp"

namespace patchlab {

// PCA basis over a patch population. The mean is always added back during
// reconstruction; an uncentered fit simply stores a zero mean, which realizes
// the bare linear-combination reading of the reconstruction formula.
struct EigenBasis {
    int c = 0, h = 0, w = 0;
    int n_input = 0;
    std::vector<double> mean;        // D
    std::vector<double> eigenvalues; // k_max, descending, >= 0
    std::vector<double> components;  // k_max x D, orthonormal rows

    int k_max() const { return static_cast<int>(eigenvalues.size()); }
    int64_t dim() const { return static_cast<int64_t>(c) * h * w; }
    const double* component(int j) const { return components.data() + j * dim(); }
};

struct WeightMatrix {
    int rows = 0, cols = 0;
    std::vector<double> values; // rows x cols

    double at(int i, int j) const { return values[static_cast<size_t>(i) * cols + j]; }
    std::span<const double> row(int i) const {
        return {values.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)};
    }
};

struct FitResult {
    EigenBasis basis;
    WeightMatrix weights;
};

// Snapshot PCA: eigendecomposition of the n x n Gram matrix, lifted to pixel
// space. Eigenvalues are those of the sample covariance (divisor n-1).
FitResult fit(const PatchSet& set, bool center = true);

struct Reconstruction {
    Patch patch;    // clamped to [0,1]
    Tensor preclamp;
};

// mean + sum_{j<k} weights[j] * E_j
Reconstruction reconstruct(const EigenBasis& basis, std::span<const double> weights, int k);

// mean (optional) + sum_{j<k} coeffs[j] * E_j; coeffs.size() must equal k
Reconstruction combine(const EigenBasis& basis, std::span<const double> coeffs, int k,
                       bool include_mean = true);

// weights of an arbitrary patch against the basis: <flat(p) - mean, E_j>
std::vector<double> project(const EigenBasis& basis, const Patch& p);

double explained_variance(const EigenBasis& basis, int k);

// EPCA archive
void save_basis(const std::filesystem::path& path, const EigenBasis& basis,
                const WeightMatrix& weights);
FitResult load_basis(const std::filesystem::path& path);

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Returns eigenvalues descending with matching eigenvectors as rows of vecs.
void jacobi_eigh(std::vector<double> a, int n, std::vector<double>& evals,
                 std::vector<double>& vecs);

} // namespace patchlab
