// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "patchlab/tensor.hpp"

namespace patchlab {

// 8-bit PNG export/import for human viewing and the on-disk dataset. The
// float64 formats (EPCH/EPSET/EPCA/EDET) stay the source of truth; PNG is
// quantized to round(v*255).
void write_png(const std::filesystem::path& path, const Tensor& chw);
Tensor read_png(const std::filesystem::path& path); // [1,H,W] or [3,H,W], values k/255

// min-max normalizes an arbitrary tensor into [0,1] for visualization;
// constant input maps to 0.5
Tensor normalize_for_view(const Tensor& chw);

} // namespace patchlab
