// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchlab/tensor.hpp"

namespace patchlab {

// An adversarial patch: [C,H,W] pixels in [0,1] plus a provenance record.
struct Patch {
    Tensor pixels;
    std::map<std::string, std::string> meta;

    int channels() const { return pixels.shape[0]; }
    int height() const { return pixels.shape[1]; }
    int width() const { return pixels.shape[2]; }
};

// Validates the patch contract: C in {1,3}, H,W >= 4, all values in [0,1].
Patch make_patch(Tensor pixels, std::map<std::string, std::string> meta = {});

Patch init_random(int c, int h, int w, uint64_t seed);
Patch gray_patch(int c, int h, int w, double value);
Patch clamp01(const Patch& p);

// the standard control set: eleven constant patches at values k/10, k = 0..10
std::vector<Patch> gray_control_set(int c, int h, int w);

// Ordered, uniform-shape patch population. Iteration order is insertion
// order; weight-matrix rows depend on it.
class PatchSet {
public:
    PatchSet() = default;
    explicit PatchSet(std::vector<Patch> patches);

    void append(Patch p);
    int count() const { return static_cast<int>(patches_.size()); }
    const Patch& at(int i) const { return patches_[static_cast<size_t>(i)]; }
    const std::vector<Patch>& patches() const { return patches_; }

    int channels() const { return patches_.front().channels(); }
    int height() const { return patches_.front().height(); }
    int width() const { return patches_.front().width(); }

private:
    std::vector<Patch> patches_;
};

// EPCH single-patch file and EPSET archive (little-endian, float64 payload)
void save_patch(const std::filesystem::path& path, const Patch& p);
Patch load_patch(const std::filesystem::path& path);
void save_patch_set(const std::filesystem::path& path, const PatchSet& set);
PatchSet load_patch_set(const std::filesystem::path& path);

} // namespace patchlab
