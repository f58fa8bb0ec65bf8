// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "patchlab/geometry.hpp"
#include "patchlab/tensor.hpp"

namespace patchlab {

struct DetectorModel;

struct Scene {
    Tensor image; // [3,S,S] in [0,1]
    std::vector<Box> gt;
    std::string id;
};

// x' = x * scale + pad_x, y' = y * scale + pad_y
struct LetterboxMap {
    double scale = 1.0;
    double pad_x = 0.0, pad_y = 0.0;
};

struct LetterboxResult {
    Tensor image;
    LetterboxMap map;
};

// Aspect-preserving resize so the longer side equals out_size, gray padding
// (0.5) centered on the short axis.
LetterboxResult letterbox(const Tensor& image, int out_size);
Box remap_box(const Box& b, const LetterboxMap& m);
Box unmap_box(const Box& b, const LetterboxMap& m);

// Textured low-frequency backgrounds with 1-4 high-contrast figures (rounded
// torso, head, limb-like protrusions). Ground truth is exact by construction.
std::vector<Scene> gen_synthetic(int count, int size, uint64_t seed);

struct RegenSummary {
    int scenes_in = 0;
    int scenes_kept = 0;
    int boxes_in = 0;
    int boxes_out = 0;
    std::vector<std::string> dropped_ids;
};

// Replaces ground truth with the detector's own confident detections;
// detections overlapping no true box at min_visibility IoU are discarded as
// false positives. Scenes left without boxes are removed.
RegenSummary regenerate_gt(const DetectorModel& model, std::vector<Scene>& scenes,
                           double conf_thresh, double min_visibility, double nms_iou = 0.5);

// On-disk layout: images/<id>.png plus labels/<id>.txt with one
// "cx cy w h" line per box, all normalized to [0,1]; manifest.txt lists
// "<id> <split>" per line.
void save_dataset(const std::filesystem::path& dir, const std::vector<Scene>& train,
                  const std::vector<Scene>& test);
std::vector<Scene> load_split(const std::filesystem::path& dir, const std::string& split,
                              int target_size);
std::vector<std::pair<std::string, std::string>> read_manifest(const std::filesystem::path& dir);

} // namespace patchlab
