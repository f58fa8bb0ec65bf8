// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "patchlab/geometry.hpp"

namespace patchlab {

struct DetectorModel;
struct Scene;
struct Patch;

double iou(const Box& a, const Box& b);

enum class ApMode {
    interp101, // COCO-style 101-point interpolation (default)
    all_points // VOC-style area under the exact PR envelope
};

// Dataset-level single-class AP: detections pooled across images, sorted by
// confidence, greedily matched to unmatched ground truth at iou >= thresh.
// nullopt when there is no ground truth at all.
std::optional<double> average_precision(const std::vector<std::vector<Detection>>& dets_by_image,
                                        const std::vector<std::vector<Box>>& gt_by_image,
                                        double iou_thresh, ApMode mode = ApMode::interp101);

// mean of AP over thresholds
std::optional<double> map_range(const std::vector<std::vector<Detection>>& dets_by_image,
                                const std::vector<std::vector<Box>>& gt_by_image,
                                const std::vector<double>& thresholds,
                                ApMode mode = ApMode::interp101);

std::vector<double> coco_thresholds(); // .5 to .95 step .05

struct EvalRecord {
    double base_map50 = 0.0, base_map5095 = 0.0;
    double map50 = 0.0, map5095 = 0.0;
    double delta_map50 = 0.0, delta_map5095 = 0.0; // baseline minus patched
    double mean_gt_objectness = 0.0; // patched mean sigmoid objectness over GT cells
    int boxes_total = 0;
    int boxes_skipped = 0; // smaller than 2x2 px at the evaluation scale
    int images = 0;
};

// Deterministic evaluation protocol: the patch is centered in every ground
// truth box at `scale` times the longer box side, with no other transforms.
// A null patch evaluates the clean baseline only.
EvalRecord evaluate_patch(const DetectorModel& model, const std::vector<Scene>& scenes,
                          const Patch* patch, double scale = 0.75, double conf_thresh = 0.25,
                          double nms_iou = 0.5, ApMode mode = ApMode::interp101);

} // namespace patchlab
