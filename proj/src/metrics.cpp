// SPDX-License-Identifier: Apache-2.0
#include "patchlab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "patchlab/attack.hpp"
#include "patchlab/common.hpp"
#include "patchlab/detector.hpp"

namespace patchlab {

double iou(const Box& a, const Box& b) {
    require(a.valid() && b.valid(), ErrKind::validation, "iou: degenerate box");
    const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

namespace {

struct Ranked {
    double conf;
    int image;
    int index;
};

// pooled, confidence-sorted TP flags and the GT total
struct MatchResult {
    std::vector<char> tp;
    int npos = 0;
};

MatchResult greedy_match(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<std::vector<Box>>& gt, double thresh) {
    MatchResult r;
    for (const auto& g : gt) r.npos += static_cast<int>(g.size());

    std::vector<Ranked> pool;
    for (int img = 0; img < static_cast<int>(dets.size()); ++img)
        for (int i = 0; i < static_cast<int>(dets[static_cast<size_t>(img)].size()); ++i)
            pool.push_back({dets[static_cast<size_t>(img)][static_cast<size_t>(i)].confidence,
                            img, i});
    std::sort(pool.begin(), pool.end(), [](const Ranked& a, const Ranked& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });

    std::vector<std::vector<char>> used(gt.size());
    for (size_t i = 0; i < gt.size(); ++i) used[i].assign(gt[i].size(), 0);

    r.tp.reserve(pool.size());
    for (const auto& p : pool) {
        const Box& db = dets[static_cast<size_t>(p.image)][static_cast<size_t>(p.index)].box;
        const auto& gts = gt[static_cast<size_t>(p.image)];
        int best = -1;
        double best_iou = 0.0;
        for (int gi = 0; gi < static_cast<int>(gts.size()); ++gi) {
            if (used[static_cast<size_t>(p.image)][static_cast<size_t>(gi)]) continue;
            const double v = iou(db, gts[static_cast<size_t>(gi)]);
            if (v >= thresh && v > best_iou) {
                best_iou = v;
                best = gi;
            }
        }
        if (best >= 0) {
            used[static_cast<size_t>(p.image)][static_cast<size_t>(best)] = 1;
            r.tp.push_back(1);
        } else {
            r.tp.push_back(0);
        }
    }
    return r;
}

} // namespace

std::optional<double> average_precision(const std::vector<std::vector<Detection>>& dets_by_image,
                                        const std::vector<std::vector<Box>>& gt_by_image,
                                        double iou_thresh, ApMode mode) {
    require(dets_by_image.size() == gt_by_image.size(), ErrKind::validation,
            "average_precision: image count mismatch");
    const MatchResult m = greedy_match(dets_by_image, gt_by_image, iou_thresh);
    if (m.npos == 0) return std::nullopt;
    const int nd = static_cast<int>(m.tp.size());
    if (nd == 0) return 0.0;

    std::vector<double> precision(static_cast<size_t>(nd)), recall(static_cast<size_t>(nd));
    int tp = 0;
    for (int i = 0; i < nd; ++i) {
        tp += m.tp[static_cast<size_t>(i)];
        precision[static_cast<size_t>(i)] = static_cast<double>(tp) / (i + 1);
        recall[static_cast<size_t>(i)] = static_cast<double>(tp) / m.npos;
    }
    // precision envelope: best precision at or beyond each rank
    std::vector<double> env = precision;
    for (int i = nd - 2; i >= 0; --i)
        env[static_cast<size_t>(i)] = std::max(env[static_cast<size_t>(i)],
                                               env[static_cast<size_t>(i) + 1]);

    if (mode == ApMode::interp101) {
        double total = 0.0;
        int j = 0;
        for (int g = 0; g <= 100; ++g) {
            const double r = g / 100.0;
            while (j < nd && recall[static_cast<size_t>(j)] < r) ++j;
            total += j < nd ? env[static_cast<size_t>(j)] : 0.0;
        }
        return total / 101.0;
    }
    // all-points: sum precision envelope over recall increments
    double ap = 0.0;
    double prev_recall = 0.0;
    for (int i = 0; i < nd; ++i) {
        const double dr = recall[static_cast<size_t>(i)] - prev_recall;
        if (dr > 0.0) {
            ap += dr * env[static_cast<size_t>(i)];
            prev_recall = recall[static_cast<size_t>(i)];
        }
    }
    return ap;
}

std::optional<double> map_range(const std::vector<std::vector<Detection>>& dets_by_image,
                                const std::vector<std::vector<Box>>& gt_by_image,
                                const std::vector<double>& thresholds, ApMode mode) {
    require(!thresholds.empty(), ErrKind::validation, "map_range: need at least one threshold");
    double total = 0.0;
    for (double t : thresholds) {
        const auto ap = average_precision(dets_by_image, gt_by_image, t, mode);
        if (!ap) return std::nullopt;
        total += *ap;
    }
    return total / static_cast<double>(thresholds.size());
}

std::vector<double> coco_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

EvalRecord evaluate_patch(const DetectorModel& model, const std::vector<Scene>& scenes,
                          const Patch* patch, double scale, double conf_thresh, double nms_iou,
                          ApMode mode) {
    require(!scenes.empty(), ErrKind::validation, "evaluate_patch: empty scene list");
    require(scale > 0.0, ErrKind::validation, "evaluate_patch: scale must be positive");
    const int n = static_cast<int>(scenes.size());
    const int s = model.input_size;
    const int g = model.grid();

    EvalRecord rec;
    rec.images = n;

    std::vector<std::vector<Detection>> base_dets(scenes.size());
    std::vector<std::vector<Detection>> patched_dets(scenes.size());
    std::vector<std::vector<Box>> gt(scenes.size());
    std::vector<int> skipped(scenes.size(), 0);
    std::vector<double> obj_sum(scenes.size(), 0.0);
    std::vector<double> obj_cnt(scenes.size(), 0.0);

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        const Scene& sc = scenes[static_cast<size_t>(i)];
        gt[static_cast<size_t>(i)] = sc.gt;
        const Tensor base_raw = forward(model, sc.image);
        base_dets[static_cast<size_t>(i)] = decode(model, base_raw, conf_thresh, nms_iou);

        Tensor image = sc.image;
        if (patch) {
            for (const Box& b : sc.gt) {
                if (scale * b.longer_side() < 2.0) {
                    ++skipped[static_cast<size_t>(i)];
                    continue;
                }
                image = apply_patch_eval(image, patch->pixels, b, scale);
            }
        }
        const Tensor raw = patch ? forward(model, image) : base_raw;
        patched_dets[static_cast<size_t>(i)] = patch
                                                   ? decode(model, raw, conf_thresh, nms_iou)
                                                   : base_dets[static_cast<size_t>(i)];

        const Tensor mask = gt_cell_mask(sc.gt, s, g);
        double os = 0.0, oc = 0.0;
        for (int64_t t = 0; t < mask.numel(); ++t) {
            if (mask[t] <= 0.0) continue;
            const double z = raw[t]; // channel 0 is the objectness plane
            os += 1.0 / (1.0 + std::exp(-z));
            oc += 1.0;
        }
        obj_sum[static_cast<size_t>(i)] = os;
        obj_cnt[static_cast<size_t>(i)] = oc;
    }

    for (int i = 0; i < n; ++i) {
        rec.boxes_total += static_cast<int>(gt[static_cast<size_t>(i)].size());
        rec.boxes_skipped += skipped[static_cast<size_t>(i)];
    }
    double osum = 0.0, ocnt = 0.0;
    for (int i = 0; i < n; ++i) {
        osum += obj_sum[static_cast<size_t>(i)];
        ocnt += obj_cnt[static_cast<size_t>(i)];
    }
    rec.mean_gt_objectness = ocnt > 0.0 ? osum / ocnt : 0.0;

    const auto thresholds = coco_thresholds();
    const auto b50 = average_precision(base_dets, gt, 0.5, mode);
    const auto brange = map_range(base_dets, gt, thresholds, mode);
    require(b50.has_value(), ErrKind::validation, "evaluate_patch: dataset has no ground truth");
    rec.base_map50 = *b50;
    rec.base_map5095 = *brange;
    const auto p50 = average_precision(patched_dets, gt, 0.5, mode);
    const auto prange = map_range(patched_dets, gt, thresholds, mode);
    rec.map50 = *p50;
    rec.map5095 = *prange;
    rec.delta_map50 = rec.base_map50 - rec.map50;
    rec.delta_map5095 = rec.base_map5095 - rec.map5095;
    return rec;
}

} // namespace patchlab
