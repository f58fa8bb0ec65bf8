// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "patchlab/detector.hpp"
#include "patchlab/metrics.hpp"
#include "patchlab/patch.hpp"

#include "oracles.hpp"

using namespace patchlab;

namespace {

// unit-cell counting oracle for integer-coordinate boxes
double iou_rasterized(const Box& a, const Box& b) {
    const int x0 = static_cast<int>(std::min(a.x1, b.x1));
    const int x1 = static_cast<int>(std::max(a.x2, b.x2));
    const int y0 = static_cast<int>(std::min(a.y1, b.y1));
    const int y1 = static_cast<int>(std::max(a.y2, b.y2));
    int64_t inter = 0, uni = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const double cx = x + 0.5, cy = y + 0.5;
            const bool ina = a.contains(cx, cy) && cx < a.x2 && cy < a.y2;
            const bool inb = b.contains(cx, cy) && cx < b.x2 && cy < b.y2;
            inter += ina && inb;
            uni += ina || inb;
        }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// independent PR construction: for every grid recall level scan all prefixes
struct OracleInput {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<Box>> gt;
};

double ap_oracle(const OracleInput& in, double thresh, bool interp101) {
    struct Row {
        double conf;
        int img, idx;
    };
    std::vector<Row> rows;
    int npos = 0;
    for (const auto& g : in.gt) npos += static_cast<int>(g.size());
    for (int img = 0; img < static_cast<int>(in.dets.size()); ++img)
        for (int i = 0; i < static_cast<int>(in.dets[static_cast<size_t>(img)].size()); ++i)
            rows.push_back({in.dets[static_cast<size_t>(img)][static_cast<size_t>(i)].confidence,
                            img, i});
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        if (a.img != b.img) return a.img < b.img;
        return a.idx < b.idx;
    });
    std::vector<std::vector<char>> used(in.gt.size());
    for (size_t i = 0; i < in.gt.size(); ++i) used[i].assign(in.gt[i].size(), 0);
    std::vector<char> tpflag;
    for (const auto& r : rows) {
        const Box& db = in.dets[static_cast<size_t>(r.img)][static_cast<size_t>(r.idx)].box;
        int best = -1;
        double best_iou = 0.0;
        for (int gi = 0; gi < static_cast<int>(in.gt[static_cast<size_t>(r.img)].size()); ++gi) {
            if (used[static_cast<size_t>(r.img)][static_cast<size_t>(gi)]) continue;
            const double v = iou(db, in.gt[static_cast<size_t>(r.img)][static_cast<size_t>(gi)]);
            if (v >= thresh && v > best_iou) {
                best_iou = v;
                best = gi;
            }
        }
        if (best >= 0) used[static_cast<size_t>(r.img)][static_cast<size_t>(best)] = 1;
        tpflag.push_back(best >= 0 ? 1 : 0);
    }
    const int nd = static_cast<int>(tpflag.size());
    if (interp101) {
        double total = 0.0;
        for (int g = 0; g <= 100; ++g) {
            const double rlevel = g / 100.0;
            double best = 0.0;
            int tp = 0;
            for (int k = 1; k <= nd; ++k) {
                tp += tpflag[static_cast<size_t>(k - 1)];
                if (static_cast<double>(tp) / npos >= rlevel)
                    best = std::max(best, static_cast<double>(tp) / k);
            }
            total += best;
        }
        return total / 101.0;
    }
    // all-points: integrate the exact envelope over recall steps
    double ap = 0.0;
    int tp = 0;
    double prev_recall = 0.0;
    for (int k = 1; k <= nd; ++k) {
        tp += tpflag[static_cast<size_t>(k - 1)];
        const double rec = static_cast<double>(tp) / npos;
        if (rec > prev_recall) {
            double best = 0.0;
            int tp2 = 0;
            for (int m = 1; m <= nd; ++m) {
                tp2 += tpflag[static_cast<size_t>(m - 1)];
                if (static_cast<double>(tp2) / npos >= rec)
                    best = std::max(best, static_cast<double>(tp2) / m);
            }
            ap += (rec - prev_recall) * best;
            prev_recall = rec;
        }
    }
    return ap;
}

OracleInput single_image(std::vector<Detection> dets, std::vector<Box> gt) {
    return {{std::move(dets)}, {std::move(gt)}};
}

} // namespace

TEST_CASE("iou basics") {
    const Box a{0, 0, 2, 2};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, Box{5, 5, 7, 7}) == 0.0);
    CHECK(iou(a, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    CHECK_THROWS_AS(iou(a, Box{3, 3, 3, 3}), Error);
}

TEST_CASE("iou matches rasterized area counts") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const int ax = rng.uniform_int(20), ay = rng.uniform_int(20);
        const int bx = rng.uniform_int(20), by = rng.uniform_int(20);
        const Box a{static_cast<double>(ax), static_cast<double>(ay),
                    static_cast<double>(ax + 1 + rng.uniform_int(15)),
                    static_cast<double>(ay + 1 + rng.uniform_int(15))};
        const Box b{static_cast<double>(bx), static_cast<double>(by),
                    static_cast<double>(bx + 1 + rng.uniform_int(15)),
                    static_cast<double>(by + 1 + rng.uniform_int(15))};
        CHECK(std::abs(iou(a, b) - iou_rasterized(a, b)) < 1e-9);
    }
}

TEST_CASE("average precision fixtures") {
    const Box g{0, 0, 10, 10};
    SUBCASE("perfect detection") {
        const auto ap = average_precision({{Detection{g, 1.0}}}, {{g}}, 0.5);
        CHECK(*ap == 1.0);
    }
    SUBCASE("no detections") {
        const auto ap = average_precision({{}}, {{g}}, 0.5);
        CHECK(*ap == 0.0);
    }
    SUBCASE("empty ground truth is a skip sentinel") {
        const auto ap = average_precision({{Detection{g, 0.9}}}, {{}}, 0.5);
        CHECK(!ap.has_value());
    }
    SUBCASE("trailing false positive does not hurt 101-point AP") {
        const auto in = single_image({Detection{g, 0.9}, Detection{{20, 20, 25, 25}, 0.8}}, {g});
        CHECK(*average_precision(in.dets, in.gt, 0.5) == 1.0);
        CHECK(*average_precision(in.dets, in.gt, 0.5) == ap_oracle(in, 0.5, true));
    }
    SUBCASE("leading false positive halves the envelope") {
        const auto in = single_image({Detection{{20, 20, 25, 25}, 0.95}, Detection{g, 0.9}}, {g});
        CHECK(*average_precision(in.dets, in.gt, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(*average_precision(in.dets, in.gt, 0.5) == ap_oracle(in, 0.5, true));
    }
}

TEST_CASE("average precision equals the exhaustive oracle on small fixtures") {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        OracleInput in;
        const int n_img = 1 + rng.uniform_int(2);
        in.dets.resize(static_cast<size_t>(n_img));
        in.gt.resize(static_cast<size_t>(n_img));
        int total_dets = 0;
        for (int img = 0; img < n_img; ++img) {
            const int n_gt = rng.uniform_int(3);
            for (int i = 0; i < n_gt; ++i) {
                const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
                in.gt[static_cast<size_t>(img)].push_back(
                    {x, y, x + rng.uniform(4, 14), y + rng.uniform(4, 14)});
            }
            while (total_dets < 6 && rng.uniform() < 0.7) {
                // half near a gt box, half random
                Box b;
                if (!in.gt[static_cast<size_t>(img)].empty() && rng.uniform() < 0.5) {
                    const Box& gb = in.gt[static_cast<size_t>(img)][static_cast<size_t>(
                        rng.uniform_int(static_cast<int>(in.gt[static_cast<size_t>(img)].size())))];
                    const double dx = rng.uniform(-3, 3), dy = rng.uniform(-3, 3);
                    b = {gb.x1 + dx, gb.y1 + dy, gb.x2 + dx, gb.y2 + dy};
                } else {
                    const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
                    b = {x, y, x + rng.uniform(4, 14), y + rng.uniform(4, 14)};
                }
                in.dets[static_cast<size_t>(img)].push_back({b, rng.uniform(0.05, 0.99)});
                ++total_dets;
            }
        }
        int npos = 0;
        for (const auto& g : in.gt) npos += static_cast<int>(g.size());
        if (npos == 0) continue;
        for (double thresh : {0.3, 0.5, 0.75}) {
            CAPTURE(trial);
            CAPTURE(thresh);
            CHECK(*average_precision(in.dets, in.gt, thresh) == ap_oracle(in, thresh, true));
            CHECK(*average_precision(in.dets, in.gt, thresh, ApMode::all_points) ==
                  doctest::Approx(ap_oracle(in, thresh, false)).epsilon(1e-12));
        }
    }
}

TEST_CASE("AP is invariant under order-preserving confidence rescaling") {
    Rng rng(123);
    OracleInput in;
    in.gt = {{{0, 0, 10, 10}, {20, 20, 32, 30}}};
    in.dets = {{Detection{{1, 0, 11, 10}, 0.9}, Detection{{19, 21, 31, 31}, 0.6},
                Detection{{40, 40, 45, 45}, 0.3}}};
    const double base = *average_precision(in.dets, in.gt, 0.5);
    auto scaled = in.dets;
    for (auto& img : scaled)
        for (auto& d : img) d.confidence = 0.05 + d.confidence * 0.5; // monotone map
    CHECK(*average_precision(scaled, in.gt, 0.5) == base);
}

TEST_CASE("map_range basics and the shifted-box fixture") {
    const Box g{0, 0, 10, 10};
    const auto dets = std::vector<std::vector<Detection>>{{Detection{g, 1.0}}};
    const auto gts = std::vector<std::vector<Box>>{{g}};
    CHECK(*map_range(dets, gts, {0.5}) == *average_precision(dets, gts, 0.5));
    CHECK(*map_range(dets, gts, coco_thresholds()) == 1.0);

    // detection whose IoU with the ground truth is exactly 5/8 = 0.625: it
    // passes thresholds .5, .55, .6 and fails .65 and above, so the ten-point
    // mean is exactly 3/10
    const Box gt_box{0, 0, 10, 5};
    const Box det_box{0, 0, 10, 8};
    CHECK(iou(det_box, gt_box) == 0.625);
    const auto shifted = std::vector<std::vector<Detection>>{{Detection{det_box, 0.9}}};
    const auto shifted_gt = std::vector<std::vector<Box>>{{gt_box}};
    CHECK(*map_range(shifted, shifted_gt, coco_thresholds()) == 0.3);
}

TEST_CASE("evaluate_patch with zero coverage equals the baseline bit-exactly") {
    const auto scenes = gen_synthetic(6, 64, 77);
    const DetectorModel model = make_detector(64, 5);
    const Patch p = gray_patch(3, 8, 8, 0.5);
    // scale so small every box is skipped as sub-2px
    const EvalRecord rec = evaluate_patch(model, scenes, &p, 1e-4);
    CHECK(rec.boxes_skipped == rec.boxes_total);
    CHECK(rec.map50 == rec.base_map50);
    CHECK(rec.map5095 == rec.base_map5095);
    CHECK(rec.delta_map50 == 0.0);
    CHECK(rec.delta_map5095 == 0.0);

    const EvalRecord base = evaluate_patch(model, scenes, nullptr);
    CHECK(base.map50 == base.base_map50);
    CHECK(base.delta_map50 == 0.0);
}
