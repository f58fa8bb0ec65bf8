// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "patchlab/attack.hpp"
#include "patchlab/metrics.hpp"

#include "oracles.hpp"

using namespace patchlab;
using oracles::fd_gradient;
using oracles::grad_err;
using oracles::random_tensor;

namespace {

AttackConfig base_config() {
    AttackConfig cfg;
    cfg.epochs = 30;
    return cfg;
}

} // namespace

TEST_CASE("sample_transform degenerate ranges center the patch") {
    AttackConfig cfg = base_config();
    cfg.resize_lo = cfg.resize_hi = 1.0;
    cfg.rotation_bound_deg = 0.0;
    cfg.perspective_scale = 0.0;
    Rng rng(1);
    const Box bbox{20, 30, 60, 70}; // square, 40x40
    const auto t = sample_transform(rng, cfg, bbox);
    REQUIRE(t.has_value());
    CHECK(t->side_px == 40.0);
    CHECK(t->rotation_deg == 0.0);
    CHECK(t->cx == doctest::Approx(40.0).epsilon(1e-12));
    CHECK(t->cy == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("sample_transform respects the scale range over many draws") {
    AttackConfig cfg = base_config();
    cfg.resize_lo = 0.5;
    cfg.resize_hi = 0.75;
    cfg.rotation_bound_deg = 30.0;
    Rng rng(2);
    const Box bbox{0, 0, 100, 100};
    double lo = 1e9, hi = -1e9, rot_lo = 1e9, rot_hi = -1e9;
    int accepted = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto t = sample_transform(rng, cfg, bbox);
        if (!t) continue;
        ++accepted;
        const double frac = t->side_px / bbox.longer_side();
        lo = std::min(lo, frac);
        hi = std::max(hi, frac);
        rot_lo = std::min(rot_lo, t->rotation_deg);
        rot_hi = std::max(rot_hi, t->rotation_deg);
        CHECK(frac >= 0.5);
        CHECK(frac <= 0.75);
        CHECK(std::abs(t->rotation_deg) <= 30.0);
    }
    CHECK(accepted > 9000); // generous box, nearly everything fits
    CHECK(lo < 0.51);
    CHECK(hi > 0.74);
    CHECK(rot_lo < -29.0);
    CHECK(rot_hi > 29.0);
}

TEST_CASE("sample_transform is reproducible and signals unfittable boxes") {
    const AttackConfig cfg = base_config();
    Rng a(7), b(7);
    const Box bbox{0, 0, 80, 80};
    for (int i = 0; i < 50; ++i) {
        const auto ta = sample_transform(a, cfg, bbox);
        const auto tb = sample_transform(b, cfg, bbox);
        REQUIRE(ta.has_value() == tb.has_value());
        if (ta) {
            CHECK(ta->side_px == tb->side_px);
            CHECK(ta->cx == tb->cx);
            CHECK(ta->gain_s == tb->gain_s);
        }
    }
    // min scale 0.75 * 100 = 75 > short side 30: always a skip signal
    Rng c(9);
    const Box thin{0, 0, 30, 100};
    CHECK(!sample_transform(c, cfg, thin).has_value());
}

TEST_CASE("apply_patch with an aligned identity transform is a no-op") {
    Rng rng(3);
    const Tensor img = random_tensor({3, 16, 16}, rng);
    const int p = 8, x0 = 3, y0 = 4;
    Tensor patch({3, p, p});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x) patch.at3(c, y, x) = img.at3(c, y0 + y, x0 + x);

    TransformParams t;
    t.side_px = p - 1; // patch grid spans side_px pixels corner to corner
    t.cx = x0 + (p - 1) / 2.0;
    t.cy = y0 + (p - 1) / 2.0;
    Tape tape;
    const int out = apply_patch(tape, tape.constant(img), tape.constant(patch), t);
    CHECK(tape.value(out).data == img.data);
}

TEST_CASE("an all-black patch zeroes the covered pixels") {
    Rng rng(4);
    const Tensor img = random_tensor({3, 16, 16}, rng, 0.2, 0.9);
    const Tensor patch({3, 8, 8}, 0.0);
    TransformParams t;
    t.side_px = 7;
    t.cx = 7.0;
    t.cy = 7.0;
    Tape tape;
    const int out = apply_patch(tape, tape.constant(img), tape.constant(patch), t);
    const Tensor& o = tape.value(out);
    for (int c = 0; c < 3; ++c)
        for (int y = 4; y <= 10; ++y)
            for (int x = 4; x <= 10; ++x) CHECK(o.at3(c, y, x) == 0.0);
    CHECK(o.at3(0, 0, 0) == img.at3(0, 0, 0));
}

TEST_CASE("compositing gradient w.r.t. the patch matches finite differences") {
    Rng rng(5);
    const Tensor img = random_tensor({3, 20, 20}, rng);
    const Tensor w = random_tensor({3, 20, 20}, rng, -1.0, 1.0);
    // interior patch values keep jitter + clamp away from the kinks
    const Tensor patch = random_tensor({3, 8, 8}, rng, 0.2, 0.8);
    TransformParams t;
    t.side_px = 9.0;
    t.rotation_deg = 20.0;
    t.cx = 10.3;
    t.cy = 9.1;
    t.persp_dx = {0.05, 0.12, 0.08, 0.02};
    t.persp_dy = {0.11, 0.03, 0.06, 0.09};
    t.gain_b = 1.06;
    t.gain_c = 0.97;
    t.gain_s = 1.02;

    auto loss = [&](const Tensor& pt) {
        Tape tape;
        const int out = apply_patch(tape, tape.constant(img), tape.leaf(pt, true), t);
        return tape.value(tape.sum(tape.mul(out, tape.constant(w))))[0];
    };
    Tape tape;
    const int pnode = tape.leaf(patch, true);
    const int out = apply_patch(tape, tape.constant(img), pnode, t);
    const auto grads = tape.backward(tape.sum(tape.mul(out, tape.constant(w))));
    const Tensor fd = fd_gradient(loss, patch);
    CHECK(grad_err(grads.at(pnode), fd) < 1e-4);
}

TEST_CASE("objectness_loss values and enumeration oracle") {
    const DetectorModel m = make_detector(160, 0);
    const std::vector<Box> boxes{{10, 10, 60, 60}, {90, 100, 150, 150}};

    SUBCASE("very negative logits give ~0") {
        Tape tape;
        const int raw = tape.constant(Tensor({5, 10, 10}, -100.0));
        const int loss = objectness_loss(tape, raw, boxes, 160);
        CHECK(tape.value(loss)[0] < 1e-20);
    }
    SUBCASE("zero logits give one half") {
        Tape tape;
        const int raw = tape.constant(Tensor({5, 10, 10}, 0.0));
        const int loss = objectness_loss(tape, raw, boxes, 160);
        CHECK(tape.value(loss)[0] == 0.5);
    }
    SUBCASE("random grid equals the covered-cell enumeration") {
        Rng rng(6);
        Tensor raw({5, 10, 10});
        for (double& v : raw.data) v = rng.uniform(-3.0, 3.0);
        Tape tape;
        const int loss = objectness_loss(tape, tape.constant(raw), boxes, 160);
        double sum = 0.0;
        int count = 0;
        for (int i = 0; i < 10; ++i)
            for (int j = 0; j < 10; ++j) {
                const double cx = (j + 0.5) * 16.0, cy = (i + 0.5) * 16.0;
                bool covered = false;
                for (const Box& b : boxes) covered = covered || b.contains(cx, cy);
                if (covered) {
                    sum += 1.0 / (1.0 + std::exp(-raw.at3(0, i, j)));
                    ++count;
                }
            }
        REQUIRE(count > 0);
        CHECK(tape.value(loss)[0] == doctest::Approx(sum / count).epsilon(1e-12));
    }
    SUBCASE("max aggregation picks the worst covered cell") {
        Rng rng(7);
        Tensor raw({5, 10, 10});
        for (double& v : raw.data) v = rng.uniform(-3.0, 3.0);
        Tape tape;
        const int loss = objectness_loss(tape, tape.constant(raw), boxes, 160, true);
        double best = -1.0;
        for (int i = 0; i < 10; ++i)
            for (int j = 0; j < 10; ++j) {
                const double cx = (j + 0.5) * 16.0, cy = (i + 0.5) * 16.0;
                for (const Box& b : boxes)
                    if (b.contains(cx, cy))
                        best = std::max(best, 1.0 / (1.0 + std::exp(-raw.at3(0, i, j))));
            }
        CHECK(tape.value(loss)[0] == doctest::Approx(best).epsilon(1e-12));
    }
    SUBCASE("no ground truth yields zero with a warning") {
        Tape tape;
        const int loss = objectness_loss(tape, tape.constant(Tensor({5, 10, 10}, 1.0)), {}, 160);
        CHECK(tape.value(loss)[0] == 0.0);
    }
}

TEST_CASE("tv loss values") {
    CHECK(tv_loss(Tensor({3, 8, 8}, 0.42)) == 0.0);

    Tensor two({1, 1, 2});
    two.data = {0.0, 1.0};
    CHECK(tv_loss(two) == 1.0);

    Tensor checker({1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) checker.at3(0, y, x) = (x + y) % 2;
    // 3x3 box blur of the checkerboard
    Tensor blurred({1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double s = 0.0;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= 8 || xx < 0 || xx >= 8) continue;
                    s += checker.at3(0, yy, xx);
                    ++n;
                }
            blurred.at3(0, y, x) = s / n;
        }
    CHECK(tv_loss(checker) > tv_loss(blurred));
}

TEST_CASE("adamw closed forms") {
    Rng rng(8);
    const Tensor g0 = random_tensor({3, 4, 4}, rng, -1.0, 1.0);
    Tensor p = random_tensor({3, 4, 4}, rng);
    const Tensor p0 = p;

    SUBCASE("zero gradients, zero decay: parameters unchanged") {
        AdamWState st;
        adamw_step(p, Tensor({3, 4, 4}, 0.0), st, 0.01);
        CHECK(p.data == p0.data);
    }
    SUBCASE("first step from zero state") {
        AdamWState st;
        adamw_step(p, g0, st, 0.01);
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double expect = p0[i] - 0.01 * g0[i] / (std::sqrt(g0[i] * g0[i]) + 1e-8);
            CHECK(p[i] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    SUBCASE("pure decoupled decay") {
        AdamWState st;
        adamw_step(p, Tensor({3, 4, 4}, 0.0), st, 0.01, 0.9, 0.999, 1e-8, 0.5);
        for (int64_t i = 0; i < p.numel(); ++i)
            CHECK(p[i] == doctest::Approx(p0[i] * (1.0 - 0.01 * 0.5)).epsilon(1e-12));
    }
    SUBCASE("non-finite gradients are an error naming the step") {
        AdamWState st;
        Tensor bad({3, 4, 4}, 0.0);
        bad[0] = std::nan("");
        CHECK_THROWS_WITH_AS(adamw_step(p, bad, st, 0.01), doctest::Contains("step 1"), Error);
    }
}

TEST_CASE("lr schedules") {
    AttackConfig cfg = base_config();
    cfg.epochs = 100;
    cfg.lr0 = 0.01;
    CHECK(lr_schedule(Scheduler::cosine, 0, cfg) == 0.01);
    CHECK(lr_schedule(Scheduler::cosine, 100, cfg) == doctest::Approx(0.0).epsilon(1e-16));
    CHECK(lr_schedule(Scheduler::cosine, 50, cfg) == doctest::Approx(0.005).epsilon(1e-12));
    // step_size = 33
    CHECK(lr_schedule(Scheduler::step, 0, cfg) == 0.01);
    CHECK(lr_schedule(Scheduler::step, 40, cfg) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(lr_schedule(Scheduler::step, 70, cfg) == doctest::Approx(0.0001).epsilon(1e-12));
    CHECK_THROWS_AS(lr_schedule(Scheduler::step, 101, cfg), Error);
}

TEST_CASE("config validation") {
    AttackConfig cfg = base_config();
    cfg.resize_lo = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = base_config();
    cfg.lr0 = -1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("train_patch is bit-deterministic for a fixed seed") {
    const auto scenes = gen_synthetic(3, 64, 99);
    const DetectorModel m = make_detector(64, 11);
    AttackConfig cfg = base_config();
    cfg.epochs = 2;
    cfg.patch_size = 16;
    cfg.seed = 5;
    const auto r1 = train_patch(m, scenes, cfg);
    const auto r2 = train_patch(m, scenes, cfg);
    CHECK(r1.patch.pixels.data == r2.patch.pixels.data);
    CHECK(r1.epoch_losses == r2.epoch_losses);
    CHECK(r1.patch.meta.at("scheduler") == "step");
}

TEST_CASE("overwhelming tv weight flattens the patch") {
    const auto scenes = gen_synthetic(3, 64, 123);
    const DetectorModel m = make_detector(64, 13);
    AttackConfig cfg = base_config();
    cfg.epochs = 20;
    cfg.scheduler = Scheduler::cosine;
    cfg.patch_size = 16;
    cfg.tv_weight = 1000.0;
    cfg.lr0 = 0.05;
    cfg.seed = 2;
    const auto res = train_patch(m, scenes, cfg);
    CHECK(tv_loss(res.patch.pixels) < 0.01);
}

TEST_CASE("end-to-end attack loss gradient on sampled pixels") {
    const auto scenes = gen_synthetic(2, 64, 321);
    const DetectorModel m = make_detector(64, 17);
    AttackConfig cfg = base_config();
    Rng rng(31);
    // interior values so jitter and clamp stay differentiable at the probes
    Tensor patch = random_tensor({3, 16, 16}, rng, 0.25, 0.75);

    const Scene& sc = scenes[0];
    std::vector<TransformParams> params;
    Rng trng(77);
    for (const Box& b : sc.gt) {
        const auto t = sample_transform(trng, cfg, b);
        if (t) params.push_back(*t);
    }

    auto loss = [&](const Tensor& pt) {
        Tape tape;
        const int pnode = tape.leaf(pt, true);
        int cur = tape.constant(sc.image);
        for (const auto& t : params) cur = apply_patch(tape, cur, pnode, t);
        const int raw = forward_on_tape(tape, m, cur);
        int l = objectness_loss(tape, raw, sc.gt, 64);
        l = tape.add(l, tape.scale(tape.tv(pnode), cfg.tv_weight));
        return std::pair{tape.value(l)[0], pnode};
    };

    Tape tape;
    const int pnode = tape.leaf(patch, true);
    int cur = tape.constant(sc.image);
    for (const auto& t : params) cur = apply_patch(tape, cur, pnode, t);
    const int raw = forward_on_tape(tape, m, cur);
    int l = objectness_loss(tape, raw, sc.gt, 64);
    l = tape.add(l, tape.scale(tape.tv(pnode), cfg.tv_weight));
    const auto grads = tape.backward(l);
    const Tensor& g = grads.at(pnode);

    Rng pick(8);
    for (int rep = 0; rep < 5; ++rep) {
        const int64_t i = pick.uniform_int(static_cast<int>(patch.numel()));
        const double h = 1e-5;
        Tensor pp = patch;
        pp[i] = patch[i] + h;
        const double fp = loss(pp).first;
        pp[i] = patch[i] - h;
        const double fm = loss(pp).first;
        const double fd = (fp - fm) / (2 * h);
        CAPTURE(i);
        CHECK(oracles::rel_err(g[i], fd) < 1e-3);
    }
}
