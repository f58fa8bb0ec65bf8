// SPDX-License-Identifier: Apache-2.0
#include "patchlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "patchlab/kernels.hpp"

namespace patchlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Mat3 = std::array<double, 9>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[static_cast<size_t>(i * 3 + k)] * b[static_cast<size_t>(k * 3 + j)];
            r[static_cast<size_t>(i * 3 + j)] = s;
        }
    return r;
}

// homography taking the four [-1,1]^2 corners to the given quad (8x8 DLT
// system, partial-pivot elimination)
Mat3 square_to_quad(const std::array<double, 4>& qx, const std::array<double, 4>& qy) {
    constexpr double sx[4] = {-1.0, 1.0, 1.0, -1.0};
    constexpr double sy[4] = {-1.0, -1.0, 1.0, 1.0};
    double a[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = sx[i], y = sy[i];
        const double u = qx[static_cast<size_t>(i)], v = qy[static_cast<size_t>(i)];
        double* r0 = a[2 * i];
        double* r1 = a[2 * i + 1];
        r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
        r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int piv = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        require(std::abs(a[piv][col]) > 1e-12, ErrKind::validation,
                "degenerate perspective quad");
        if (piv != col)
            for (int c = 0; c < 9; ++c) std::swap(a[piv][c], a[col][c]);
        for (int r = 0; r < 8; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
        }
    }
    Mat3 h{};
    for (int i = 0; i < 8; ++i) h[static_cast<size_t>(i)] = a[i][8] / a[i][i];
    h[8] = 1.0;
    return h;
}

void displaced_corners(const TransformParams& t, std::array<double, 4>& qx,
                       std::array<double, 4>& qy) {
    qx = {-1.0 + t.persp_dx[0], 1.0 - t.persp_dx[1], 1.0 - t.persp_dx[2], -1.0 + t.persp_dx[3]};
    qy = {-1.0 + t.persp_dy[0], -1.0 + t.persp_dy[1], 1.0 - t.persp_dy[2], 1.0 - t.persp_dy[3]};
}

bool is_identity_quad(const TransformParams& t) {
    for (int i = 0; i < 4; ++i)
        if (t.persp_dx[static_cast<size_t>(i)] != 0.0 || t.persp_dy[static_cast<size_t>(i)] != 0.0)
            return false;
    return true;
}

} // namespace

void AttackConfig::validate() const {
    require(epochs >= 1, ErrKind::validation, "attack epochs must be >= 1");
    require(resize_lo > 0.0 && resize_lo <= resize_hi && resize_hi <= 1.0, ErrKind::validation,
            cat("resize range must satisfy 0 < lo <= hi <= 1, got [", resize_lo, ",", resize_hi,
                "]"));
    require(rotation_bound_deg >= 0.0 && rotation_bound_deg <= 180.0, ErrKind::validation,
            "rotation bound must lie in [0,180] degrees");
    require(lr0 > 0.0, ErrKind::validation, "lr0 must be positive");
    require(tv_weight >= 0.0, ErrKind::validation, "tv_weight must be >= 0");
    require(perspective_scale >= 0.0 && perspective_scale < 1.0, ErrKind::validation,
            "perspective scale must lie in [0,1)");
    require(patch_size >= 4 && (patch_channels == 1 || patch_channels == 3),
            ErrKind::validation, "invalid patch shape");
}

std::optional<TransformParams> sample_transform(Rng& rng, const AttackConfig& cfg,
                                                const Box& bbox) {
    require(bbox.valid(), ErrKind::validation, "sample_transform: degenerate box");
    const double longer = bbox.longer_side();
    // minimum-scale patch cannot fit inside the box even axis-aligned
    if (cfg.resize_lo * longer > bbox.shorter_side() + 1e-9) return std::nullopt;

    TransformParams t;
    t.side_px = rng.uniform(cfg.resize_lo, cfg.resize_hi) * longer;
    t.rotation_deg = rng.uniform(-cfg.rotation_bound_deg, cfg.rotation_bound_deg);
    for (int i = 0; i < 4; ++i) {
        t.persp_dx[static_cast<size_t>(i)] = rng.uniform(0.0, cfg.perspective_scale);
        t.persp_dy[static_cast<size_t>(i)] = rng.uniform(0.0, cfg.perspective_scale);
    }

    // bounds of the rotated, scaled, perspective-displaced quad around the origin
    std::array<double, 4> qx, qy;
    displaced_corners(t, qx, qy);
    const double rad = t.rotation_deg * kPi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double half = t.side_px / 2.0;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (int i = 0; i < 4; ++i) {
        const double px = half * qx[static_cast<size_t>(i)];
        const double py = half * qy[static_cast<size_t>(i)];
        const double rx = c * px - s * py;
        const double ry = s * px + c * py;
        xmin = std::min(xmin, rx);
        xmax = std::max(xmax, rx);
        ymin = std::min(ymin, ry);
        ymax = std::max(ymax, ry);
    }

    // translation range keeping the quad inside the box; empty range = skip
    const double cx_lo = bbox.x1 - xmin, cx_hi = bbox.x2 - xmax;
    const double cy_lo = bbox.y1 - ymin, cy_hi = bbox.y2 - ymax;
    if (cx_lo > cx_hi + 1e-12 || cy_lo > cy_hi + 1e-12) return std::nullopt;
    t.cx = rng.uniform(cx_lo, std::max(cx_lo, cx_hi));
    t.cy = rng.uniform(cy_lo, std::max(cy_lo, cy_hi));

    t.gain_b = rng.uniform(cfg.jitter_brightness_lo, cfg.jitter_brightness_hi);
    t.gain_c = rng.uniform(cfg.jitter_contrast_lo, cfg.jitter_contrast_hi);
    t.gain_s = rng.uniform(cfg.jitter_saturation_lo, cfg.jitter_saturation_hi);
    return t;
}

std::array<double, 9> patch_to_image_matrix(const TransformParams& t) {
    const double rad = t.rotation_deg * kPi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double half = t.side_px / 2.0;
    const Mat3 rot_scale{c * half, -s * half, 0.0, s * half, c * half, 0.0, 0.0, 0.0, 1.0};
    const Mat3 translate{1.0, 0.0, t.cx, 0.0, 1.0, t.cy, 0.0, 0.0, 1.0};
    Mat3 m = matmul(translate, rot_scale);
    if (!is_identity_quad(t)) {
        std::array<double, 4> qx, qy;
        displaced_corners(t, qx, qy);
        m = matmul(m, square_to_quad(qx, qy));
    }
    return m;
}

std::array<double, 9> invert_homography(const std::array<double, 9>& m) {
    const double a = m[0], b = m[1], c = m[2];
    const double d = m[3], e = m[4], f = m[5];
    const double g = m[6], h = m[7], i = m[8];
    const double det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    require(std::abs(det) > 1e-14, ErrKind::validation, "singular homography");
    const double inv = 1.0 / det;
    return {(e * i - f * h) * inv, (c * h - b * i) * inv, (b * f - c * e) * inv,
            (f * g - d * i) * inv, (a * i - c * g) * inv, (c * d - a * f) * inv,
            (d * h - e * g) * inv, (b * g - a * h) * inv, (a * e - b * d) * inv};
}

int apply_patch(Tape& tape, int image, int patch, const TransformParams& t) {
    const Tensor& img = tape.value(image);
    require(img.rank() == 3, ErrKind::validation, "apply_patch expects [C,S,S] image");
    const int c = img.shape[0], oh = img.shape[1], ow = img.shape[2];

    int staged = tape.color_jitter(patch, t.gain_b, t.gain_c, t.gain_s);
    staged = tape.clamp01(staged);

    const auto g = invert_homography(patch_to_image_matrix(t));
    Tensor mask;
    const int canvas = tape.grid_sample(staged, g, oh, ow, &mask);

    Tensor keep({c, oh, ow});
    const int64_t plane = static_cast<int64_t>(oh) * ow;
    for (int ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < plane; ++p)
            keep.data[ci * plane + p] = 1.0 - mask.data[static_cast<size_t>(p)];
    return tape.add(tape.mul(image, tape.constant(std::move(keep))), canvas);
}

Tensor apply_patch_eval(const Tensor& image, const Tensor& patch, const Box& bbox, double scale) {
    require(image.rank() == 3 && patch.rank() == 3 && image.shape[0] == patch.shape[0],
            ErrKind::validation, "apply_patch_eval: channel mismatch");
    TransformParams t;
    t.side_px = scale * bbox.longer_side();
    t.cx = bbox.cx();
    t.cy = bbox.cy();
    const auto g = invert_homography(patch_to_image_matrix(t));

    const int c = image.shape[0], oh = image.shape[1], ow = image.shape[2];
    Tensor canvas({c, oh, ow});
    Tensor mask({1, oh, ow});
    kernels::grid_sample_forward(patch, g, oh, ow, canvas, &mask);
    Tensor out = image;
    const int64_t plane = static_cast<int64_t>(oh) * ow;
    for (int ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < plane; ++p) {
            const double m = mask.data[static_cast<size_t>(p)];
            double& v = out.data[ci * plane + p];
            v = v * (1.0 - m) + canvas.data[ci * plane + p];
        }
    return out;
}

int objectness_loss(Tape& tape, int raw, const std::vector<Box>& gt_boxes, int input_size,
                    bool use_max) {
    const Tensor& rv = tape.value(raw);
    require(rv.rank() == 3 && rv.shape[0] >= 1 && rv.shape[1] == rv.shape[2],
            ErrKind::validation, "objectness_loss expects [C,G,G] raw grid");
    const int grid = rv.shape[1];
    Tensor mask = gt_cell_mask(gt_boxes, input_size, grid);
    double covered = 0.0;
    for (double v : mask.data) covered += v;
    if (covered == 0.0) {
        std::fprintf(stderr,
                     "[patchlab] warning: no grid cells covered by ground truth; "
                     "objectness loss is 0\n");
        return tape.constant(Tensor::scalar(0.0));
    }
    const int obj = tape.sigmoid(tape.slice_channel(raw, 0));
    return use_max ? tape.masked_max(obj, std::move(mask))
                   : tape.masked_mean(obj, std::move(mask));
}

double tv_loss(const Tensor& patch) {
    Tape t;
    return t.value(t.tv(t.constant(patch)))[0];
}

void adamw_step(Tensor& params, const Tensor& grads, AdamWState& state, double lr, double beta1,
                double beta2, double eps, double weight_decay) {
    require(params.same_shape(grads), ErrKind::validation,
            cat("adamw: shape mismatch ", params.shape_str(), " vs ", grads.shape_str()));
    if (state.t == 0) {
        state.m = Tensor(params.shape);
        state.v = Tensor(params.shape);
    }
    if (!all_finite(grads))
        fail(ErrKind::training, "non-finite gradient at AdamW step ", state.t + 1);
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (int64_t i = 0; i < params.numel(); ++i) {
        const double g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * params[i]);
    }
}

double lr_schedule(Scheduler kind, int epoch, const AttackConfig& cfg) {
    require(epoch >= 0 && epoch <= cfg.epochs, ErrKind::validation,
            cat("epoch ", epoch, " outside [0,", cfg.epochs, "]"));
    switch (kind) {
    case Scheduler::step:
        return cfg.lr0 * std::pow(cfg.step_gamma, epoch / cfg.step_size());
    case Scheduler::cosine:
        return cfg.lr0 * 0.5 * (1.0 + std::cos(kPi * epoch / cfg.epochs));
    }
    fail(ErrKind::validation, "unknown scheduler kind");
}

PatchTrainResult train_patch(const DetectorModel& model, const std::vector<Scene>& scenes,
                             const AttackConfig& cfg) {
    cfg.validate();
    require(!scenes.empty(), ErrKind::validation, "train_patch: empty dataset");
    const int s = model.input_size;
    require(scenes.front().image.shape[1] == s, ErrKind::validation,
            "train_patch: scene size does not match detector input");

    PatchTrainResult res;
    res.patch = init_random(cfg.patch_channels, cfg.patch_size, cfg.patch_size,
                            seed_mix(cfg.seed, 0xA11));
    AdamWState state;
    Rng rng(seed_mix(cfg.seed, 0xB22));

    std::vector<int> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(cfg.scheduler, epoch, cfg);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);

        double epoch_loss = 0.0;
        for (int idx : order) {
            const Scene& sc = scenes[static_cast<size_t>(idx)];
            Tape tape;
            const int pnode = tape.leaf(res.patch.pixels, true);
            int cur = tape.constant(sc.image);
            for (const Box& b : sc.gt) {
                const auto t = sample_transform(rng, cfg, b);
                if (!t) continue; // skip-box: this draw cannot fit inside
                cur = apply_patch(tape, cur, pnode, *t);
            }
            const int raw = forward_on_tape(tape, model, cur);
            int loss = objectness_loss(tape, raw, sc.gt, s, cfg.objectness_max);
            if (cfg.tv_weight > 0.0)
                loss = tape.add(loss, tape.scale(tape.tv(pnode), cfg.tv_weight));
            const double lv = tape.value(loss)[0];
            if (!std::isfinite(lv)) {
                std::string hist;
                for (double v : res.epoch_losses) hist += cat(v, " ");
                fail(ErrKind::training, "diverging attack loss at epoch ", epoch,
                     "; history: ", hist);
            }
            const auto grads = tape.backward(loss);
            adamw_step(res.patch.pixels, grads.at(pnode), state, lr, 0.9, 0.999, 1e-8,
                       cfg.weight_decay);
            for (double& v : res.patch.pixels.data) v = std::min(1.0, std::max(0.0, v));
            epoch_loss += lv;
        }
        res.epoch_losses.push_back(epoch_loss / static_cast<double>(scenes.size()));
    }

    res.patch.meta["seed"] = cat(cfg.seed);
    res.patch.meta["epochs"] = cat(cfg.epochs);
    res.patch.meta["scheduler"] = cfg.scheduler == Scheduler::step ? "step" : "cosine";
    res.patch.meta["resize"] = cat(cfg.resize_lo, ":", cfg.resize_hi);
    res.patch.meta["rotation"] = cat(cfg.rotation_bound_deg);
    res.patch.meta["lr0"] = cat(cfg.lr0);
    res.patch.meta["tv_weight"] = cat(cfg.tv_weight);
    res.patch.meta["step_gamma"] = cat(cfg.step_gamma);
    res.patch.meta["step_size"] = cat(cfg.step_size());
    return res;
}

} // namespace patchlab
