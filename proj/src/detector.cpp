// SPDX-License-Identifier: Apache-2.0
#include "patchlab/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchlab/attack.hpp"
#include "patchlab/binio.hpp"
#include "patchlab/kernels.hpp"
#include "patchlab/metrics.hpp"
#include "patchlab/rng.hpp"

namespace patchlab {

namespace {

constexpr double kLeakySlope = 0.1;
constexpr double kHeadObjBias = -2.0;
constexpr double kLogSizeClamp = 8.0;

ConvLayer init_layer(Rng& rng, int c_out, int c_in, int k, int stride, int pad) {
    ConvLayer l{c_out, c_in, k, k, stride, pad, Tensor({c_out, c_in, k, k}), Tensor({c_out})};
    const double limit = std::sqrt(6.0 / (c_in * k * k));
    for (double& v : l.w.data) v = rng.uniform(-limit, limit);
    return l;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

DetectorModel make_detector(int input_size, uint64_t seed) {
    require(input_size >= 32 && input_size % 16 == 0, ErrKind::validation,
            cat("detector input size must be a multiple of 16 and >= 32, got ", input_size));
    Rng rng(seed_mix(seed, 0xDE7));
    DetectorModel m;
    m.input_size = input_size;
    m.layers.push_back(init_layer(rng, 8, 3, 4, 2, 1));
    m.layers.push_back(init_layer(rng, 16, 8, 4, 2, 1));
    m.layers.push_back(init_layer(rng, 32, 16, 4, 2, 1));
    m.layers.push_back(init_layer(rng, 32, 32, 4, 2, 1));
    m.layers.push_back(init_layer(rng, 5, 32, 1, 1, 0));
    m.layers.back().b[0] = kHeadObjBias; // start with low objectness everywhere
    return m;
}

Tensor forward(const DetectorModel& model, const Tensor& image) {
    require(image.rank() == 3 && image.shape[0] == 3 && image.shape[1] == model.input_size &&
                image.shape[2] == model.input_size,
            ErrKind::validation, cat("detector expects [3,", model.input_size, ",",
                                     model.input_size, "], got ", image.shape_str()));
    Tensor cur = image;
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const ConvLayer& l = model.layers[li];
        const auto os = kernels::conv2d_out_shape(cur, l.w, l.stride, l.pad);
        Tensor next({l.c_out, os[0], os[1]});
        kernels::conv2d_forward(cur, l.w, nullptr, l.stride, l.pad, next);
        // bias after the accumulation, in the same order as the tape path,
        // so both routes stay bit-identical
        const int64_t plane = static_cast<int64_t>(os[0]) * os[1];
        for (int co = 0; co < l.c_out; ++co)
            for (int64_t p = 0; p < plane; ++p) next.data[co * plane + p] += l.b[co];
        if (li + 1 < model.layers.size())
            for (double& v : next.data) v = v >= 0.0 ? v : kLeakySlope * v;
        cur = std::move(next);
    }
    return cur;
}

int forward_on_tape(Tape& tape, const DetectorModel& model, int image,
                    std::vector<std::array<int, 2>>* params) {
    int cur = image;
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const ConvLayer& l = model.layers[li];
        const bool train = params != nullptr;
        const int w = tape.leaf(l.w, train);
        const int b = tape.leaf(l.b, train);
        if (params) params->push_back({w, b});
        cur = tape.bias_add(tape.conv2d(cur, w, l.stride, l.pad), b);
        if (li + 1 < model.layers.size()) cur = tape.leaky_relu(cur, kLeakySlope);
    }
    return cur;
}

Tensor gt_cell_mask(const std::vector<Box>& boxes, int input_size, int grid) {
    Tensor mask({1, grid, grid});
    const double cell = static_cast<double>(input_size) / grid;
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
            const double cx = (j + 0.5) * cell;
            const double cy = (i + 0.5) * cell;
            for (const Box& b : boxes)
                if (b.contains(cx, cy)) {
                    mask.at3(0, i, j) = 1.0;
                    break;
                }
        }
    return mask;
}

std::vector<Detection> decode(const DetectorModel& model, const Tensor& raw, double conf_thresh,
                              double nms_iou) {
    require(conf_thresh >= 0.0 && conf_thresh <= 1.0 && nms_iou >= 0.0 && nms_iou <= 1.0,
            ErrKind::validation, "decode thresholds must lie in [0,1]");
    const int g = model.grid();
    require(raw.rank() == 3 && raw.shape[0] == 5 && raw.shape[1] == g && raw.shape[2] == g,
            ErrKind::validation, cat("decode expects [5,", g, ",", g, "], got ", raw.shape_str()));
    const double cell = model.cell();
    const double s = model.input_size;

    std::vector<Detection> cands;
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
            const double conf = stable_sigmoid(raw.at3(0, i, j));
            if (conf < conf_thresh) continue;
            const double cx = (j + stable_sigmoid(raw.at3(1, i, j))) * cell;
            const double cy = (i + stable_sigmoid(raw.at3(2, i, j))) * cell;
            const double bw =
                std::exp(std::clamp(raw.at3(3, i, j), -kLogSizeClamp, kLogSizeClamp)) * cell;
            const double bh =
                std::exp(std::clamp(raw.at3(4, i, j), -kLogSizeClamp, kLogSizeClamp)) * cell;
            Box b{std::max(0.0, cx - bw / 2), std::max(0.0, cy - bh / 2),
                  std::min(s, cx + bw / 2), std::min(s, cy + bh / 2)};
            if (b.x2 - b.x1 > 1e-6 && b.y2 - b.y1 > 1e-6) cands.push_back({b, conf});
        }

    std::stable_sort(cands.begin(), cands.end(), [](const Detection& a, const Detection& b) {
        return a.confidence > b.confidence;
    });
    std::vector<Detection> kept;
    for (const Detection& c : cands) {
        bool suppressed = false;
        for (const Detection& k : kept)
            if (iou(c.box, k.box) > nms_iou) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(c);
    }
    return kept;
}

namespace {

struct SceneTargets {
    Tensor obj;     // [1,G,G] 0/1
    Tensor weight;  // [1,G,G] BCE weights
    Tensor box;     // [4,G,G]
    Tensor posmask; // [1,G,G]
};

SceneTargets build_targets(const Scene& sc, int input_size, int grid, double pos_weight) {
    SceneTargets t{Tensor({1, grid, grid}), Tensor({1, grid, grid}, 1.0),
                   Tensor({4, grid, grid}), Tensor({1, grid, grid})};
    const double cell = static_cast<double>(input_size) / grid;
    for (const Box& b : sc.gt) {
        const int j = std::clamp(static_cast<int>(b.cx() / cell), 0, grid - 1);
        const int i = std::clamp(static_cast<int>(b.cy() / cell), 0, grid - 1);
        t.obj.at3(0, i, j) = 1.0;
        t.weight.at3(0, i, j) = pos_weight;
        t.posmask.at3(0, i, j) = 1.0;
        t.box.at3(0, i, j) = std::clamp(b.cx() / cell - j, 0.0, 1.0);
        t.box.at3(1, i, j) = std::clamp(b.cy() / cell - i, 0.0, 1.0);
        t.box.at3(2, i, j) = std::log(std::max(b.width(), 1e-3) / cell);
        t.box.at3(3, i, j) = std::log(std::max(b.height(), 1e-3) / cell);
    }
    return t;
}

// pastes a random occluder inside each box with probability cutout_prob;
// evaluation later places constant patches exactly like this, so the detector
// has to learn to ignore uninformative cover
void cutout_augment(Tensor& image, const std::vector<Box>& boxes, Rng& rng, double prob) {
    const int s = image.shape[1];
    for (const Box& b : boxes) {
        if (rng.uniform() >= prob) continue;
        const double side = rng.uniform(0.45, 0.85) * b.longer_side();
        const double cx = b.cx() + rng.uniform(-0.15, 0.15) * side;
        const double cy = b.cy() + rng.uniform(-0.15, 0.15) * side;
        const int x0 = std::clamp(static_cast<int>(cx - side / 2), 0, s - 1);
        const int x1 = std::clamp(static_cast<int>(cx + side / 2), 0, s - 1);
        const int y0 = std::clamp(static_cast<int>(cy - side / 2), 0, s - 1);
        const int y1 = std::clamp(static_cast<int>(cy + side / 2), 0, s - 1);
        const int mode = rng.uniform_int(5);
        std::array<double, 3> color{};
        if (mode <= 1) {
            color.fill(rng.uniform());
        } else if (mode == 2) {
            for (double& c : color) c = rng.uniform();
        } else if (mode == 4) {
            color.fill(rng.uniform_int(11) / 10.0);
        }
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                for (int c = 0; c < 3; ++c)
                    image.at3(c, y, x) = mode == 3 ? rng.uniform() : color[static_cast<size_t>(c)];
    }
}

} // namespace

DetectorTrainResult train_detector(const std::vector<Scene>& train,
                                   const std::vector<Scene>& heldout,
                                   const DetectorTrainConfig& cfg) {
    require(train.size() >= 100, ErrKind::validation,
            cat("detector training needs >= 100 scenes, got ", train.size()));
    require(cfg.epochs >= 1, ErrKind::validation, "epochs must be >= 1");
    const int s = train.front().image.shape[1];

    DetectorTrainResult res;
    res.model = make_detector(s, cfg.seed);
    DetectorModel& model = res.model;
    const int g = model.grid();

    std::vector<std::array<AdamWState, 2>> states(model.layers.size());
    Rng rng(seed_mix(cfg.seed, 0x7124));
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * epoch / cfg.epochs));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);

        double epoch_loss = 0.0;
        for (int idx : order) {
            const Scene& sc = train[static_cast<size_t>(idx)];
            Tensor image = sc.image;
            cutout_augment(image, sc.gt, rng, cfg.cutout_prob);

            Tape tape;
            std::vector<std::array<int, 2>> params;
            const int img = tape.constant(std::move(image));
            const int raw = forward_on_tape(tape, model, img, &params);
            const SceneTargets t = build_targets(sc, s, g, cfg.pos_weight);

            int loss = tape.weighted_bce_logits(tape.slice_channel(raw, 0), t.obj, t.weight);
            if (!sc.gt.empty())
                loss = tape.add(loss,
                                tape.scale(tape.box_l1(raw, t.box, t.posmask),
                                           cfg.box_loss_weight));
            const auto grads = tape.backward(loss);
            for (size_t li = 0; li < model.layers.size(); ++li) {
                adamw_step(model.layers[li].w, grads.at(params[li][0]), states[li][0], lr, 0.9,
                           0.999, 1e-8, cfg.weight_decay);
                adamw_step(model.layers[li].b, grads.at(params[li][1]), states[li][1], lr, 0.9,
                           0.999, 1e-8, 0.0);
            }
            epoch_loss += tape.value(loss)[0];
        }
        res.epoch_losses.push_back(epoch_loss / static_cast<double>(train.size()));
    }

    if (!heldout.empty()) {
        std::vector<std::vector<Detection>> dets(heldout.size());
        std::vector<std::vector<Box>> gt(heldout.size());
        const int n = static_cast<int>(heldout.size());
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < n; ++i) {
            const Scene& sc = heldout[static_cast<size_t>(i)];
            dets[static_cast<size_t>(i)] = decode(model, forward(model, sc.image), 0.25, 0.5);
            gt[static_cast<size_t>(i)] = sc.gt;
        }
        const auto ap = average_precision(dets, gt, 0.5);
        res.heldout_map50 = ap.value_or(0.0);
        if (res.heldout_map50 < 0.70) {
            std::string curve;
            for (double v : res.epoch_losses) curve += cat(v, " ");
            fail(ErrKind::training, "detector training failed: held-out mAP@.5 = ",
                 res.heldout_map50, " < 0.70; per-epoch loss: ", curve);
        }
    }
    return res;
}

void save_detector(const std::filesystem::path& path, const DetectorModel& model) {
    binio::Writer w(path);
    w.magic("EDET");
    w.u16(1);
    w.u32(static_cast<uint32_t>(model.input_size));
    w.u32(static_cast<uint32_t>(model.layers.size()));
    for (const ConvLayer& l : model.layers) {
        w.u32(static_cast<uint32_t>(l.c_out));
        w.u32(static_cast<uint32_t>(l.c_in));
        w.u32(static_cast<uint32_t>(l.kh));
        w.u32(static_cast<uint32_t>(l.kw));
        w.u32(static_cast<uint32_t>(l.stride));
        w.u32(static_cast<uint32_t>(l.pad));
        w.f64_block(l.w.data.data(), l.w.data.size());
        w.f64_block(l.b.data.data(), l.b.data.size());
    }
    w.close();
}

DetectorModel load_detector(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.magic("EDET");
    const uint16_t ver = r.u16();
    if (ver != 1) fail(ErrKind::parse, path.string(), ": unsupported EDET version ", ver);
    DetectorModel m;
    m.input_size = static_cast<int>(r.u32());
    const uint32_t n_layers = r.u32();
    if (m.input_size < 32 || m.input_size % 16 != 0 || n_layers == 0 || n_layers > 64)
        fail(ErrKind::parse, path.string(), ": implausible header");
    for (uint32_t i = 0; i < n_layers; ++i) {
        ConvLayer l;
        l.c_out = static_cast<int>(r.u32());
        l.c_in = static_cast<int>(r.u32());
        l.kh = static_cast<int>(r.u32());
        l.kw = static_cast<int>(r.u32());
        l.stride = static_cast<int>(r.u32());
        l.pad = static_cast<int>(r.u32());
        if (l.c_out <= 0 || l.c_in <= 0 || l.kh <= 0 || l.kw <= 0 || l.stride <= 0 || l.pad < 0 ||
            l.c_out > 4096 || l.c_in > 4096 || l.kh > 32 || l.kw > 32)
            fail(ErrKind::parse, path.string(), ": implausible layer shape at byte offset ",
                 r.offset());
        l.w = Tensor({l.c_out, l.c_in, l.kh, l.kw});
        l.b = Tensor({l.c_out});
        r.f64_block(l.w.data.data(), l.w.data.size());
        r.f64_block(l.b.data.data(), l.b.data.size());
        m.layers.push_back(std::move(l));
    }
    return m;
}

} // namespace patchlab
