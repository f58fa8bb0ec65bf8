// SPDX-License-Identifier: Apache-2.0
#include "patchlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "patchlab/common.hpp"
#include "patchlab/detector.hpp"
#include "patchlab/image_io.hpp"
#include "patchlab/metrics.hpp"
#include "patchlab/rng.hpp"

namespace patchlab {

namespace fs = std::filesystem;

LetterboxResult letterbox(const Tensor& image, int out_size) {
    require(image.rank() == 3, ErrKind::validation, "letterbox expects [C,H,W]");
    require(out_size >= 2, ErrKind::validation, "letterbox: output size too small");
    const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
    const double s = static_cast<double>(out_size) / std::max(h, w);
    const int new_w = std::max(1, static_cast<int>(std::lround(w * s)));
    const int new_h = std::max(1, static_cast<int>(std::lround(h * s)));
    const int ox = (out_size - new_w) / 2;
    const int oy = (out_size - new_h) / 2;

    LetterboxResult res;
    res.image = Tensor({c, out_size, out_size}, 0.5);
    res.map = {s, static_cast<double>(ox), static_cast<double>(oy)};

    const double rx = static_cast<double>(w) / new_w;
    const double ry = static_cast<double>(h) / new_h;
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < new_h; ++y) {
            const double sy = std::min(static_cast<double>(h - 1),
                                       std::max(0.0, (y + 0.5) * ry - 0.5));
            const int y0 = static_cast<int>(sy);
            const int y1 = std::min(h - 1, y0 + 1);
            const double fy = sy - y0;
            for (int x = 0; x < new_w; ++x) {
                const double sx = std::min(static_cast<double>(w - 1),
                                           std::max(0.0, (x + 0.5) * rx - 0.5));
                const int x0 = static_cast<int>(sx);
                const int x1 = std::min(w - 1, x0 + 1);
                const double fx = sx - x0;
                const double v = (1 - fy) * ((1 - fx) * image.at3(ci, y0, x0) +
                                             fx * image.at3(ci, y0, x1)) +
                                 fy * ((1 - fx) * image.at3(ci, y1, x0) +
                                       fx * image.at3(ci, y1, x1));
                res.image.at3(ci, y + oy, x + ox) = v;
            }
        }
    }
    return res;
}

Box remap_box(const Box& b, const LetterboxMap& m) {
    return {b.x1 * m.scale + m.pad_x, b.y1 * m.scale + m.pad_y, b.x2 * m.scale + m.pad_x,
            b.y2 * m.scale + m.pad_y};
}

Box unmap_box(const Box& b, const LetterboxMap& m) {
    return {(b.x1 - m.pad_x) / m.scale, (b.y1 - m.pad_y) / m.scale, (b.x2 - m.pad_x) / m.scale,
            (b.y2 - m.pad_y) / m.scale};
}

namespace {

struct Capsule {
    double x0, y0, x1, y1, r;
    bool contains(double x, double y) const {
        const double dx = x1 - x0, dy = y1 - y0;
        const double len2 = dx * dx + dy * dy;
        double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
        t = std::min(1.0, std::max(0.0, t));
        const double px = x0 + t * dx, py = y0 + t * dy;
        return (x - px) * (x - px) + (y - py) * (y - py) <= r * r;
    }
};

struct RoundedRect {
    double cx, cy, hx, hy, r;
    bool contains(double x, double y) const {
        const double qx = std::abs(x - cx) - (hx - r);
        const double qy = std::abs(y - cy) - (hy - r);
        if (qx <= 0.0 && qy <= 0.0) return true;
        const double ax = std::max(qx, 0.0), ay = std::max(qy, 0.0);
        return ax * ax + ay * ay <= r * r;
    }
};

struct Circle {
    double cx, cy, r;
    bool contains(double x, double y) const {
        return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
    }
};

struct Figure {
    Circle head;
    RoundedRect torso;
    Capsule arm_l, arm_r;
    RoundedRect leg_l, leg_r;
    std::array<double, 3> body_color, head_color;
    Box tight;

    // 0 = none, 1 = head, 2 = body parts
    int hit(double x, double y) const {
        if (head.contains(x, y)) return 1;
        if (torso.contains(x, y) || arm_l.contains(x, y) || arm_r.contains(x, y) ||
            leg_l.contains(x, y) || leg_r.contains(x, y))
            return 2;
        return 0;
    }
};

Figure make_figure(Rng& rng, const Box& frame) {
    const double bw = frame.width(), bh = frame.height();
    const double x0 = frame.x1, y0 = frame.y1;
    Figure f;

    const double head_off = rng.uniform(-0.04, 0.04);
    f.head = {x0 + (0.5 + head_off) * bw, y0 + 0.105 * bh, 0.095 * bh};
    f.torso = {x0 + 0.5 * bw, y0 + 0.42 * bh, 0.22 * bw, 0.22 * bh, 0.06 * bh};

    // arms held out to the sides; they set the box width, keeping ground
    // truth boxes near-square so patch placement fits inside them
    const double arm_drop = rng.uniform(0.08, 0.22);
    const double arm_r = 0.05 * bw;
    const double sh_y = y0 + 0.28 * bh;
    const double reach_x = rng.uniform(0.40, 0.45) * bw;
    f.arm_l = {x0 + 0.32 * bw, sh_y, x0 + (0.5 * bw - reach_x), sh_y + arm_drop * bh, arm_r};
    f.arm_r = {x0 + 0.68 * bw, sh_y, x0 + (0.5 * bw + reach_x), sh_y + arm_drop * bh, arm_r};

    const double gap = rng.uniform(0.12, 0.17) * bw;
    const double leg_hw = 0.065 * bw;
    f.leg_l = {x0 + 0.5 * bw - gap, y0 + 0.80 * bh, leg_hw, 0.19 * bh, 0.02 * bh};
    f.leg_r = {x0 + 0.5 * bw + gap, y0 + 0.80 * bh, leg_hw, 0.19 * bh, 0.02 * bh};

    const int mode = rng.uniform_int(3);
    for (int c = 0; c < 3; ++c) {
        if (mode == 0)
            f.body_color[static_cast<size_t>(c)] = rng.uniform(0.0, 0.18);
        else if (mode == 1)
            f.body_color[static_cast<size_t>(c)] = rng.uniform(0.82, 1.0);
        else
            f.body_color[static_cast<size_t>(c)] = rng.uniform(0.0, 0.30);
    }
    if (mode == 2) f.body_color[static_cast<size_t>(rng.uniform_int(3))] = rng.uniform(0.75, 1.0);
    for (int c = 0; c < 3; ++c)
        f.head_color[static_cast<size_t>(c)] = std::min(
            1.0, std::max(0.0, f.body_color[static_cast<size_t>(c)] + rng.uniform(-0.15, 0.15)));

    // tight bounds over all parts
    double xmin = f.head.cx - f.head.r, xmax = f.head.cx + f.head.r;
    double ymin = f.head.cy - f.head.r, ymax = f.head.cy + f.head.r;
    auto grow = [&](double a, double b, double c2, double d) {
        xmin = std::min(xmin, a);
        xmax = std::max(xmax, b);
        ymin = std::min(ymin, c2);
        ymax = std::max(ymax, d);
    };
    grow(f.torso.cx - f.torso.hx, f.torso.cx + f.torso.hx, f.torso.cy - f.torso.hy,
         f.torso.cy + f.torso.hy);
    for (const Capsule* a : {&f.arm_l, &f.arm_r})
        grow(std::min(a->x0, a->x1) - a->r, std::max(a->x0, a->x1) + a->r,
             std::min(a->y0, a->y1) - a->r, std::max(a->y0, a->y1) + a->r);
    for (const RoundedRect* l : {&f.leg_l, &f.leg_r})
        grow(l->cx - l->hx, l->cx + l->hx, l->cy - l->hy, l->cy + l->hy);
    f.tight = {xmin, ymin, xmax, ymax};
    return f;
}

} // namespace

std::vector<Scene> gen_synthetic(int count, int size, uint64_t seed) {
    require(count >= 1, ErrKind::validation, "gen_synthetic: count must be >= 1");
    require(size >= 48, ErrKind::validation, "gen_synthetic: size must be >= 48");
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<size_t>(count));

    for (int idx = 0; idx < count; ++idx) {
        Rng rng(seed_mix(seed, static_cast<uint64_t>(idx)));
        Scene sc;
        {
            char buf[32];
            std::snprintf(buf, sizeof buf, "scene_%05d", idx);
            sc.id = buf;
        }
        sc.image = Tensor({3, size, size});

        // muted low-frequency background
        for (int c = 0; c < 3; ++c) {
            const double base = rng.uniform(0.3, 0.7);
            struct Wave {
                double amp, fx, fy, ph;
            };
            std::array<Wave, 3> waves;
            for (auto& wv : waves)
                wv = {rng.uniform(0.02, 0.10), rng.uniform(0.3, 2.5), rng.uniform(0.3, 2.5),
                      rng.uniform(0.0, 6.283185307179586)};
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double v = base;
                    for (const auto& wv : waves)
                        v += wv.amp * std::sin(6.283185307179586 *
                                                   (wv.fx * x + wv.fy * y) / size +
                                               wv.ph);
                    sc.image.at3(c, y, x) = std::min(0.95, std::max(0.05, v));
                }
        }

        const int n_fig = 1 + rng.uniform_int(4);
        std::vector<Figure> figs;
        std::vector<Box> frames;
        for (int fi = 0; fi < n_fig; ++fi) {
            for (int attempt = 0; attempt < 40; ++attempt) {
                const double bh = rng.uniform(0.24, 0.40) * size;
                const double bw = bh / rng.uniform(0.95, 1.20);
                const double margin = 3.0;
                const double cx = rng.uniform(margin + bw / 2, size - margin - bw / 2);
                const double cy = rng.uniform(margin + bh / 2, size - margin - bh / 2);
                const Box frame{cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2};
                bool ok = true;
                for (const Box& other : frames)
                    if (iou(frame, other) > 0.05) {
                        ok = false;
                        break;
                    }
                if (!ok) continue;
                frames.push_back(frame);
                figs.push_back(make_figure(rng, frame));
                break;
            }
        }

        // rasterize with 2x2 supersampling
        for (const Figure& f : figs) {
            const int px0 = std::max(0, static_cast<int>(std::floor(f.tight.x1)) - 1);
            const int px1 = std::min(size - 1, static_cast<int>(std::ceil(f.tight.x2)) + 1);
            const int py0 = std::max(0, static_cast<int>(std::floor(f.tight.y1)) - 1);
            const int py1 = std::min(size - 1, static_cast<int>(std::ceil(f.tight.y2)) + 1);
            for (int y = py0; y <= py1; ++y)
                for (int x = px0; x <= px1; ++x) {
                    double head_cov = 0.0, body_cov = 0.0;
                    for (int sy = 0; sy < 2; ++sy)
                        for (int sx = 0; sx < 2; ++sx) {
                            const int part =
                                f.hit(x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy);
                            if (part == 1) head_cov += 0.25;
                            if (part == 2) body_cov += 0.25;
                        }
                    const double cov = head_cov + body_cov;
                    if (cov == 0.0) continue;
                    for (int c = 0; c < 3; ++c) {
                        const double paint =
                            (head_cov * f.head_color[static_cast<size_t>(c)] +
                             body_cov * f.body_color[static_cast<size_t>(c)]) /
                            cov;
                        double& px = sc.image.at3(c, y, x);
                        px = (1.0 - cov) * px + cov * paint;
                    }
                }
            Box gt = f.tight;
            gt.x1 = std::max(0.0, gt.x1);
            gt.y1 = std::max(0.0, gt.y1);
            gt.x2 = std::min(static_cast<double>(size), gt.x2);
            gt.y2 = std::min(static_cast<double>(size), gt.y2);
            sc.gt.push_back(gt);
        }
        scenes.push_back(std::move(sc));
    }
    return scenes;
}

RegenSummary regenerate_gt(const DetectorModel& model, std::vector<Scene>& scenes,
                           double conf_thresh, double min_visibility, double nms_iou) {
    require(conf_thresh >= 0.0 && conf_thresh <= 1.0, ErrKind::validation,
            "regenerate_gt: conf_thresh must lie in [0,1]");
    RegenSummary sum;
    sum.scenes_in = static_cast<int>(scenes.size());

    const int n = static_cast<int>(scenes.size());
    std::vector<std::vector<Box>> regen(scenes.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        const Scene& sc = scenes[static_cast<size_t>(i)];
        const auto dets = decode(model, forward(model, sc.image), conf_thresh, nms_iou);
        std::vector<Box> kept;
        for (const auto& d : dets) {
            double best = 0.0;
            for (const Box& g : sc.gt) best = std::max(best, iou(d.box, g));
            if (best >= min_visibility) kept.push_back(d.box);
        }
        regen[static_cast<size_t>(i)] = std::move(kept);
    }

    std::vector<Scene> out;
    out.reserve(scenes.size());
    for (int i = 0; i < n; ++i) {
        Scene& sc = scenes[static_cast<size_t>(i)];
        sum.boxes_in += static_cast<int>(sc.gt.size());
        if (regen[static_cast<size_t>(i)].empty()) {
            sum.dropped_ids.push_back(sc.id);
            continue;
        }
        sum.boxes_out += static_cast<int>(regen[static_cast<size_t>(i)].size());
        sc.gt = std::move(regen[static_cast<size_t>(i)]);
        out.push_back(std::move(sc));
    }
    sum.scenes_kept = static_cast<int>(out.size());
    scenes = std::move(out);
    return sum;
}

void save_dataset(const fs::path& dir, const std::vector<Scene>& train,
                  const std::vector<Scene>& test) {
    std::set<std::string> ids;
    for (const auto* split : {&train, &test})
        for (const Scene& sc : *split)
            require(ids.insert(sc.id).second, ErrKind::validation,
                    cat("duplicate scene id '", sc.id, "' across splits"));
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "labels");
    std::ofstream manifest(dir / "manifest.txt");
    require(static_cast<bool>(manifest), ErrKind::io, "cannot write dataset manifest");

    auto write_split = [&](const std::vector<Scene>& scenes, const char* split) {
        for (const Scene& sc : scenes) {
            write_png(dir / "images" / (sc.id + ".png"), sc.image);
            std::ofstream lab(dir / "labels" / (sc.id + ".txt"));
            require(static_cast<bool>(lab), ErrKind::io, "cannot write label file");
            const double w = sc.image.shape[2], h = sc.image.shape[1];
            for (const Box& b : sc.gt) {
                char line[128];
                std::snprintf(line, sizeof line, "%.9f %.9f %.9f %.9f\n", b.cx() / w, b.cy() / h,
                              b.width() / w, b.height() / h);
                lab << line;
            }
            manifest << sc.id << ' ' << split << '\n';
        }
    };
    write_split(train, "train");
    write_split(test, "test");
}

std::vector<std::pair<std::string, std::string>> read_manifest(const fs::path& dir) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) fail(ErrKind::io, "missing dataset manifest: ", (dir / "manifest.txt").string());
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t sp = line.find(' ');
        if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size())
            fail(ErrKind::parse, "manifest.txt line ", lineno, ": expected '<id> <split>'");
        entries.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return entries;
}

std::vector<Scene> load_split(const fs::path& dir, const std::string& split, int target_size) {
    std::vector<Scene> scenes;
    for (const auto& [id, sp] : read_manifest(dir)) {
        if (sp != split) continue;
        Scene sc;
        sc.id = id;
        Tensor img = read_png(dir / "images" / (id + ".png"));
        if (img.shape[0] == 1) { // replicate gray to rgb
            Tensor rgb({3, img.shape[1], img.shape[2]});
            for (int c = 0; c < 3; ++c)
                std::copy(img.data.begin(), img.data.end(),
                          rgb.data.begin() + static_cast<int64_t>(c) * img.numel());
            img = std::move(rgb);
        }
        const double w = img.shape[2], h = img.shape[1];

        std::vector<Box> boxes;
        const fs::path labpath = dir / "labels" / (id + ".txt");
        std::ifstream lab(labpath);
        if (!lab) fail(ErrKind::io, "missing label file: ", labpath.string());
        std::string line;
        int lineno = 0;
        while (std::getline(lab, line)) {
            ++lineno;
            if (line.empty()) continue;
            double cx, cy, bw, bh;
            if (std::sscanf(line.c_str(), "%lf %lf %lf %lf", &cx, &cy, &bw, &bh) != 4)
                fail(ErrKind::parse, labpath.string(), " line ", lineno,
                     ": expected 'cx cy w h'");
            if (bw <= 0 || bh <= 0 || cx < 0 || cx > 1 || cy < 0 || cy > 1)
                fail(ErrKind::parse, labpath.string(), " line ", lineno,
                     ": values out of normalized range");
            boxes.push_back({(cx - bw / 2) * w, (cy - bh / 2) * h, (cx + bw / 2) * w,
                             (cy + bh / 2) * h});
        }

        const LetterboxResult lb = letterbox(img, target_size);
        sc.image = std::move(lb.image);
        for (const Box& b : boxes) sc.gt.push_back(remap_box(b, lb.map));
        scenes.push_back(std::move(sc));
    }
    return scenes;
}

} // namespace patchlab
