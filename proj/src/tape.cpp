// SPDX-License-Identifier: Apache-2.0
#include "patchlab/tape.hpp"

#include <cmath>

#include "patchlab/kernels.hpp"

namespace patchlab {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

std::array<double, 3> luma_weights(int channels) {
    if (channels == 3) return {0.299, 0.587, 0.114};
    return {1.0, 0.0, 0.0};
}

// composes theta (2x3, normalized->normalized) with the output pixel ->
// normalized map into a single pixel-space 3x3
std::array<double, 9> affine_to_grid(const std::array<double, 6>& theta, int oh, int ow) {
    const double sx = ow > 1 ? 2.0 / (ow - 1) : 0.0;
    const double sy = oh > 1 ? 2.0 / (oh - 1) : 0.0;
    const double ox = ow > 1 ? -1.0 : 0.0;
    const double oy = oh > 1 ? -1.0 : 0.0;
    // N = [sx 0 ox; 0 sy oy; 0 0 1], G = Theta3 * N
    return {theta[0] * sx, theta[1] * sy, theta[0] * ox + theta[1] * oy + theta[2],
            theta[3] * sx, theta[4] * sy, theta[3] * ox + theta[4] * oy + theta[5],
            0.0,           0.0,           1.0};
}

int tv_terms(int h, int w) { return h * (w - 1) + (h - 1) * w; }

} // namespace

int Tape::push(Node n) {
    ensure_finite(n.value, "tape op");
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_id(int id) const {
    require(id >= 0 && id < size(), ErrKind::validation, cat("invalid tape node id ", id));
}

const Tape::Node& Tape::at(int id) const {
    check_id(id);
    return nodes_[static_cast<size_t>(id)];
}

int Tape::leaf(Tensor v, bool requires_grad) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

int Tape::conv2d(int input, int kernels, int stride, int pad) {
    const Node& in = at(input);
    const Node& w = at(kernels);
    const auto os = kernels::conv2d_out_shape(in.value, w.value, stride, pad);
    Node n;
    n.op = Op::conv2d;
    n.a = input;
    n.b = kernels;
    n.stride = stride;
    n.pad = pad;
    n.requires_grad = in.requires_grad || w.requires_grad;
    n.value = Tensor({w.value.shape[0], os[0], os[1]});
    kernels::conv2d_forward(in.value, w.value, nullptr, stride, pad, n.value);
    return push(std::move(n));
}

int Tape::bias_add(int x, int bias) {
    const Node& xa = at(x);
    const Node& ba = at(bias);
    require(xa.value.rank() == 3 && ba.value.rank() == 1, ErrKind::validation,
            "bias_add expects [C,H,W] and [C]");
    require(xa.value.shape[0] == ba.value.shape[0], ErrKind::validation,
            cat("bias_add: channel mismatch ", xa.value.shape_str(), " vs ",
                ba.value.shape_str()));
    Node n;
    n.op = Op::bias_add;
    n.a = x;
    n.b = bias;
    n.requires_grad = xa.requires_grad || ba.requires_grad;
    n.value = xa.value;
    const int c = xa.value.shape[0];
    const int64_t plane = static_cast<int64_t>(xa.value.shape[1]) * xa.value.shape[2];
    for (int ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < plane; ++p) n.value.data[ci * plane + p] += ba.value[ci];
    return push(std::move(n));
}

int Tape::sigmoid(int x) {
    const Node& xa = at(x);
    Node n;
    n.op = Op::sigmoid;
    n.a = x;
    n.requires_grad = xa.requires_grad;
    n.value = xa.value;
    for (double& v : n.value.data) v = stable_sigmoid(v);
    return push(std::move(n));
}

int Tape::leaky_relu(int x, double alpha) {
    const Node& xa = at(x);
    Node n;
    n.op = Op::leaky_relu;
    n.a = x;
    n.alpha = alpha;
    n.requires_grad = xa.requires_grad;
    n.value = xa.value;
    for (double& v : n.value.data) v = v >= 0.0 ? v : alpha * v;
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    const Node& aa = at(a);
    const Node& bb = at(b);
    require(aa.value.same_shape(bb.value), ErrKind::validation,
            cat("add: shape mismatch ", aa.value.shape_str(), " vs ", bb.value.shape_str()));
    Node n;
    n.op = Op::add;
    n.a = a;
    n.b = b;
    n.requires_grad = aa.requires_grad || bb.requires_grad;
    n.value = aa.value;
    for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] += bb.value[i];
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    const Node& aa = at(a);
    const Node& bb = at(b);
    require(aa.value.same_shape(bb.value), ErrKind::validation,
            cat("sub: shape mismatch ", aa.value.shape_str(), " vs ", bb.value.shape_str()));
    Node n;
    n.op = Op::sub;
    n.a = a;
    n.b = b;
    n.requires_grad = aa.requires_grad || bb.requires_grad;
    n.value = aa.value;
    for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] -= bb.value[i];
    return push(std::move(n));
}

int Tape::mul(int a, int b) {
    const Node& aa = at(a);
    const Node& bb = at(b);
    require(aa.value.same_shape(bb.value), ErrKind::validation,
            cat("mul: shape mismatch ", aa.value.shape_str(), " vs ", bb.value.shape_str()));
    Node n;
    n.op = Op::mul;
    n.a = a;
    n.b = b;
    n.requires_grad = aa.requires_grad || bb.requires_grad;
    n.value = aa.value;
    for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] *= bb.value[i];
    return push(std::move(n));
}

int Tape::scale(int x, double s) {
    const Node& xa = at(x);
    Node n;
    n.op = Op::scale;
    n.a = x;
    n.alpha = s;
    n.requires_grad = xa.requires_grad;
    n.value = xa.value;
    for (double& v : n.value.data) v *= s;
    return push(std::move(n));
}

int Tape::sum(int x) {
    const Node& xa = at(x);
    double acc = 0.0;
    for (double v : xa.value.data) acc += v;
    Node n;
    n.op = Op::sum;
    n.a = x;
    n.requires_grad = xa.requires_grad;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

int Tape::slice_channel(int x, int c) {
    const Node& xa = at(x);
    require(xa.value.rank() == 3, ErrKind::validation, "slice_channel expects rank 3");
    require(c >= 0 && c < xa.value.shape[0], ErrKind::validation,
            cat("slice_channel: channel ", c, " out of range for ", xa.value.shape_str()));
    Node n;
    n.op = Op::slice_channel;
    n.a = x;
    n.channel = c;
    n.requires_grad = xa.requires_grad;
    n.value = Tensor({1, xa.value.shape[1], xa.value.shape[2]});
    const int64_t plane = n.value.numel();
    for (int64_t i = 0; i < plane; ++i) n.value[i] = xa.value.data[c * plane + i];
    return push(std::move(n));
}

int Tape::clamp01(int x) {
    const Node& xa = at(x);
    Node n;
    n.op = Op::clamp01;
    n.a = x;
    n.requires_grad = xa.requires_grad;
    n.value = xa.value;
    for (double& v : n.value.data) v = std::min(1.0, std::max(0.0, v));
    return push(std::move(n));
}

int Tape::affine_sample(int src, const std::array<double, 6>& theta, int oh, int ow,
                        Tensor* mask_out) {
    for (double v : theta)
        require(std::isfinite(v), ErrKind::validation, "affine_sample: theta must be finite");
    return grid_sample(src, affine_to_grid(theta, oh, ow), oh, ow, mask_out);
}

int Tape::grid_sample(int src, const std::array<double, 9>& g, int oh, int ow, Tensor* mask_out) {
    const Node& sa = at(src);
    require(sa.value.rank() == 3, ErrKind::validation, "grid_sample expects rank 3 source");
    for (double v : g)
        require(std::isfinite(v), ErrKind::validation, "grid_sample: transform must be finite");
    Node n;
    n.op = Op::grid_sample;
    n.a = src;
    n.mat = g;
    n.requires_grad = sa.requires_grad;
    n.value = Tensor({sa.value.shape[0], oh, ow});
    Tensor mask({1, oh, ow});
    kernels::grid_sample_forward(sa.value, g, oh, ow, n.value, &mask);
    if (mask_out) *mask_out = std::move(mask);
    return push(std::move(n));
}

int Tape::color_jitter(int x, double gain_b, double gain_c, double gain_s) {
    const Node& xa = at(x);
    require(xa.value.rank() == 3, ErrKind::validation, "color_jitter expects rank 3");
    const int c = xa.value.shape[0];
    require(c == 1 || c == 3, ErrKind::validation, "color_jitter expects 1 or 3 channels");
    Node n;
    n.op = Op::color_jitter;
    n.a = x;
    n.mat[0] = gain_b;
    n.mat[1] = gain_c;
    n.mat[2] = gain_s;
    n.requires_grad = xa.requires_grad;

    const int64_t plane = static_cast<int64_t>(xa.value.shape[1]) * xa.value.shape[2];
    const int64_t total = xa.value.numel();
    const auto lw = luma_weights(c);

    Tensor b = xa.value;
    for (double& v : b.data) v *= gain_b;
    double mean = 0.0;
    for (double v : b.data) mean += v;
    mean /= static_cast<double>(total);
    Tensor cc = b;
    for (double& v : cc.data) v = gain_c * v + (1.0 - gain_c) * mean;
    n.value = cc;
    if (c == 3) {
        for (int64_t p = 0; p < plane; ++p) {
            const double luma =
                lw[0] * cc.data[p] + lw[1] * cc.data[plane + p] + lw[2] * cc.data[2 * plane + p];
            for (int ci = 0; ci < 3; ++ci) {
                const double v = cc.data[ci * plane + p];
                n.value.data[ci * plane + p] = gain_s * v + (1.0 - gain_s) * luma;
            }
        }
    }
    return push(std::move(n));
}

int Tape::tv(int x) {
    const Node& xa = at(x);
    require(xa.value.rank() == 3, ErrKind::validation, "tv expects rank 3");
    const int c = xa.value.shape[0], h = xa.value.shape[1], w = xa.value.shape[2];
    const int terms = tv_terms(h, w);
    double acc = 0.0;
    if (terms > 0) {
        for (int ci = 0; ci < c; ++ci) {
            double s = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x2 = 0; x2 + 1 < w; ++x2)
                    s += std::abs(xa.value.at3(ci, y, x2 + 1) - xa.value.at3(ci, y, x2));
            for (int y = 0; y + 1 < h; ++y)
                for (int x2 = 0; x2 < w; ++x2)
                    s += std::abs(xa.value.at3(ci, y + 1, x2) - xa.value.at3(ci, y, x2));
            acc += s / terms;
        }
        acc /= c;
    }
    Node n;
    n.op = Op::tv;
    n.a = x;
    n.requires_grad = xa.requires_grad;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

int Tape::masked_mean(int x, Tensor mask) {
    const Node& xa = at(x);
    require(xa.value.same_shape(mask), ErrKind::validation,
            cat("masked_mean: shape mismatch ", xa.value.shape_str(), " vs ", mask.shape_str()));
    double msum = 0.0;
    for (double v : mask.data) msum += v;
    require(msum > 0.0, ErrKind::validation, "masked_mean: mask sums to zero");
    double acc = 0.0;
    for (int64_t i = 0; i < mask.numel(); ++i) acc += xa.value[i] * mask[i];
    Node n;
    n.op = Op::masked_mean;
    n.a = x;
    n.alpha = msum;
    n.aux = std::move(mask);
    n.requires_grad = xa.requires_grad;
    n.value = Tensor::scalar(acc / msum);
    return push(std::move(n));
}

int Tape::masked_max(int x, Tensor mask) {
    const Node& xa = at(x);
    require(xa.value.same_shape(mask), ErrKind::validation, "masked_max: shape mismatch");
    int64_t arg = -1;
    double best = 0.0;
    for (int64_t i = 0; i < mask.numel(); ++i) {
        if (mask[i] > 0.0 && (arg < 0 || xa.value[i] > best)) {
            arg = i;
            best = xa.value[i];
        }
    }
    require(arg >= 0, ErrKind::validation, "masked_max: empty mask");
    Node n;
    n.op = Op::masked_max;
    n.a = x;
    n.channel = static_cast<int>(arg);
    n.requires_grad = xa.requires_grad;
    n.value = Tensor::scalar(best);
    return push(std::move(n));
}

int Tape::weighted_bce_logits(int x, Tensor target, Tensor weight) {
    const Node& xa = at(x);
    require(xa.value.same_shape(target) && xa.value.same_shape(weight), ErrKind::validation,
            "weighted_bce_logits: shape mismatch");
    double wsum = 0.0;
    for (double v : weight.data) wsum += v;
    require(wsum > 0.0, ErrKind::validation, "weighted_bce_logits: weights sum to zero");
    double acc = 0.0;
    for (int64_t i = 0; i < xa.value.numel(); ++i) {
        const double z = xa.value[i];
        const double bce = std::max(z, 0.0) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
        acc += weight[i] * bce;
    }
    Node n;
    n.op = Op::weighted_bce_logits;
    n.a = x;
    n.alpha = wsum;
    n.aux = std::move(target);
    n.aux2 = std::move(weight);
    n.requires_grad = xa.requires_grad;
    n.value = Tensor::scalar(acc / wsum);
    return push(std::move(n));
}

int Tape::box_l1(int raw, Tensor target, Tensor posmask) {
    const Node& ra = at(raw);
    require(ra.value.rank() == 3 && ra.value.shape[0] >= 5, ErrKind::validation,
            "box_l1 expects raw [C>=5,G,G]");
    const int g = ra.value.shape[1];
    require(target.rank() == 3 && target.shape[0] == 4 && target.shape[1] == g &&
                target.shape[2] == ra.value.shape[2],
            ErrKind::validation, "box_l1: bad target shape");
    require(posmask.rank() == 3 && posmask.shape[0] == 1 && posmask.shape[1] == g,
            ErrKind::validation, "box_l1: bad posmask shape");
    int n_pos = 0;
    for (double v : posmask.data)
        if (v > 0.0) ++n_pos;
    double acc = 0.0;
    const int64_t plane = static_cast<int64_t>(g) * ra.value.shape[2];
    if (n_pos > 0) {
        for (int64_t p = 0; p < plane; ++p) {
            if (posmask[p] <= 0.0) continue;
            const double px = stable_sigmoid(ra.value.data[1 * plane + p]);
            const double py = stable_sigmoid(ra.value.data[2 * plane + p]);
            acc += std::abs(px - target.data[0 * plane + p]);
            acc += std::abs(py - target.data[1 * plane + p]);
            acc += std::abs(ra.value.data[3 * plane + p] - target.data[2 * plane + p]);
            acc += std::abs(ra.value.data[4 * plane + p] - target.data[3 * plane + p]);
        }
        acc /= 4.0 * n_pos;
    }
    Node n;
    n.op = Op::box_l1;
    n.a = raw;
    n.alpha = static_cast<double>(n_pos);
    n.aux = std::move(target);
    n.aux2 = std::move(posmask);
    n.requires_grad = ra.requires_grad;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

std::map<int, Tensor> Tape::backward(int root) const {
    const Node& r = at(root);
    require(r.value.numel() == 1, ErrKind::validation,
            cat("backward root must be scalar, got ", r.value.shape_str()));

    std::vector<Tensor> grads(nodes_.size());
    std::vector<char> seen(nodes_.size(), 0);
    grads[static_cast<size_t>(root)] = Tensor::scalar(1.0);
    seen[static_cast<size_t>(root)] = 1;

    auto touch = [&](int id) -> Tensor& {
        auto& g = grads[static_cast<size_t>(id)];
        if (!seen[static_cast<size_t>(id)]) {
            g = Tensor(nodes_[static_cast<size_t>(id)].value.shape);
            seen[static_cast<size_t>(id)] = 1;
        }
        return g;
    };
    auto wants = [&](int id) { return id >= 0 && nodes_[static_cast<size_t>(id)].requires_grad; };

    for (int id = root; id >= 0; --id) {
        if (!seen[static_cast<size_t>(id)] || !nodes_[static_cast<size_t>(id)].requires_grad)
            continue;
        const Node& n = nodes_[static_cast<size_t>(id)];
        const Tensor& g = grads[static_cast<size_t>(id)];
        switch (n.op) {
        case Op::leaf:
            break;
        case Op::conv2d: {
            if (wants(n.a)) {
                Tensor gin(nodes_[static_cast<size_t>(n.a)].value.shape);
                kernels::conv2d_backward_input(g, nodes_[static_cast<size_t>(n.b)].value, n.stride,
                                               n.pad, gin);
                Tensor& acc = touch(n.a);
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gin[i];
            }
            if (wants(n.b)) {
                Tensor gw(nodes_[static_cast<size_t>(n.b)].value.shape);
                kernels::conv2d_backward_weights(g, nodes_[static_cast<size_t>(n.a)].value,
                                                 n.stride, n.pad, gw, nullptr);
                Tensor& acc = touch(n.b);
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gw[i];
            }
            break;
        }
        case Op::bias_add: {
            if (wants(n.a)) {
                Tensor& acc = touch(n.a);
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
            }
            if (wants(n.b)) {
                Tensor& acc = touch(n.b);
                const int c = n.value.shape[0];
                const int64_t plane = static_cast<int64_t>(n.value.shape[1]) * n.value.shape[2];
                for (int ci = 0; ci < c; ++ci) {
                    double s = 0.0;
                    for (int64_t p = 0; p < plane; ++p) s += g.data[ci * plane + p];
                    acc[ci] += s;
                }
            }
            break;
        }
        case Op::sigmoid: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            for (int64_t i = 0; i < acc.numel(); ++i) {
                const double y = n.value[i];
                acc[i] += g[i] * y * (1.0 - y);
            }
            break;
        }
        case Op::leaky_relu: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            const Tensor& x = nodes_[static_cast<size_t>(n.a)].value;
            for (int64_t i = 0; i < acc.numel(); ++i)
                acc[i] += g[i] * (x[i] >= 0.0 ? 1.0 : n.alpha);
            break;
        }
        case Op::add: {
            if (wants(n.a)) {
                Tensor& acc = touch(n.a);
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
            }
            if (wants(n.b)) {
                Tensor& acc = touch(n.b);
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
            }
            break;
        }
        case Op::sub: {
            if (wants(n.a)) {
                Tensor& acc = touch(n.a);
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
            }
            if (wants(n.b)) {
                Tensor& acc = touch(n.b);
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] -= g[i];
            }
            break;
        }
        case Op::mul: {
            if (wants(n.a)) {
                Tensor& acc = touch(n.a);
                const Tensor& bv = nodes_[static_cast<size_t>(n.b)].value;
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] * bv[i];
            }
            if (wants(n.b)) {
                Tensor& acc = touch(n.b);
                const Tensor& av = nodes_[static_cast<size_t>(n.a)].value;
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] * av[i];
            }
            break;
        }
        case Op::scale: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] * n.alpha;
            break;
        }
        case Op::sum: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[0];
            break;
        }
        case Op::slice_channel: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            const int64_t plane = n.value.numel();
            for (int64_t i = 0; i < plane; ++i) acc.data[n.channel * plane + i] += g[i];
            break;
        }
        case Op::clamp01: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            const Tensor& x = nodes_[static_cast<size_t>(n.a)].value;
            for (int64_t i = 0; i < acc.numel(); ++i)
                if (x[i] >= 0.0 && x[i] <= 1.0) acc[i] += g[i];
            break;
        }
        case Op::grid_sample: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            kernels::grid_sample_backward_src(n.mat, g, acc);
            break;
        }
        case Op::color_jitter: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            const int c = n.value.shape[0];
            const int64_t plane = static_cast<int64_t>(n.value.shape[1]) * n.value.shape[2];
            const int64_t total = n.value.numel();
            const double gb = n.mat[0], gc = n.mat[1], gs = n.mat[2];
            const auto lw = luma_weights(c);
            // undo saturation: h = gs*g + (1-gs)*lw_c*colsum
            Tensor h({static_cast<int>(total)});
            if (c == 3) {
                for (int64_t p = 0; p < plane; ++p) {
                    const double colsum =
                        g.data[p] + g.data[plane + p] + g.data[2 * plane + p];
                    for (int ci = 0; ci < 3; ++ci)
                        h[ci * plane + p] =
                            gs * g.data[ci * plane + p] + (1.0 - gs) * lw[ci] * colsum;
                }
            } else {
                for (int64_t i = 0; i < total; ++i) h[i] = g[i];
            }
            // undo contrast: q = gc*h + (1-gc)/total * sum(h)
            double hsum = 0.0;
            for (int64_t i = 0; i < total; ++i) hsum += h[i];
            const double spread = (1.0 - gc) * hsum / static_cast<double>(total);
            for (int64_t i = 0; i < total; ++i) acc[i] += gb * (gc * h[i] + spread);
            break;
        }
        case Op::tv: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            const Tensor& x = nodes_[static_cast<size_t>(n.a)].value;
            const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
            const int terms = tv_terms(h, w);
            if (terms == 0) break;
            const double k = g[0] / (static_cast<double>(c) * terms);
            for (int ci = 0; ci < c; ++ci) {
                for (int y = 0; y < h; ++y)
                    for (int x2 = 0; x2 + 1 < w; ++x2) {
                        const double s = sign0(x.at3(ci, y, x2 + 1) - x.at3(ci, y, x2));
                        acc.at3(ci, y, x2 + 1) += k * s;
                        acc.at3(ci, y, x2) -= k * s;
                    }
                for (int y = 0; y + 1 < h; ++y)
                    for (int x2 = 0; x2 < w; ++x2) {
                        const double s = sign0(x.at3(ci, y + 1, x2) - x.at3(ci, y, x2));
                        acc.at3(ci, y + 1, x2) += k * s;
                        acc.at3(ci, y, x2) -= k * s;
                    }
            }
            break;
        }
        case Op::masked_mean: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[0] * n.aux[i] / n.alpha;
            break;
        }
        case Op::masked_max: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            acc[n.channel] += g[0];
            break;
        }
        case Op::weighted_bce_logits: {
            if (!wants(n.a)) break;
            Tensor& acc = touch(n.a);
            const Tensor& x = nodes_[static_cast<size_t>(n.a)].value;
            for (int64_t i = 0; i < acc.numel(); ++i)
                acc[i] += g[0] * n.aux2[i] * (stable_sigmoid(x[i]) - n.aux[i]) / n.alpha;
            break;
        }
        case Op::box_l1: {
            if (!wants(n.a)) break;
            if (n.alpha <= 0.0) break;
            Tensor& acc = touch(n.a);
            const Tensor& x = nodes_[static_cast<size_t>(n.a)].value;
            const int64_t plane = static_cast<int64_t>(x.shape[1]) * x.shape[2];
            const double k = g[0] / (4.0 * n.alpha);
            for (int64_t p = 0; p < plane; ++p) {
                if (n.aux2[p] <= 0.0) continue;
                const double sx = stable_sigmoid(x.data[1 * plane + p]);
                const double sy = stable_sigmoid(x.data[2 * plane + p]);
                acc.data[1 * plane + p] +=
                    k * sign0(sx - n.aux.data[0 * plane + p]) * sx * (1.0 - sx);
                acc.data[2 * plane + p] +=
                    k * sign0(sy - n.aux.data[1 * plane + p]) * sy * (1.0 - sy);
                acc.data[3 * plane + p] +=
                    k * sign0(x.data[3 * plane + p] - n.aux.data[2 * plane + p]);
                acc.data[4 * plane + p] +=
                    k * sign0(x.data[4 * plane + p] - n.aux.data[3 * plane + p]);
            }
            break;
        }
        }
    }

    std::map<int, Tensor> out;
    for (int id = 0; id < size(); ++id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (n.op == Op::leaf && n.requires_grad)
            out[id] = seen[static_cast<size_t>(id)] ? std::move(grads[static_cast<size_t>(id)])
                                                    : Tensor(n.value.shape);
    }
    return out;
}

} // namespace patchlab
