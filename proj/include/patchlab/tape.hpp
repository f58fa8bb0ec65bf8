// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <vector>

#include "patchlab/tensor.hpp"

namespace patchlab {

// Reverse-mode tape. Node ids are already in topological order (an op can
// only consume existing ids), so backward is a single reverse sweep with a
// fixed accumulation order. Tapes are single-threaded; independent tapes may
// run concurrently.
class Tape {
public:
    enum class Op {
        leaf,
        conv2d,
        bias_add,
        sigmoid,
        leaky_relu,
        add,
        sub,
        mul,
        scale,
        sum,
        slice_channel,
        grid_sample,
        color_jitter,
        clamp01,
        tv,
        masked_mean,
        masked_max,
        weighted_bce_logits,
        box_l1,
    };

    struct Node {
        Op op = Op::leaf;
        int a = -1, b = -1;
        Tensor value;
        bool requires_grad = false;
        int stride = 0, pad = 0;
        int channel = 0;
        double alpha = 0.0;
        std::array<double, 9> mat{}; // grid transform / jitter gains in [0..2]
        Tensor aux;                  // masks / targets saved for backward
        Tensor aux2;
    };

    int leaf(Tensor v, bool requires_grad = false);
    int constant(Tensor v) { return leaf(std::move(v), false); }

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    int size() const { return static_cast<int>(nodes_.size()); }

    int conv2d(int input, int kernels, int stride, int pad);
    int bias_add(int x, int bias); // x: [C,H,W], bias: [C]
    int sigmoid(int x);
    int leaky_relu(int x, double alpha);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int x, double s);
    int sum(int x); // -> scalar
    int slice_channel(int x, int c);
    int clamp01(int x);

    // theta: 2x3 affine mapping output normalized coords to source normalized
    // coords ([-1,1]^2, align-corners). mask_out, when non-null, receives the
    // per-pixel in-bounds coverage in [0,1]; it is constant w.r.t. src.
    int affine_sample(int src, const std::array<double, 6>& theta, int oh, int ow,
                      Tensor* mask_out = nullptr);
    // g: 3x3 homography mapping output pixel (x,y,1) to source normalized
    // coords. The perspective variant of affine_sample.
    int grid_sample(int src, const std::array<double, 9>& g, int oh, int ow,
                    Tensor* mask_out = nullptr);

    // brightness gain (shared), contrast gain about the global mean,
    // saturation gain about per-pixel luma. Linear in x.
    int color_jitter(int x, double gain_b, double gain_c, double gain_s);

    // mean absolute neighbor difference per channel, averaged over channels
    int tv(int x);

    // sum(x*mask)/sum(mask); mask must have positive sum
    int masked_mean(int x, Tensor mask);
    // max of x over cells where mask > 0
    int masked_max(int x, Tensor mask);

    // sum_i w_i * bce(x_i, t_i) / sum_i w_i with logits x, stable form
    int weighted_bce_logits(int x, Tensor target, Tensor weight);

    // raw: [C>=5,G,G] with box channels 1..4 as (tx,ty,tw,th); L1 between
    // (sigmoid(tx), sigmoid(ty), tw, th) and target [4,G,G] on cells where
    // posmask [1,G,G] is > 0, averaged over 4*n_pos terms
    int box_l1(int raw, Tensor target, Tensor posmask);

    // root must be scalar. Returns gradients for every requires_grad leaf
    // (zero tensors for leaves the root does not depend on).
    std::map<int, Tensor> backward(int root) const;

private:
    int push(Node n);
    const Node& at(int id) const;
    void check_id(int id) const;

    std::vector<Node> nodes_;
};

} // namespace patchlab
