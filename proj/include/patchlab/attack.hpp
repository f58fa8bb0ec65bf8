// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>

#include "patchlab/detector.hpp"
#include "patchlab/patch.hpp"
#include "patchlab/rng.hpp"

namespace patchlab {

enum class Scheduler { step, cosine };

struct AttackConfig {
    int epochs = 30;
    Scheduler scheduler = Scheduler::step;
    double resize_lo = 0.75, resize_hi = 1.0; // fraction of the longer bbox side
    double rotation_bound_deg = 30.0;
    double jitter_brightness_lo = 0.9, jitter_brightness_hi = 1.1;
    double jitter_contrast_lo = 0.95, jitter_contrast_hi = 1.05;
    double jitter_saturation_lo = 0.97, jitter_saturation_hi = 1.03;
    double perspective_scale = 0.5; // corner displacement, fraction of half-extent
    double lr0 = 0.01;
    double tv_weight = 0.1;
    double weight_decay = 0.0;
    bool objectness_max = false; // max instead of mean aggregation
    int patch_size = 64;
    int patch_channels = 3;
    uint64_t seed = 0;

    // StepLR internals (gamma^(epoch/step_size)); step_size derives from epochs
    double step_gamma = 0.1;
    int step_size() const { return std::max(1, epochs / 3); }

    void validate() const;
};

struct TransformParams {
    double side_px = 0.0; // warped patch nominal side in pixels
    double rotation_deg = 0.0;
    double cx = 0.0, cy = 0.0;                      // placement center in pixels
    std::array<double, 4> persp_dx{}, persp_dy{};   // inward corner offsets, normalized
    double gain_b = 1.0, gain_c = 1.0, gain_s = 1.0;
};

// Draws one randomized placement for a box. Returns nullopt (skip-box) when
// the warped quad cannot lie inside the box: either the minimum-scale patch
// is already too big, or this draw's scale/rotation leaves no valid center.
std::optional<TransformParams> sample_transform(Rng& rng, const AttackConfig& cfg,
                                                const Box& bbox);

// homography mapping patch normalized coords [-1,1]^2 to image pixels
std::array<double, 9> patch_to_image_matrix(const TransformParams& t);
std::array<double, 9> invert_homography(const std::array<double, 9>& m);

// jitter + clamp + warp + alpha-composite over the current image node;
// differentiable w.r.t. the patch node
int apply_patch(Tape& tape, int image, int patch, const TransformParams& t);

// evaluation-protocol placement: centered, scale * longer side, no other
// transforms; plain tensors, no gradients
Tensor apply_patch_eval(const Tensor& image, const Tensor& patch, const Box& bbox, double scale);

// mean (or max) sigmoid objectness over cells covered by ground truth boxes
int objectness_loss(Tape& tape, int raw, const std::vector<Box>& gt_boxes, int input_size,
                    bool use_max = false);

double tv_loss(const Tensor& patch);

struct AdamWState {
    Tensor m, v;
    int64_t t = 0;
};

// decoupled weight decay, bias-corrected moments
void adamw_step(Tensor& params, const Tensor& grads, AdamWState& state, double lr,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.0);

double lr_schedule(Scheduler kind, int epoch, const AttackConfig& cfg);

struct PatchTrainResult {
    Patch patch;
    std::vector<double> epoch_losses;
};

// One training run: per scene, randomized patch placement into every ground
// truth box, objectness + tv loss, one AdamW step on the patch pixels, clamp
// to [0,1]. Bit-deterministic for a fixed config.
PatchTrainResult train_patch(const DetectorModel& model, const std::vector<Scene>& scenes,
                             const AttackConfig& cfg);

} // namespace patchlab
