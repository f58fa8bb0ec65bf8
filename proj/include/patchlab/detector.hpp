// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "patchlab/data.hpp"
#include "patchlab/geometry.hpp"
#include "patchlab/tape.hpp"

namespace patchlab {

struct ConvLayer {
    int c_out, c_in, kh, kw, stride, pad;
    Tensor w; // [c_out,c_in,kh,kw]
    Tensor b; // [c_out]
};

// Anchor-free single-class grid detector: four stride-2 convs down to a
// G x G grid (G = input/16) and a 1x1 head predicting
// (objectness logit, tx, ty, tw, th) per cell.
struct DetectorModel {
    int input_size = 160;
    std::vector<ConvLayer> layers; // last layer is the head

    int grid() const { return input_size / 16; }
    double cell() const { return static_cast<double>(input_size) / grid(); }
};

DetectorModel make_detector(int input_size, uint64_t seed);

// raw [5,G,G]; objectness stays a logit here and is squashed at decode time
Tensor forward(const DetectorModel& model, const Tensor& image);

// Same network on a tape. With params set, layer weights/biases become
// gradient leaves and their node ids are reported (training); otherwise they
// enter as constants (patch attack).
int forward_on_tape(Tape& tape, const DetectorModel& model, int image,
                    std::vector<std::array<int, 2>>* params = nullptr);

std::vector<Detection> decode(const DetectorModel& model, const Tensor& raw, double conf_thresh,
                              double nms_iou);

// 1.0 for grid cells whose center falls inside any box, shape [1,G,G]
Tensor gt_cell_mask(const std::vector<Box>& boxes, int input_size, int grid);

struct DetectorTrainConfig {
    int epochs = 40;
    double lr = 2e-3;
    double weight_decay = 1e-4;
    double box_loss_weight = 2.0;
    double pos_weight = 12.0; // BCE weight on positive cells
    double cutout_prob = 0.7; // per-box chance of a pasted occluder per epoch
    uint64_t seed = 0;
};

struct DetectorTrainResult {
    DetectorModel model;
    std::vector<double> epoch_losses;
    double heldout_map50 = -1.0; // -1 when no held-out split was given
};

// Single-threaded seeded training loop (the kernels underneath may still run
// parallel; they are bit-deterministic either way). With a non-empty heldout
// split the final model must reach 0.70 mAP@.5 or a training error carrying
// the loss history is thrown.
DetectorTrainResult train_detector(const std::vector<Scene>& train,
                                   const std::vector<Scene>& heldout,
                                   const DetectorTrainConfig& cfg);

// EDET weights file
void save_detector(const std::filesystem::path& path, const DetectorModel& model);
DetectorModel load_detector(const std::filesystem::path& path);

} // namespace patchlab
