// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "vivit/dataset.hpp"
#include "vivit/model.hpp"
#include "vivit/regularizers.hpp"

namespace vivit {

struct TrainConfig {
    double base_lr = 0.1;
    double momentum = 0.9;
    std::int64_t batch_size = 32;
    std::int64_t epochs = 20;
    double warmup_epochs = 2.5;
    std::uint64_t seed = 42;
    // stop after any epoch whose test accuracy reaches this (0 disables)
    double early_stop_accuracy = 0.0;
    RegConfig reg;
    ModelConfig model;
    DatasetSpec dataset;

    void validate() const;
};

// Linear warmup to base_lr, then a half-cosine down to zero.
double cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                 double base_lr);

// Classical (non-Nesterov) momentum: v <- momentum*v + g; p <- p - lr*v.
// Returns the updated parameter; `velocity` is updated in place.
Tensor sgd_momentum_update(const Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                           double momentum);

// Mean soft-target cross-entropy: -1/B sum_b sum_k target log softmax(logits).
Tensor cross_entropy(const Tensor& logits, const Tensor& soft_targets);

struct TrainResult {
    ViViTModel model;
    std::string metrics_log;  // key=value records, one per line
    std::vector<double> epoch_train_loss;
    std::vector<double> epoch_test_accuracy;
};

// Full training run: SGD + momentum under the cosine schedule, RegConfig
// transforms in train mode only, per-epoch test evaluation. Bitwise
// reproducible for a fixed config. Throws NumericError naming the step if
// the loss leaves the finite range.
TrainResult train(const TrainConfig& cfg);

// Eval-mode accuracy of the model on a clip set.
double evaluate_accuracy(const ViViTModel& m, const std::vector<LabeledClip>& clips,
                         std::int64_t batch_size = 64);

struct ViewSpec {
    std::int64_t temporal_views = 1;
    std::int64_t spatial_crops = 1;
};

// x equidistant temporal windows crossed with y spatial crops (1 = centre,
// 3 = left/centre/right); per-view logits combined by a streaming mean so
// identical views average to themselves bitwise.
std::vector<Tensor> multi_view_infer(const ViViTModel& m, const Tensor& long_video, ViewSpec views);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::int64_t params_checked = 0;
};

// Finite-difference check of d(loss)/d(theta) for every parameter tensor of
// an f64 model built from `cfg`, against the tape gradients, on one random
// clip with a cross-entropy loss.
GradCheckReport full_model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double h = 1e-5);

}  // namespace vivit
