// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "vivit/tensor.hpp"
#include "vivit/tokenizer.hpp"

namespace vivit {

// Training-time regularisation knobs. Everything here is applied in train
// mode only; evaluation never touches these code paths.
struct RegConfig {
    double p_droplayer = 0.0;       // stochastic depth base rate
    double label_smoothing = 0.0;   // lambda in [0,1]
    double mixup_alpha = 0.0;       // Beta(alpha, alpha); 0 disables mixup
    int randaugment_layers = 0;
    int randaugment_magnitude = 0;  // [0, 30]
    double crop_prob = 0.0;
    double flip_prob = 0.0;
    double scale_jitter_prob = 0.0;
    double scale_min = 0.9;
    double scale_max = 1.33;
    double colour_jitter_prob = 0.0;
    // brightness/contrast/saturation factor range when colour jitter fires
    double colour_min = 0.6;
    double colour_max = 1.4;

    void validate() const;
};

// Layer kept unless a uniform draw lands under l/L * p_drop (l is 1-indexed,
// so the deepest layer drops at the full rate). A dropped layer passes its
// input through unchanged.
bool stochastic_depth_gate(std::int64_t layer_index, std::int64_t total_layers, double p_drop,
                           RngState& rng);

// (1-lambda) * onehot + lambda * uniform.
Tensor label_smooth(const Tensor& onehot, double lambda);

// Beta(alpha, alpha) via two Marsaglia-Tsang gamma draws.
double sample_beta(double alpha, RngState& rng);

struct MixedSample {
    Tensor input;
    Tensor target;
    double lambda = 1.0;
};

MixedSample mixup(const Tensor& x_a, const Tensor& y_a, const Tensor& x_b, const Tensor& y_b,
                  double alpha, RngState& rng);
// Deterministic core used by mixup and by tests that pin lambda.
MixedSample mixup_with_lambda(const Tensor& x_a, const Tensor& y_a, const Tensor& x_b,
                              const Tensor& y_b, double lambda);

// Applies `num_layers` transforms sampled from a fixed registry
// {translate-x, translate-y, rotate, shear-x, brightness, contrast}, each with
// one parameter draw shared by every frame. Magnitude in [0,30] scales the
// parameter ranges; 0 degenerates to the identity.
VideoClip rand_augment(const VideoClip& clip, int num_layers, int magnitude, RngState& rng);

// Random resized crop / horizontal flip / colour jitter, all temporally
// consistent. Output values are clamped back to [0, 1].
VideoClip geometric_augment(const VideoClip& clip, RngState& rng, const RegConfig& cfg);

}  // namespace vivit
