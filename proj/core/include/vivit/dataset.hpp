// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "vivit/tensor.hpp"

namespace vivit {

// Motion-direction toy dataset: a bright square drifts left/right/up/down
// across an otherwise empty clip. Start positions are sampled uniformly over
// the window that keeps the whole trajectory in-frame, so a clip's unordered
// frame set carries no direction information along its axis -- reversing a
// rightward clip yields a valid leftward sample. Only frame ordering decides
// the class.
struct DatasetSpec {
    std::int64_t num_train = 2000;
    std::int64_t num_test = 400;
    std::int64_t frames = 8;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t channels = 1;
    std::int64_t square = 6;  // side length, pixels
    std::int64_t speed = 2;   // pixels per frame
    double noise_sigma = 0.0;
    std::uint64_t seed = 7;

    void validate() const;
};

enum class Direction : std::int64_t { Left = 0, Right = 1, Up = 2, Down = 3 };

struct LabeledClip {
    Tensor frames;  // [T,H,W,C] f32 in [0,1]
    std::int64_t label = 0;
};

struct MotionDataset {
    DatasetSpec spec;
    std::vector<LabeledClip> train;
    std::vector<LabeledClip> test;
};

// Noise-free renderer: square top-left corner starts at (x0, y0) and moves
// `speed` pixels per frame in `dir`. Tests use this directly as the
// time-reversal oracle.
Tensor render_trajectory(const DatasetSpec& spec, Direction dir, std::int64_t x0, std::int64_t y0,
                         std::int64_t total_frames = -1);

// Pure function of (spec.seed, index): label = index % 4, geometry and noise
// from the per-sample substream.
LabeledClip make_sample(const DatasetSpec& spec, std::uint64_t index);

// Longer looped variant of the same sample for multi-view evaluation: the
// trajectory restarts every spec.frames frames, preserving the label.
LabeledClip make_long_sample(const DatasetSpec& spec, std::uint64_t index,
                             std::int64_t total_frames);

MotionDataset generate_dataset(const DatasetSpec& spec);

}  // namespace vivit
