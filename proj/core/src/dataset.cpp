// SPDX-License-Identifier: Apache-2.0
#include "vivit/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace vivit {

void DatasetSpec::validate() const {
    if (num_train < 1 || num_test < 1) throw ValueError("dataset sizes must be >= 1");
    if (frames < 2) throw ValueError("motion needs at least 2 frames");
    if (channels < 1) throw ValueError("channels must be >= 1");
    if (square < 1) throw ValueError("square side must be >= 1");
    if (speed < 1) {
        throw ValueError("speed must be >= 1 pixel/frame; at 0 every class is identical");
    }
    if (noise_sigma < 0) throw ValueError("noise_sigma must be >= 0");
    const std::int64_t travel = (frames - 1) * speed;
    if (square + travel > width || square + travel > height) {
        throw ValueError("square of side " + std::to_string(square) + " travelling " +
                         std::to_string(travel) + " px cannot stay inside " + std::to_string(width) +
                         "x" + std::to_string(height) + " frames");
    }
}

Tensor render_trajectory(const DatasetSpec& spec, Direction dir, std::int64_t x0, std::int64_t y0,
                         std::int64_t total_frames) {
    const std::int64_t frames = total_frames < 0 ? spec.frames : total_frames;
    Tensor clip = Tensor::zeros({frames, spec.height, spec.width, spec.channels}, Dtype::F32);
    auto data = clip.mutable_data<float>();
    for (std::int64_t k = 0; k < frames; ++k) {
        // looped playback: the trajectory restarts every spec.frames frames
        const std::int64_t phase = k % spec.frames;
        std::int64_t x = x0, y = y0;
        switch (dir) {
            case Direction::Left: x -= phase * spec.speed; break;
            case Direction::Right: x += phase * spec.speed; break;
            case Direction::Up: y -= phase * spec.speed; break;
            case Direction::Down: y += phase * spec.speed; break;
        }
        for (std::int64_t dy = 0; dy < spec.square; ++dy)
            for (std::int64_t dx = 0; dx < spec.square; ++dx)
                for (std::int64_t c = 0; c < spec.channels; ++c) {
                    data[((k * spec.height + (y + dy)) * spec.width + (x + dx)) * spec.channels + c] =
                        1.0f;
                }
    }
    return clip;
}

namespace {

LabeledClip sample_with_length(const DatasetSpec& spec, std::uint64_t index,
                               std::int64_t total_frames) {
    spec.validate();
    RngState rng = RngState{spec.seed, 0}.substream(index);
    const auto dir = static_cast<Direction>(index % 4);
    const std::int64_t travel = (spec.frames - 1) * spec.speed;

    // start uniformly over the window that keeps the whole path in-frame
    const std::int64_t free_x = spec.width - spec.square;
    const std::int64_t free_y = spec.height - spec.square;
    std::int64_t x0 = 0, y0 = 0;
    switch (dir) {
        case Direction::Right:
            x0 = static_cast<std::int64_t>(rng.uniform_index(free_x - travel + 1));
            y0 = static_cast<std::int64_t>(rng.uniform_index(free_y + 1));
            break;
        case Direction::Left:
            x0 = travel + static_cast<std::int64_t>(rng.uniform_index(free_x - travel + 1));
            y0 = static_cast<std::int64_t>(rng.uniform_index(free_y + 1));
            break;
        case Direction::Down:
            x0 = static_cast<std::int64_t>(rng.uniform_index(free_x + 1));
            y0 = static_cast<std::int64_t>(rng.uniform_index(free_y - travel + 1));
            break;
        case Direction::Up:
            x0 = static_cast<std::int64_t>(rng.uniform_index(free_x + 1));
            y0 = travel + static_cast<std::int64_t>(rng.uniform_index(free_y - travel + 1));
            break;
    }
    Tensor clip = render_trajectory(spec, dir, x0, y0, total_frames);
    if (spec.noise_sigma > 0) {
        auto data = clip.mutable_data<float>();
        for (auto& v : data) {
            v = std::clamp(v + static_cast<float>(rng.normal(0.0, spec.noise_sigma)), 0.0f, 1.0f);
        }
    }
    return {clip, static_cast<std::int64_t>(dir)};
}

}  // namespace

LabeledClip make_sample(const DatasetSpec& spec, std::uint64_t index) {
    return sample_with_length(spec, index, -1);
}

LabeledClip make_long_sample(const DatasetSpec& spec, std::uint64_t index,
                             std::int64_t total_frames) {
    if (total_frames < spec.frames) {
        throw ValueError("long sample must cover at least one clip of " +
                         std::to_string(spec.frames) + " frames");
    }
    return sample_with_length(spec, index, total_frames);
}

MotionDataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    MotionDataset ds;
    ds.spec = spec;
    ds.train.reserve(static_cast<std::size_t>(spec.num_train));
    ds.test.reserve(static_cast<std::size_t>(spec.num_test));
    // disjoint substream indices for train and test
    for (std::int64_t i = 0; i < spec.num_train; ++i) {
        ds.train.push_back(make_sample(spec, static_cast<std::uint64_t>(i)));
    }
    for (std::int64_t i = 0; i < spec.num_test; ++i) {
        ds.test.push_back(
            make_sample(spec, static_cast<std::uint64_t>(spec.num_train + i)));
    }
    return ds;
}

}  // namespace vivit
