// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vivit/checkpoint.hpp"
#include "vivit/model.hpp"

namespace vivit {

// How to derive a tubelet projection from an image-model patch projection.
enum class EmbedInit { Inflate, Central, Random };

// Replicates the 2D filter along time and divides by t, so the temporal
// slices sum back to the original filter.
Tensor inflate_embedding(const Tensor& image_projection, std::int64_t t);

// Zeroes everywhere except the centre slice floor(t/2), which holds the 2D
// filter unchanged: at initialisation the tubelet sees only its centre frame.
Tensor central_frame_init(const Tensor& image_projection, std::int64_t t);

// [ns, d] -> [nt*ns, d], temporal-major tiling; rows with the same spatial
// index start out identical.
Tensor repeat_positional(const Tensor& image_positional, std::int64_t nt);

// Zeroes every temporal-MSA projection and bias of a variant-3 model so the
// temporal stage starts as a pure residual pass-through.
void init_model3_temporal(ViViTModel& m);

// Builds a video model from an image checkpoint: transformer weights copied,
// embedding transformed per `method`, positional rows repeated temporally,
// video-only parameters (temporal encoder, heads) freshly initialised from
// `rng`. `rng` is taken by value so identical calls give identical models.
ViViTModel load_pretrained(const Checkpoint& image_ckpt, const ModelConfig& cfg, EmbedInit method,
                           RngState rng, Dtype dt = Dtype::F32);

// Full-model snapshot/restore through the checkpoint namespace.
Checkpoint checkpoint_of(ViViTModel& m);
ViViTModel model_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg);

}  // namespace vivit
