// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "vivit/ops.hpp"
#include "vivit/tensor.hpp"

namespace vivit {

struct TubeletShape {
    std::int64_t t = 1;
    std::int64_t h = 16;
    std::int64_t w = 16;
};

// Raw clip, frames in [T, H, W, C] with values in [0, 1].
// frame_rate_stride is bookkeeping from the sampling stage only.
struct VideoClip {
    Tensor frames;
    std::int64_t frame_rate_stride = 1;
};

struct GridDims {
    std::int64_t nt = 0;
    std::int64_t nh = 0;
    std::int64_t nw = 0;
    std::int64_t token_count() const { return nt * nh * nw; }
    bool operator==(const GridDims&) const = default;
};

// Embedded tokens, indexed (nt, nh, nw, d). Flattening is temporal-major,
// then height, then width. `cls` rides along once a classification token is
// attached; embedding never sets it.
struct TokenGrid {
    Tensor tokens;
    Tensor cls;
    GridDims grid;
};

// projection: [t,h,w,C,d] for tubelets or [h,w,C,d] for per-frame patches.
// pos: one row per flattened token (+1 leading row when a cls token is used).
struct EmbeddingWeights {
    Tensor projection;
    Tensor pos;
    Tensor cls_token;
};

// Residual pixels beyond the last full patch/tubelet are dropped (floor grid).
GridDims grid_for(const Shape& clip_dims, TubeletShape tubelet);

// Equidistant selection: index i -> floor(i * total / count).
std::vector<std::int64_t> uniform_frame_indices(std::int64_t total, std::int64_t count);

// Samples `num_frames` equidistant frames and embeds each frame's
// non-overlapping patches with the shared per-frame projection.
TokenGrid uniform_frame_embed(const VideoClip& clip, const EmbeddingWeights& weights,
                              std::int64_t num_frames);

// Projects non-overlapping t x h x w tubelets (stride = tubelet extent).
TokenGrid tubelet_embed(const VideoClip& clip, const EmbeddingWeights& weights,
                        TubeletShape tubelet);

// Flattens the grid, optionally prepends the cls token, adds positional rows.
Tensor assemble_sequence(const TokenGrid& grid, const EmbeddingWeights& weights, bool use_cls);

// Batched counterparts operating on [B, T, H, W, C] clips; the single-clip
// entry points above wrap these with B = 1.
Tensor tubelet_embed_batch(const Tensor& clips, const Tensor& projection, TubeletShape tubelet);
Tensor uniform_frame_embed_batch(const Tensor& clips, const Tensor& projection,
                                 std::int64_t num_frames);
Tensor assemble_sequence_batch(const Tensor& grid_tokens, const EmbeddingWeights& weights,
                               bool use_cls);

}  // namespace vivit
