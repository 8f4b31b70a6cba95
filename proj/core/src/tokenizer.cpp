// SPDX-License-Identifier: Apache-2.0
#include "vivit/tokenizer.hpp"

namespace vivit {

namespace op = vivit::ops;

GridDims grid_for(const Shape& clip_dims, TubeletShape tubelet) {
    if (clip_dims.size() != 4) {
        throw ShapeError("clip must be [T,H,W,C], got " + shape_str(clip_dims));
    }
    if (tubelet.t < 1 || tubelet.h < 1 || tubelet.w < 1) {
        throw ValueError("tubelet dims must be >= 1");
    }
    if (tubelet.t > clip_dims[0] || tubelet.h > clip_dims[1] || tubelet.w > clip_dims[2]) {
        throw ShapeError("tubelet " + std::to_string(tubelet.t) + "x" + std::to_string(tubelet.h) +
                         "x" + std::to_string(tubelet.w) + " larger than clip " +
                         shape_str(clip_dims));
    }
    GridDims g;
    g.nt = clip_dims[0] / tubelet.t;
    g.nh = clip_dims[1] / tubelet.h;
    g.nw = clip_dims[2] / tubelet.w;
    return g;
}

std::vector<std::int64_t> uniform_frame_indices(std::int64_t total, std::int64_t count) {
    if (count < 1 || count > total) {
        throw ValueError("uniform sampling needs 1 <= count <= frames, got count=" +
                         std::to_string(count) + " frames=" + std::to_string(total));
    }
    std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i * total / count;
    return idx;
}

Tensor tubelet_embed_batch(const Tensor& clips, const Tensor& projection, TubeletShape tub) {
    const Shape& s = clips.shape();
    if (s.size() != 5) throw ShapeError("batched clips must be [B,T,H,W,C], got " + shape_str(s));
    const std::int64_t batch = s[0], channels = s[4];
    const GridDims g = grid_for({s[1], s[2], s[3], s[4]}, tub);
    const std::int64_t patch_len = tub.t * tub.h * tub.w * channels;
    if (projection.rank() != 5 || projection.dim(0) != tub.t || projection.dim(1) != tub.h ||
        projection.dim(2) != tub.w || projection.dim(3) != channels) {
        throw ShapeError("tubelet projection must be [t,h,w,C,d] matching " + std::to_string(tub.t) +
                         "x" + std::to_string(tub.h) + "x" + std::to_string(tub.w) + "xC, got " +
                         shape_str(projection.shape()));
    }
    const std::int64_t embed = projection.dim(4);

    // crop away residual pixels, expose the tubelet grid, flatten each tube
    Tensor x = op::slice(clips, {0, 0, 0, 0, 0},
                         {batch, g.nt * tub.t, g.nh * tub.h, g.nw * tub.w, channels});
    x = op::reshape(x, {batch, g.nt, tub.t, g.nh, tub.h, g.nw, tub.w, channels});
    x = op::permute(x, {0, 1, 3, 5, 2, 4, 6, 7});  // [B, nt, nh, nw, t, h, w, C]
    x = op::reshape(x, {batch * g.token_count(), patch_len});
    Tensor tokens = op::matmul(x, op::reshape(projection, {patch_len, embed}));
    return op::reshape(tokens, {batch, g.nt, g.nh, g.nw, embed});
}

Tensor uniform_frame_embed_batch(const Tensor& clips, const Tensor& projection,
                                 std::int64_t num_frames) {
    const Shape& s = clips.shape();
    if (s.size() != 5) throw ShapeError("batched clips must be [B,T,H,W,C], got " + shape_str(s));
    if (projection.rank() != 4) {
        throw ShapeError("per-frame projection must be [h,w,C,d], got " +
                         shape_str(projection.shape()));
    }
    Tensor sampled = op::index_select(clips, 1, uniform_frame_indices(s[1], num_frames));
    // a frame is a degenerate tubelet of temporal extent 1
    Shape p = projection.shape();
    Tensor proj3d = op::reshape(projection, {1, p[0], p[1], p[2], p[3]});
    return tubelet_embed_batch(sampled, proj3d, TubeletShape{1, p[0], p[1]});
}

namespace {

Tensor to_batch_of_one(const Tensor& frames) {
    Shape s = frames.shape();
    if (s.size() != 4) throw ShapeError("clip must be [T,H,W,C], got " + shape_str(s));
    return op::reshape(frames, {1, s[0], s[1], s[2], s[3]});
}

TokenGrid grid_from_batch(const Tensor& tokens5d) {
    const Shape& s = tokens5d.shape();
    TokenGrid out;
    out.grid = GridDims{s[1], s[2], s[3]};
    out.tokens = op::reshape(tokens5d, {s[1], s[2], s[3], s[4]});
    return out;
}

}  // namespace

TokenGrid tubelet_embed(const VideoClip& clip, const EmbeddingWeights& weights, TubeletShape tub) {
    check_finite(clip.frames, "tubelet_embed input");
    return grid_from_batch(tubelet_embed_batch(to_batch_of_one(clip.frames), weights.projection, tub));
}

TokenGrid uniform_frame_embed(const VideoClip& clip, const EmbeddingWeights& weights,
                              std::int64_t num_frames) {
    check_finite(clip.frames, "uniform_frame_embed input");
    return grid_from_batch(
        uniform_frame_embed_batch(to_batch_of_one(clip.frames), weights.projection, num_frames));
}

Tensor assemble_sequence_batch(const Tensor& grid_tokens, const EmbeddingWeights& weights,
                               bool use_cls) {
    const Shape& s = grid_tokens.shape();
    if (s.size() != 5) {
        throw ShapeError("grid tokens must be [B,nt,nh,nw,d], got " + shape_str(s));
    }
    const std::int64_t batch = s[0];
    const std::int64_t count = s[1] * s[2] * s[3];
    const std::int64_t embed = s[4];
    Tensor seq = op::reshape(grid_tokens, {batch, count, embed});
    std::int64_t rows = count;
    if (use_cls) {
        if (!weights.cls_token.defined()) throw ValueError("assemble_sequence: no cls token in weights");
        Tensor cls = op::expand_leading(op::reshape(weights.cls_token, {1, embed}), batch);
        seq = op::concat({cls, seq}, 1);
        rows += 1;
    }
    if (weights.pos.rank() != 2 || weights.pos.dim(0) != rows || weights.pos.dim(1) != embed) {
        throw ShapeError("positional table " + shape_str(weights.pos.shape()) + " does not match " +
                         std::to_string(rows) + " rows of width " + std::to_string(embed));
    }
    return op::add_broadcast(seq, weights.pos);
}

Tensor assemble_sequence(const TokenGrid& grid, const EmbeddingWeights& weights, bool use_cls) {
    const Shape& s = grid.tokens.shape();
    if (s.size() != 4) throw ShapeError("token grid must be [nt,nh,nw,d], got " + shape_str(s));
    Tensor batched = op::reshape(grid.tokens, {1, s[0], s[1], s[2], s[3]});
    Tensor seq = assemble_sequence_batch(batched, weights, use_cls);
    return op::reshape(seq, {seq.dim(1), seq.dim(2)});
}

}  // namespace vivit
