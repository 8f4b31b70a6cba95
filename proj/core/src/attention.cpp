// SPDX-License-Identifier: Apache-2.0
#include "vivit/attention.hpp"

#include <cmath>

namespace vivit {

namespace op = vivit::ops;

namespace {
thread_local AttentionProbe g_probe;
}

void set_attention_probe(AttentionProbe probe) { g_probe = std::move(probe); }

MSAWeights make_msa_weights(std::int64_t embed_dim, std::int64_t num_heads, RngState& rng, Dtype dt) {
    if (num_heads < 1 || embed_dim % num_heads != 0) {
        throw ValueError("embed dim " + std::to_string(embed_dim) + " not divisible by " +
                         std::to_string(num_heads) + " heads");
    }
    MSAWeights w;
    w.num_heads = num_heads;
    w.wq = Tensor::glorot_uniform({embed_dim, embed_dim}, embed_dim, embed_dim, rng, dt);
    w.wk = Tensor::glorot_uniform({embed_dim, embed_dim}, embed_dim, embed_dim, rng, dt);
    w.wv = Tensor::glorot_uniform({embed_dim, embed_dim}, embed_dim, embed_dim, rng, dt);
    w.wo = Tensor::glorot_uniform({embed_dim, embed_dim}, embed_dim, embed_dim, rng, dt);
    w.bq = Tensor::zeros({embed_dim}, dt);
    w.bk = Tensor::zeros({embed_dim}, dt);
    w.bv = Tensor::zeros({embed_dim}, dt);
    w.bo = Tensor::zeros({embed_dim}, dt);
    return w;
}

LayerNormWeights make_layernorm_weights(std::int64_t embed_dim, Dtype dt) {
    return {Tensor::full({embed_dim}, 1.0, dt), Tensor::zeros({embed_dim}, dt)};
}

MlpWeights make_mlp_weights(std::int64_t embed_dim, std::int64_t mlp_dim, RngState& rng, Dtype dt) {
    MlpWeights w;
    w.w1 = Tensor::glorot_uniform({embed_dim, mlp_dim}, embed_dim, mlp_dim, rng, dt);
    w.b1 = Tensor::zeros({mlp_dim}, dt);
    w.w2 = Tensor::glorot_uniform({mlp_dim, embed_dim}, mlp_dim, embed_dim, rng, dt);
    w.b2 = Tensor::zeros({embed_dim}, dt);
    return w;
}

TransformerLayerWeights make_layer_weights(std::int64_t embed_dim, std::int64_t num_heads,
                                           std::int64_t mlp_dim, bool with_temporal_msa,
                                           RngState& rng, Dtype dt) {
    TransformerLayerWeights w;
    w.msa = make_msa_weights(embed_dim, num_heads, rng, dt);
    w.ln1 = make_layernorm_weights(embed_dim, dt);
    w.ln2 = make_layernorm_weights(embed_dim, dt);
    w.mlp = make_mlp_weights(embed_dim, mlp_dim, rng, dt);
    if (with_temporal_msa) {
        w.temporal_msa = make_msa_weights(embed_dim, num_heads, rng, dt);
        w.temporal_ln = make_layernorm_weights(embed_dim, dt);
    }
    return w;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank()) {
        throw ShapeError("attention: Q/K/V ranks must match and be >= 2");
    }
    const std::int64_t dk = q.shape().back();
    if (k.shape().back() != dk) {
        throw ShapeError("attention: key width " + std::to_string(k.shape().back()) +
                         " != query width " + std::to_string(dk));
    }
    if (v.shape()[v.rank() - 2] != k.shape()[k.rank() - 2]) {
        throw ShapeError("attention: V rows must match K rows");
    }
    // scaling the queries up front is cheaper than scaling the score matrix
    Tensor scaled_q = op::scale(q, 1.0 / std::sqrt(double(dk)));
    Tensor weights = op::softmax(op::matmul(scaled_q, op::transpose_last2(k)));
    if (g_probe) g_probe(weights);
    return op::matmul(weights, v);
}

namespace {

// [..., S, d] -> [..., H, S, d/H]
Tensor split_heads(const Tensor& x, std::int64_t heads) {
    const Shape& s = x.shape();
    const std::size_t r = s.size();
    const std::int64_t seq = s[r - 2];
    const std::int64_t dk = s[r - 1] / heads;
    Shape split(s.begin(), s.end() - 1);
    split.push_back(heads);
    split.push_back(dk);  // [..., S, H, dk]
    Tensor y = op::reshape(x, split);
    std::vector<std::size_t> axes(split.size());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    std::swap(axes[axes.size() - 2], axes[axes.size() - 3]);  // -> [..., H, S, dk]
    (void)seq;
    return op::permute(y, axes);
}

// [..., H, S, dk] -> [..., S, H*dk]
Tensor merge_heads(const Tensor& x) {
    const Shape& s = x.shape();
    std::vector<std::size_t> axes(s.size());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    std::swap(axes[axes.size() - 2], axes[axes.size() - 3]);
    Tensor y = op::permute(x, axes);  // [..., S, H, dk]
    const Shape& sy = y.shape();
    Shape merged(sy.begin(), sy.end() - 2);
    merged.push_back(sy[sy.size() - 2] * sy[sy.size() - 1]);
    return op::reshape(y, merged);
}

}  // namespace

Tensor msa(const Tensor& x, const MSAWeights& w) {
    const std::int64_t embed = x.shape().back();
    if (w.wq.dim(0) != embed) {
        throw ShapeError("msa: input width " + std::to_string(embed) + " != weight width " +
                         std::to_string(w.wq.dim(0)));
    }
    if (embed % w.num_heads != 0) {
        throw ValueError("msa: embed dim not divisible by head count");
    }
    Tensor q = split_heads(op::linear(x, w.wq, w.bq), w.num_heads);
    Tensor k = split_heads(op::linear(x, w.wk, w.bk), w.num_heads);
    Tensor v = split_heads(op::linear(x, w.wv, w.bv), w.num_heads);
    Tensor heads = attention(q, k, v);
    return op::linear(merge_heads(heads), w.wo, w.bo);
}

Tensor mlp(const Tensor& x, const MlpWeights& w) {
    return op::linear(op::gelu(op::linear(x, w.w1, w.b1)), w.w2, w.b2);
}

Tensor transformer_layer(const Tensor& z, const TransformerLayerWeights& w) {
    Tensor y = op::add(msa(op::layernorm(z, w.ln1.gamma, w.ln1.beta), w.msa), z);
    return op::add(mlp(op::layernorm(y, w.ln2.gamma, w.ln2.beta), w.mlp), y);
}

namespace {

std::vector<std::size_t> swap_axes(std::size_t rank, std::size_t a, std::size_t b) {
    std::vector<std::size_t> axes(rank);
    for (std::size_t i = 0; i < rank; ++i) axes[i] = i;
    std::swap(axes[a], axes[b]);
    return axes;
}

}  // namespace

Tensor factorised_sa_layer(const Tensor& z, const TransformerLayerWeights& w) {
    if (z.rank() < 3) {
        throw ShapeError("factorised_sa_layer: input must be [..., nt, ns, d], got " +
                         shape_str(z.shape()));
    }
    if (!w.temporal_msa || !w.temporal_ln) {
        throw ValueError("factorised_sa_layer: layer has no temporal MSA block");
    }
    // spatial attention among tokens sharing a temporal index
    Tensor ys = op::add(msa(op::layernorm(z, w.ln1.gamma, w.ln1.beta), w.msa), z);
    // temporal attention among tokens sharing a spatial index
    const auto perm = swap_axes(z.rank(), z.rank() - 3, z.rank() - 2);
    Tensor yst = op::permute(ys, perm);  // [..., ns, nt, d]
    Tensor yt = op::add(msa(op::layernorm(yst, w.temporal_ln->gamma, w.temporal_ln->beta),
                            *w.temporal_msa),
                        yst);
    yt = op::permute(yt, perm);  // back to [..., nt, ns, d]
    return op::add(mlp(op::layernorm(yt, w.ln2.gamma, w.ln2.beta), w.mlp), yt);
}

Tensor factorised_dot_layer(const Tensor& z, GridDims grid, const TransformerLayerWeights& w) {
    const std::size_t r = z.rank();
    if (r < 2) throw ShapeError("factorised_dot_layer: input must be [..., N, d]");
    const std::int64_t tokens = z.shape()[r - 2];
    const std::int64_t embed = z.shape()[r - 1];
    const std::int64_t spatial = grid.nh * grid.nw;
    if (tokens != grid.token_count()) {
        throw ShapeError("factorised_dot_layer: " + std::to_string(tokens) +
                         " tokens do not fill grid nt*nh*nw = " +
                         std::to_string(grid.token_count()) + " (cls tokens are not supported)");
    }
    if (w.msa.num_heads % 2 != 0) {
        throw ValueError("factorised_dot_layer: head count must be even, got " +
                         std::to_string(w.msa.num_heads));
    }
    const std::int64_t heads = w.msa.num_heads;
    const std::int64_t half = heads / 2;
    const std::int64_t dk = embed / heads;

    Tensor a = op::layernorm(z, w.ln1.gamma, w.ln1.beta);
    Tensor q = split_heads(op::linear(a, w.msa.wq, w.msa.bq), heads);  // [..., H, N, dk]
    Tensor k = split_heads(op::linear(a, w.msa.wk, w.msa.bk), heads);
    Tensor v = split_heads(op::linear(a, w.msa.wv, w.msa.bv), heads);

    const Shape& hs = q.shape();  // [..., H, N, dk]
    const std::size_t hr = hs.size();
    std::vector<std::int64_t> starts(hr, 0), sizes(hs.begin(), hs.end());
    sizes[hr - 3] = half;

    const auto take_half = [&](const Tensor& t, std::int64_t first) {
        auto st = starts;
        st[hr - 3] = first;
        return op::slice(t, st, sizes);
    };

    // queries attend within their own frame
    const auto spatial_grouped = [&](const Tensor& t) {
        Shape g(hs.begin(), hs.end() - 2);
        g.back() = half;
        g.push_back(grid.nt);
        g.push_back(spatial);
        g.push_back(dk);
        return op::reshape(t, g);  // [..., H/2, nt, ns, dk]
    };
    Tensor ys = attention(spatial_grouped(take_half(q, 0)), spatial_grouped(take_half(k, 0)),
                          spatial_grouped(take_half(v, 0)));
    Shape half_shape(hs.begin(), hs.end());
    half_shape[hr - 3] = half;
    ys = op::reshape(ys, half_shape);  // [..., H/2, N, dk]

    // queries attend along their own spatio-positional tube
    const auto temporal_grouped = [&](const Tensor& t) {
        Tensor g = spatial_grouped(t);
        return op::permute(g, swap_axes(g.rank(), g.rank() - 3, g.rank() - 2));  // [..., H/2, ns, nt, dk]
    };
    Tensor yt = attention(temporal_grouped(take_half(q, half)), temporal_grouped(take_half(k, half)),
                          temporal_grouped(take_half(v, half)));
    yt = op::permute(yt, swap_axes(yt.rank(), yt.rank() - 3, yt.rank() - 2));
    yt = op::reshape(yt, half_shape);

    Tensor combined = op::concat({ys, yt}, hr - 3);  // head order preserved
    Tensor attended = op::linear(merge_heads(combined), w.msa.wo, w.msa.bo);
    Tensor y = op::add(attended, z);
    return op::add(mlp(op::layernorm(y, w.ln2.gamma, w.ln2.beta), w.mlp), y);
}

}  // namespace vivit
