// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>

#include "vivit/ops.hpp"
#include "vivit/tensor.hpp"
#include "vivit/tokenizer.hpp"

namespace vivit {

struct MSAWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    std::int64_t num_heads = 1;
};

struct LayerNormWeights {
    Tensor gamma, beta;
};

struct MlpWeights {
    Tensor w1, b1, w2, b2;
};

// Pre-norm transformer layer. Layers of the factorised self-attention variant
// carry a second MSA block (and its own pre-norm) for the temporal stage.
struct TransformerLayerWeights {
    MSAWeights msa;
    LayerNormWeights ln1, ln2;
    MlpWeights mlp;
    std::optional<MSAWeights> temporal_msa;
    std::optional<LayerNormWeights> temporal_ln;
};

MSAWeights make_msa_weights(std::int64_t embed_dim, std::int64_t num_heads, RngState& rng,
                            Dtype dt = Dtype::F32);
LayerNormWeights make_layernorm_weights(std::int64_t embed_dim, Dtype dt = Dtype::F32);
MlpWeights make_mlp_weights(std::int64_t embed_dim, std::int64_t mlp_dim, RngState& rng,
                            Dtype dt = Dtype::F32);
TransformerLayerWeights make_layer_weights(std::int64_t embed_dim, std::int64_t num_heads,
                                           std::int64_t mlp_dim, bool with_temporal_msa,
                                           RngState& rng, Dtype dt = Dtype::F32);

// Test instrumentation: receives every post-softmax attention weight matrix
// computed on this thread. Pass nullptr to clear.
using AttentionProbe = std::function<void(const Tensor& weights)>;
void set_attention_probe(AttentionProbe probe);

// softmax(Q K^T / sqrt(d_k)) V over the last two axes; leading dims batch.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Multi-headed self-attention: per-head attention on projected slices, heads
// concatenated and re-projected. x is [..., S, d].
Tensor msa(const Tensor& x, const MSAWeights& w);

Tensor mlp(const Tensor& x, const MlpWeights& w);

// y = MSA(LN(z)) + z; out = MLP(LN(y)) + y.
Tensor transformer_layer(const Tensor& z, const TransformerLayerWeights& w);

// Factorised self-attention layer on [..., nt, ns, d]: spatial MSA batched
// over the temporal index, temporal MSA batched over the spatial index, MLP.
// Requires the layer's temporal blocks; the token grid must carry no cls.
Tensor factorised_sa_layer(const Tensor& z, const TransformerLayerWeights& w);

// Factorised dot-product attention layer on [..., N, d] with N = nt*nh*nw:
// heads [0, H/2) restrict keys/values to the same temporal index, heads
// [H/2, H) to the same spatial index; concatenated in head order, projected
// by the usual d x d output matrix. Same parameter shapes as a plain layer.
Tensor factorised_dot_layer(const Tensor& z, GridDims grid, const TransformerLayerWeights& w);

}  // namespace vivit
