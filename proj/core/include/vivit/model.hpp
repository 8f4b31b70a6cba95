// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vivit/attention.hpp"
#include "vivit/tokenizer.hpp"

namespace vivit {

enum class Backbone { Base, Large, Huge, Custom };
enum class EmbedMethod { UniformFrame, Tubelet };

// Variant 1: joint spatio-temporal attention over all tokens.
// Variant 2: spatial encoder per temporal index, then a temporal encoder
//            over the per-frame representations (temporal_layers = 0 is the
//            average-pool baseline).
// Variant 3: every layer attends spatially then temporally (two MSA blocks).
// Variant 4: half the heads attend within the frame, half along the tube.
struct ModelConfig {
    int variant = 1;
    Backbone backbone = Backbone::Custom;
    std::int64_t num_layers = 12;      // L (spatial depth for variant 2)
    std::int64_t num_heads = 12;
    std::int64_t embed_dim = 768;
    std::int64_t mlp_dim = 0;          // 0 -> 4 * embed_dim
    std::int64_t temporal_layers = 4;  // variant 2 only
    TubeletShape tubelet{2, 16, 16};
    std::int64_t frames = 32, height = 224, width = 224, channels = 3;
    EmbedMethod embed_method = EmbedMethod::Tubelet;
    bool use_cls = true;  // variants 1 and 2 only
    std::vector<std::int64_t> num_classes{400};

    std::int64_t mlp_width() const { return mlp_dim > 0 ? mlp_dim : 4 * embed_dim; }
    void validate() const;
};

ModelConfig backbone_preset(Backbone b);

struct TokenCounts {
    GridDims grid;
    std::int64_t total = 0;  // nt*nh*nw, before any cls token
};

TokenCounts count_tokens(const ModelConfig& cfg);

struct ClassifierHead {
    Tensor w, b;
};

struct ViViTModel {
    ModelConfig config;
    // Variants 1/3/4 carry a full spatio-temporal positional table; variant 2
    // uses a per-frame table shared across temporal indices (its spatial
    // encoder is an unchanged image encoder).
    EmbeddingWeights embedding;
    std::vector<TransformerLayerWeights> layers;
    LayerNormWeights final_ln;
    // variant 2 temporal encoder
    std::vector<TransformerLayerWeights> temporal_encoder;
    Tensor temporal_cls;
    Tensor temporal_pos;
    std::optional<LayerNormWeights> temporal_final_ln;
    std::vector<ClassifierHead> heads;
};

ViViTModel build_model(const ModelConfig& cfg, RngState& rng, Dtype dt = Dtype::F32);

// Checkpoint-addressable namespace: dotted names in a fixed order.
std::vector<std::pair<std::string, Tensor*>> named_parameters(ViViTModel& m);

struct ForwardOptions {
    bool train_mode = false;
    double p_droplayer = 0.0;  // stochastic depth, train mode only
    RngState* rng = nullptr;
};

// Logits per classifier head. Single-clip form returns [K] rows; the batched
// form takes [B,T,H,W,C] and returns [B,K] per head.
std::vector<Tensor> forward(const ViViTModel& m, const VideoClip& clip,
                            const ForwardOptions& opts = {});
std::vector<Tensor> forward_batch(const ViViTModel& m, const Tensor& clips,
                                  const ForwardOptions& opts = {});

}  // namespace vivit
