// SPDX-License-Identifier: Apache-2.0
#include "vivit/model.hpp"

#include "vivit/regularizers.hpp"

namespace vivit {

namespace op = vivit::ops;

void ModelConfig::validate() const {
    if (variant < 1 || variant > 4) throw ValueError("variant must be 1..4");
    if (num_layers < 1) throw ValueError("num_layers must be >= 1");
    if (num_heads < 1 || embed_dim % num_heads != 0) {
        throw ValueError("embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                         std::to_string(num_heads) + " heads");
    }
    if (variant == 4 && num_heads % 2 != 0) {
        throw ValueError("variant 4 needs an even head count");
    }
    if (variant == 2 && temporal_layers < 0) throw ValueError("temporal_layers must be >= 0");
    if ((variant == 3 || variant == 4) && use_cls) {
        throw ValueError("variants 3 and 4 do not take a cls token");
    }
    if (num_classes.empty()) throw ValueError("at least one classifier head required");
    for (auto k : num_classes) {
        if (k < 2) throw ValueError("every head needs >= 2 classes");
    }
    if (frames < 1 || height < 1 || width < 1 || channels < 1) {
        throw ValueError("input dims must be >= 1");
    }
    count_tokens(*this);  // throws on an empty grid
}

ModelConfig backbone_preset(Backbone b) {
    ModelConfig cfg;
    cfg.backbone = b;
    switch (b) {
        case Backbone::Base:
            cfg.num_layers = 12;
            cfg.num_heads = 12;
            cfg.embed_dim = 768;
            break;
        case Backbone::Large:
            cfg.num_layers = 24;
            cfg.num_heads = 16;
            cfg.embed_dim = 1024;
            break;
        case Backbone::Huge:
            cfg.num_layers = 32;
            cfg.num_heads = 16;
            cfg.embed_dim = 1280;
            break;
        case Backbone::Custom:
            break;
    }
    return cfg;
}

TokenCounts count_tokens(const ModelConfig& cfg) {
    // uniform sampling reads tubelet.t as the sampling factor, so both
    // embeddings produce the same grid
    const GridDims g = grid_for({cfg.frames, cfg.height, cfg.width, cfg.channels}, cfg.tubelet);
    if (g.nt < 1 || g.nh < 1 || g.nw < 1) {
        throw ValueError("config yields an empty token grid");
    }
    return {g, g.token_count()};
}

namespace {

Tensor make_positional(Shape shape, RngState& rng, Dtype dt) {
    return Tensor::randn(shape, 0.02, rng, dt);
}

}  // namespace

ViViTModel build_model(const ModelConfig& cfg, RngState& rng, Dtype dt) {
    cfg.validate();
    const TokenCounts tokens = count_tokens(cfg);
    const std::int64_t d = cfg.embed_dim;
    const std::int64_t spatial = tokens.grid.nh * tokens.grid.nw;

    ViViTModel m;
    m.config = cfg;

    const std::int64_t patch_in = (cfg.embed_method == EmbedMethod::Tubelet)
                                      ? cfg.tubelet.t * cfg.tubelet.h * cfg.tubelet.w * cfg.channels
                                      : cfg.tubelet.h * cfg.tubelet.w * cfg.channels;
    Shape proj_shape = (cfg.embed_method == EmbedMethod::Tubelet)
                           ? Shape{cfg.tubelet.t, cfg.tubelet.h, cfg.tubelet.w, cfg.channels, d}
                           : Shape{cfg.tubelet.h, cfg.tubelet.w, cfg.channels, d};
    m.embedding.projection = Tensor::glorot_uniform(proj_shape, patch_in, d, rng, dt);

    const std::int64_t pos_rows =
        (cfg.variant == 2) ? spatial + (cfg.use_cls ? 1 : 0)
                           : tokens.total + (cfg.use_cls ? 1 : 0);
    m.embedding.pos = make_positional({pos_rows, d}, rng, dt);
    if (cfg.use_cls) m.embedding.cls_token = Tensor::zeros({d}, dt);

    const bool temporal_msa = (cfg.variant == 3);
    for (std::int64_t i = 0; i < cfg.num_layers; ++i) {
        m.layers.push_back(make_layer_weights(d, cfg.num_heads, cfg.mlp_width(), temporal_msa, rng, dt));
    }
    m.final_ln = make_layernorm_weights(d, dt);

    if (cfg.variant == 2 && cfg.temporal_layers > 0) {
        for (std::int64_t i = 0; i < cfg.temporal_layers; ++i) {
            m.temporal_encoder.push_back(
                make_layer_weights(d, cfg.num_heads, cfg.mlp_width(), false, rng, dt));
        }
        m.temporal_cls = Tensor::zeros({d}, dt);
        m.temporal_pos = make_positional({tokens.grid.nt + 1, d}, rng, dt);
        m.temporal_final_ln = make_layernorm_weights(d, dt);
    }

    for (auto classes : cfg.num_classes) {
        ClassifierHead head;
        head.w = Tensor::glorot_uniform({d, classes}, d, classes, rng, dt);
        head.b = Tensor::zeros({classes}, dt);
        m.heads.push_back(std::move(head));
    }
    return m;
}

namespace {

void collect_msa(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix,
                 MSAWeights& w) {
    out.emplace_back(prefix + ".wq", &w.wq);
    out.emplace_back(prefix + ".bq", &w.bq);
    out.emplace_back(prefix + ".wk", &w.wk);
    out.emplace_back(prefix + ".bk", &w.bk);
    out.emplace_back(prefix + ".wv", &w.wv);
    out.emplace_back(prefix + ".bv", &w.bv);
    out.emplace_back(prefix + ".wo", &w.wo);
    out.emplace_back(prefix + ".bo", &w.bo);
}

void collect_layer(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix,
                   TransformerLayerWeights& w) {
    out.emplace_back(prefix + ".ln1.gamma", &w.ln1.gamma);
    out.emplace_back(prefix + ".ln1.beta", &w.ln1.beta);
    collect_msa(out, prefix + ".msa", w.msa);
    if (w.temporal_msa) {
        out.emplace_back(prefix + ".temporal_ln.gamma", &w.temporal_ln->gamma);
        out.emplace_back(prefix + ".temporal_ln.beta", &w.temporal_ln->beta);
        collect_msa(out, prefix + ".temporal_msa", *w.temporal_msa);
    }
    out.emplace_back(prefix + ".ln2.gamma", &w.ln2.gamma);
    out.emplace_back(prefix + ".ln2.beta", &w.ln2.beta);
    out.emplace_back(prefix + ".mlp.w1", &w.mlp.w1);
    out.emplace_back(prefix + ".mlp.b1", &w.mlp.b1);
    out.emplace_back(prefix + ".mlp.w2", &w.mlp.w2);
    out.emplace_back(prefix + ".mlp.b2", &w.mlp.b2);
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> named_parameters(ViViTModel& m) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("embed.projection", &m.embedding.projection);
    out.emplace_back("embed.pos", &m.embedding.pos);
    if (m.embedding.cls_token.defined()) out.emplace_back("embed.cls", &m.embedding.cls_token);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        collect_layer(out, "layers." + std::to_string(i), m.layers[i]);
    }
    out.emplace_back("final_ln.gamma", &m.final_ln.gamma);
    out.emplace_back("final_ln.beta", &m.final_ln.beta);
    for (std::size_t i = 0; i < m.temporal_encoder.size(); ++i) {
        collect_layer(out, "temporal_layers." + std::to_string(i), m.temporal_encoder[i]);
    }
    if (m.temporal_cls.defined()) out.emplace_back("temporal.cls", &m.temporal_cls);
    if (m.temporal_pos.defined()) out.emplace_back("temporal.pos", &m.temporal_pos);
    if (m.temporal_final_ln) {
        out.emplace_back("temporal_final_ln.gamma", &m.temporal_final_ln->gamma);
        out.emplace_back("temporal_final_ln.beta", &m.temporal_final_ln->beta);
    }
    for (std::size_t i = 0; i < m.heads.size(); ++i) {
        out.emplace_back("heads." + std::to_string(i) + ".w", &m.heads[i].w);
        out.emplace_back("heads." + std::to_string(i) + ".b", &m.heads[i].b);
    }
    return out;
}

namespace {

bool keep_layer(const ForwardOptions& opts, std::int64_t index_1based, std::int64_t total) {
    if (!opts.train_mode || opts.p_droplayer <= 0.0) return true;
    if (!opts.rng) throw ValueError("stochastic depth requires an rng in train mode");
    return stochastic_depth_gate(index_1based, total, opts.p_droplayer, *opts.rng);
}

Tensor embed_grid(const ViViTModel& m, const Tensor& clips) {
    if (m.config.embed_method == EmbedMethod::Tubelet) {
        return tubelet_embed_batch(clips, m.embedding.projection, m.config.tubelet);
    }
    const std::int64_t nt = m.config.frames / m.config.tubelet.t;
    return uniform_frame_embed_batch(clips, m.embedding.projection, nt);
}

// [B, S, d] -> [B, d]
Tensor readout(const Tensor& seq, bool use_cls) {
    if (use_cls) {
        return op::reshape(op::slice(seq, {0, 0, 0}, {seq.dim(0), 1, seq.dim(2)}),
                           {seq.dim(0), seq.dim(2)});
    }
    return op::mean_axis(seq, 1);
}

std::vector<Tensor> apply_heads(const ViViTModel& m, const Tensor& pooled) {
    std::vector<Tensor> logits;
    logits.reserve(m.heads.size());
    for (const auto& head : m.heads) logits.push_back(op::linear(pooled, head.w, head.b));
    return logits;
}

Tensor prepend_token(const Tensor& seq, const Tensor& token) {
    Tensor row = op::expand_leading(op::reshape(token, {1, token.numel()}), seq.dim(0));
    return op::concat({row, seq}, 1);
}

std::vector<Tensor> forward_variant1(const ViViTModel& m, const Tensor& grid5d,
                                     const ForwardOptions& opts) {
    Tensor seq = assemble_sequence_batch(grid5d, m.embedding, m.config.use_cls);
    const std::int64_t total = static_cast<std::int64_t>(m.layers.size());
    for (std::int64_t i = 0; i < total; ++i) {
        if (keep_layer(opts, i + 1, total)) seq = transformer_layer(seq, m.layers[i]);
    }
    seq = op::layernorm(seq, m.final_ln.gamma, m.final_ln.beta);
    return apply_heads(m, readout(seq, m.config.use_cls));
}

std::vector<Tensor> forward_variant2(const ViViTModel& m, const Tensor& grid5d,
                                     const ForwardOptions& opts) {
    const Shape& s = grid5d.shape();  // [B, nt, nh, nw, d]
    const std::int64_t batch = s[0], nt = s[1], spatial = s[2] * s[3], d = s[4];
    Tensor seq = op::reshape(grid5d, {batch * nt, spatial, d});
    if (m.config.use_cls) seq = prepend_token(seq, m.embedding.cls_token);
    seq = op::add_broadcast(seq, m.embedding.pos);

    const std::int64_t spatial_depth = static_cast<std::int64_t>(m.layers.size());
    for (std::int64_t i = 0; i < spatial_depth; ++i) {
        if (keep_layer(opts, i + 1, spatial_depth)) seq = transformer_layer(seq, m.layers[i]);
    }
    seq = op::layernorm(seq, m.final_ln.gamma, m.final_ln.beta);
    Tensor frame_repr = op::reshape(readout(seq, m.config.use_cls), {batch, nt, d});

    if (m.temporal_encoder.empty()) {
        // average pooling baseline
        return apply_heads(m, op::mean_axis(frame_repr, 1));
    }
    Tensor tseq = prepend_token(frame_repr, m.temporal_cls);
    tseq = op::add_broadcast(tseq, m.temporal_pos);
    const std::int64_t temporal_depth = static_cast<std::int64_t>(m.temporal_encoder.size());
    for (std::int64_t i = 0; i < temporal_depth; ++i) {
        if (keep_layer(opts, i + 1, temporal_depth)) {
            tseq = transformer_layer(tseq, m.temporal_encoder[i]);
        }
    }
    tseq = op::layernorm(tseq, m.temporal_final_ln->gamma, m.temporal_final_ln->beta);
    return apply_heads(m, readout(tseq, true));
}

std::vector<Tensor> forward_variant3(const ViViTModel& m, const Tensor& grid5d,
                                     const ForwardOptions& opts) {
    const Shape& s = grid5d.shape();
    const std::int64_t batch = s[0], nt = s[1], spatial = s[2] * s[3], d = s[4];
    Tensor seq = assemble_sequence_batch(grid5d, m.embedding, false);
    seq = op::reshape(seq, {batch, nt, spatial, d});
    const std::int64_t total = static_cast<std::int64_t>(m.layers.size());
    for (std::int64_t i = 0; i < total; ++i) {
        if (keep_layer(opts, i + 1, total)) seq = factorised_sa_layer(seq, m.layers[i]);
    }
    seq = op::reshape(seq, {batch, nt * spatial, d});
    seq = op::layernorm(seq, m.final_ln.gamma, m.final_ln.beta);
    return apply_heads(m, readout(seq, false));
}

std::vector<Tensor> forward_variant4(const ViViTModel& m, const Tensor& grid5d,
                                     const ForwardOptions& opts) {
    const Shape& s = grid5d.shape();
    const GridDims grid{s[1], s[2], s[3]};
    Tensor seq = assemble_sequence_batch(grid5d, m.embedding, false);
    const std::int64_t total = static_cast<std::int64_t>(m.layers.size());
    for (std::int64_t i = 0; i < total; ++i) {
        if (keep_layer(opts, i + 1, total)) seq = factorised_dot_layer(seq, grid, m.layers[i]);
    }
    seq = op::layernorm(seq, m.final_ln.gamma, m.final_ln.beta);
    return apply_heads(m, readout(seq, false));
}

}  // namespace

std::vector<Tensor> forward_batch(const ViViTModel& m, const Tensor& clips,
                                  const ForwardOptions& opts) {
    const Shape& s = clips.shape();
    if (s.size() != 5) throw ShapeError("forward_batch: clips must be [B,T,H,W,C]");
    if (s[1] != m.config.frames || s[2] != m.config.height || s[3] != m.config.width ||
        s[4] != m.config.channels) {
        throw ShapeError("clip dims " + shape_str(s) + " do not match the model input " +
                         std::to_string(m.config.frames) + "x" + std::to_string(m.config.height) +
                         "x" + std::to_string(m.config.width) + "x" +
                         std::to_string(m.config.channels));
    }
    Tensor grid5d = embed_grid(m, clips);
    switch (m.config.variant) {
        case 1: return forward_variant1(m, grid5d, opts);
        case 2: return forward_variant2(m, grid5d, opts);
        case 3: return forward_variant3(m, grid5d, opts);
        case 4: return forward_variant4(m, grid5d, opts);
        default: throw ValueError("unknown variant");
    }
}

std::vector<Tensor> forward(const ViViTModel& m, const VideoClip& clip, const ForwardOptions& opts) {
    const Shape& s = clip.frames.shape();
    if (s.size() != 4) throw ShapeError("forward: clip must be [T,H,W,C]");
    Tensor batched = op::reshape(clip.frames, {1, s[0], s[1], s[2], s[3]});
    std::vector<Tensor> logits = forward_batch(m, batched, opts);
    for (auto& t : logits) t = op::reshape(t, {t.dim(1)});
    return logits;
}

}  // namespace vivit
