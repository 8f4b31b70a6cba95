// SPDX-License-Identifier: Apache-2.0
#include "vivit/init.hpp"

#include <cstring>

namespace vivit {

namespace op = vivit::ops;

Tensor inflate_embedding(const Tensor& image_projection, std::int64_t t) {
    if (t < 1) throw ValueError("inflate_embedding: t must be >= 1");
    if (image_projection.rank() != 4) {
        throw ShapeError("inflate_embedding: expected [h,w,C,d], got " +
                         shape_str(image_projection.shape()));
    }
    Shape out_shape;
    out_shape.push_back(t);
    for (auto d : image_projection.shape()) out_shape.push_back(d);
    Tensor out = Tensor::zeros(out_shape, image_projection.dtype());
    const std::int64_t block = image_projection.numel();
    if (image_projection.dtype() == Dtype::F32) {
        auto src = image_projection.data<float>();
        auto dst = out.mutable_data<float>();
        for (std::int64_t s = 0; s < t; ++s)
            for (std::int64_t i = 0; i < block; ++i)
                dst[s * block + i] = src[i] / static_cast<float>(t);
    } else {
        auto src = image_projection.data<double>();
        auto dst = out.mutable_data<double>();
        for (std::int64_t s = 0; s < t; ++s)
            for (std::int64_t i = 0; i < block; ++i)
                dst[s * block + i] = src[i] / static_cast<double>(t);
    }
    return out;
}

Tensor central_frame_init(const Tensor& image_projection, std::int64_t t) {
    if (t < 1) throw ValueError("central_frame_init: t must be >= 1");
    if (image_projection.rank() != 4) {
        throw ShapeError("central_frame_init: expected [h,w,C,d], got " +
                         shape_str(image_projection.shape()));
    }
    Shape out_shape;
    out_shape.push_back(t);
    for (auto d : image_projection.shape()) out_shape.push_back(d);
    Tensor out = Tensor::zeros(out_shape, image_projection.dtype());
    const std::int64_t block = image_projection.numel();
    const std::int64_t centre = t / 2;
    if (image_projection.dtype() == Dtype::F32) {
        std::memcpy(out.mutable_data<float>().data() + centre * block,
                    image_projection.data<float>().data(), sizeof(float) * block);
    } else {
        std::memcpy(out.mutable_data<double>().data() + centre * block,
                    image_projection.data<double>().data(), sizeof(double) * block);
    }
    return out;
}

Tensor repeat_positional(const Tensor& image_positional, std::int64_t nt) {
    if (nt < 1) throw ValueError("repeat_positional: nt must be >= 1");
    if (image_positional.rank() != 2) {
        throw ShapeError("repeat_positional: expected [ns, d], got " +
                         shape_str(image_positional.shape()));
    }
    const Shape& s = image_positional.shape();
    return op::reshape(op::expand_leading(image_positional, nt), {nt * s[0], s[1]});
}

namespace {

void zero_fill(Tensor& t) {
    if (t.dtype() == Dtype::F32) {
        for (auto& v : t.mutable_data<float>()) v = 0.0f;
    } else {
        for (auto& v : t.mutable_data<double>()) v = 0.0;
    }
}

}  // namespace

void init_model3_temporal(ViViTModel& m) {
    if (m.config.variant != 3) {
        throw ValueError("init_model3_temporal: model is variant " + std::to_string(m.config.variant));
    }
    for (auto& layer : m.layers) {
        if (!layer.temporal_msa) throw ValueError("variant-3 layer lacks a temporal MSA block");
        zero_fill(layer.temporal_msa->wq);
        zero_fill(layer.temporal_msa->bq);
        zero_fill(layer.temporal_msa->wk);
        zero_fill(layer.temporal_msa->bk);
        zero_fill(layer.temporal_msa->wv);
        zero_fill(layer.temporal_msa->bv);
        zero_fill(layer.temporal_msa->wo);
        zero_fill(layer.temporal_msa->bo);
    }
}

namespace {

Tensor fetch(const Checkpoint& ckpt, const std::string& name, const Shape& want, Dtype dt) {
    const ManifestEntry* e = ckpt.find(name);
    if (!e) throw CheckpointError("pretrained checkpoint lacks tensor '" + name + "'");
    if (e->shape != want) {
        throw CheckpointError("tensor '" + name + "' has shape " + shape_str(e->shape) +
                              ", the target model needs " + shape_str(want));
    }
    Tensor t = ckpt.tensor(name);
    return (t.dtype() == dt) ? t : t.to(dt);
}

void copy_layer_from(const Checkpoint& ckpt, const std::string& prefix,
                     TransformerLayerWeights& layer, Dtype dt) {
    layer.ln1.gamma = fetch(ckpt, prefix + ".ln1.gamma", layer.ln1.gamma.shape(), dt);
    layer.ln1.beta = fetch(ckpt, prefix + ".ln1.beta", layer.ln1.beta.shape(), dt);
    layer.msa.wq = fetch(ckpt, prefix + ".msa.wq", layer.msa.wq.shape(), dt);
    layer.msa.bq = fetch(ckpt, prefix + ".msa.bq", layer.msa.bq.shape(), dt);
    layer.msa.wk = fetch(ckpt, prefix + ".msa.wk", layer.msa.wk.shape(), dt);
    layer.msa.bk = fetch(ckpt, prefix + ".msa.bk", layer.msa.bk.shape(), dt);
    layer.msa.wv = fetch(ckpt, prefix + ".msa.wv", layer.msa.wv.shape(), dt);
    layer.msa.bv = fetch(ckpt, prefix + ".msa.bv", layer.msa.bv.shape(), dt);
    layer.msa.wo = fetch(ckpt, prefix + ".msa.wo", layer.msa.wo.shape(), dt);
    layer.msa.bo = fetch(ckpt, prefix + ".msa.bo", layer.msa.bo.shape(), dt);
    layer.ln2.gamma = fetch(ckpt, prefix + ".ln2.gamma", layer.ln2.gamma.shape(), dt);
    layer.ln2.beta = fetch(ckpt, prefix + ".ln2.beta", layer.ln2.beta.shape(), dt);
    layer.mlp.w1 = fetch(ckpt, prefix + ".mlp.w1", layer.mlp.w1.shape(), dt);
    layer.mlp.b1 = fetch(ckpt, prefix + ".mlp.b1", layer.mlp.b1.shape(), dt);
    layer.mlp.w2 = fetch(ckpt, prefix + ".mlp.w2", layer.mlp.w2.shape(), dt);
    layer.mlp.b2 = fetch(ckpt, prefix + ".mlp.b2", layer.mlp.b2.shape(), dt);
}

}  // namespace

ViViTModel load_pretrained(const Checkpoint& image_ckpt, const ModelConfig& cfg, EmbedInit method,
                           RngState rng, Dtype dt) {
    cfg.validate();
    ViViTModel m = build_model(cfg, rng, dt);
    const TokenCounts tokens = count_tokens(cfg);
    const std::int64_t spatial = tokens.grid.nh * tokens.grid.nw;
    const std::int64_t d = cfg.embed_dim;

    // image-side geometry
    const Shape image_proj_shape{cfg.tubelet.h, cfg.tubelet.w, cfg.channels, d};
    const bool image_has_cls = image_ckpt.contains("embed.cls");
    if (cfg.use_cls && !image_has_cls) {
        throw CheckpointError("model wants a cls token but the image checkpoint has no 'embed.cls'");
    }
    const std::int64_t image_pos_rows = spatial + (image_has_cls ? 1 : 0);
    Tensor image_proj = fetch(image_ckpt, "embed.projection", image_proj_shape, dt);
    Tensor image_pos = fetch(image_ckpt, "embed.pos", {image_pos_rows, d}, dt);

    // embedding filter
    if (cfg.embed_method == EmbedMethod::Tubelet) {
        switch (method) {
            case EmbedInit::Inflate:
                m.embedding.projection = inflate_embedding(image_proj, cfg.tubelet.t);
                break;
            case EmbedInit::Central:
                m.embedding.projection = central_frame_init(image_proj, cfg.tubelet.t);
                break;
            case EmbedInit::Random:
                break;  // keep the fresh draw
        }
    } else {
        // per-frame embedding is the image filter unchanged
        if (method != EmbedInit::Random) m.embedding.projection = image_proj;
    }

    // positional rows
    const std::int64_t spatial_row0 = image_has_cls ? 1 : 0;
    Tensor image_spatial_pos = op::slice(image_pos, {spatial_row0, 0}, {spatial, d});
    if (cfg.variant == 2) {
        // per-frame table, shared across temporal indices
        if (cfg.use_cls) {
            m.embedding.pos = op::concat({op::slice(image_pos, {0, 0}, {1, d}), image_spatial_pos}, 0);
        } else {
            m.embedding.pos = image_spatial_pos;
        }
    } else {
        Tensor repeated = repeat_positional(image_spatial_pos, tokens.grid.nt);
        if (cfg.use_cls) {
            m.embedding.pos = op::concat({op::slice(image_pos, {0, 0}, {1, d}), repeated}, 0);
        } else {
            m.embedding.pos = repeated;
        }
    }
    if (cfg.use_cls) m.embedding.cls_token = fetch(image_ckpt, "embed.cls", {d}, dt);

    // transformer stack
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        copy_layer_from(image_ckpt, "layers." + std::to_string(i), m.layers[i], dt);
    }
    if (image_ckpt.contains("layers." + std::to_string(m.layers.size()) + ".msa.wq")) {
        throw CheckpointError("image checkpoint is deeper than the target model (" +
                              std::to_string(m.layers.size()) + " layers)");
    }
    m.final_ln.gamma = fetch(image_ckpt, "final_ln.gamma", {d}, dt);
    m.final_ln.beta = fetch(image_ckpt, "final_ln.beta", {d}, dt);

    if (cfg.variant == 3) init_model3_temporal(m);
    // variant 2 temporal encoder, temporal positions and all heads stay fresh
    return m;
}

Checkpoint checkpoint_of(ViViTModel& m) {
    Checkpoint ckpt;
    for (auto& [name, tensor] : named_parameters(m)) ckpt.add(name, *tensor);
    return ckpt;
}

ViViTModel model_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg) {
    if (ckpt.manifest.empty()) throw CheckpointError("empty checkpoint");
    RngState rng{0, 0};
    ViViTModel m = build_model(cfg, rng, ckpt.manifest.front().dtype);
    auto params = named_parameters(m);
    if (params.size() != ckpt.manifest.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(ckpt.manifest.size()) +
                              " tensors, the model namespace has " + std::to_string(params.size()));
    }
    for (auto& [name, tensor] : params) {
        *tensor = fetch(ckpt, name, tensor->shape(), tensor->dtype());
    }
    return m;
}

}  // namespace vivit
