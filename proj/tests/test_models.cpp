// SPDX-License-Identifier: Apache-2.0
//
// model assembly tests: the four variants against layer-by-layer oracles,
// token arithmetic, readout wiring.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "vivit/init.hpp"
#include "vivit/model.hpp"
#include "vivit/ops.hpp"

using namespace vivit;
namespace op = vivit::ops;

namespace {

Tensor random_clip(Shape shape, RngState& rng, Dtype dt = Dtype::F32) {
    Tensor t = Tensor::zeros(shape, dt);
    if (dt == Dtype::F32) {
        for (auto& v : t.mutable_data<float>()) v = static_cast<float>(rng.uniform());
    } else {
        for (auto& v : t.mutable_data<double>()) v = rng.uniform();
    }
    return t;
}

ModelConfig tiny_config(int variant) {
    ModelConfig cfg;
    cfg.variant = variant;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.embed_dim = 16;
    cfg.temporal_layers = 2;
    cfg.tubelet = {2, 4, 4};
    cfg.frames = 4;
    cfg.height = 8;
    cfg.width = 8;
    cfg.channels = 1;
    cfg.use_cls = (variant == 1 || variant == 2);
    cfg.num_classes = {3};
    return cfg;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (a.flat(i) != b.flat(i)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("count_tokens floor arithmetic") {
    ModelConfig cfg;
    cfg.frames = 32;
    cfg.height = 224;
    cfg.width = 224;
    cfg.channels = 3;
    cfg.tubelet = {2, 16, 16};
    TokenCounts t = count_tokens(cfg);
    CHECK(t.grid == GridDims{16, 14, 14});
    CHECK(t.total == 3136);

    // 8 sampled frames and 32 frames with t=4 tubelets give the same N
    ModelConfig uniform8 = cfg;
    uniform8.frames = 32;
    uniform8.tubelet = {4, 16, 16};
    uniform8.embed_method = EmbedMethod::UniformFrame;
    ModelConfig tubelet4 = cfg;
    tubelet4.tubelet = {4, 16, 16};
    CHECK(count_tokens(uniform8).total == count_tokens(tubelet4).total);
    CHECK(count_tokens(uniform8).grid.nt == 8);

    // remainder frames dropped
    ModelConfig odd = cfg;
    odd.frames = 33;
    CHECK(count_tokens(odd).grid.nt == 16);

    // zero grid rejected
    ModelConfig bad = cfg;
    bad.height = 8;
    bad.tubelet = {2, 16, 16};
    CHECK_THROWS_AS(count_tokens(bad), ShapeError);
}

TEST_CASE("config validation") {
    ModelConfig cfg = tiny_config(3);
    cfg.use_cls = true;
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg = tiny_config(4);
    cfg.num_heads = 1;  // odd
    cfg.embed_dim = 15;
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg = tiny_config(1);
    cfg.num_classes = {};
    CHECK_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("variant 1 on a single frame equals a plain image-transformer forward") {
    ModelConfig cfg = tiny_config(1);
    cfg.frames = 1;
    cfg.tubelet = {1, 4, 4};
    RngState rng{51, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F32);

    RngState data_rng{52, 0};
    Tensor frames = random_clip({1, 8, 8, 1}, data_rng);
    std::vector<Tensor> logits = forward(m, VideoClip{frames});
    REQUIRE(logits.size() == 1);
    CHECK(logits[0].shape() == Shape{3});

    // plain ViT path: 2-d patch embed, cls+pos, layers, LN, cls readout, head
    const Shape& ps = m.embedding.projection.shape();
    EmbeddingWeights flat2d;
    flat2d.projection = op::reshape(m.embedding.projection, {ps[1], ps[2], ps[3], ps[4]});
    flat2d.pos = m.embedding.pos;
    flat2d.cls_token = m.embedding.cls_token;
    TokenGrid g = uniform_frame_embed(VideoClip{frames}, flat2d, 1);
    Tensor seq = assemble_sequence(g, flat2d, true);
    for (const auto& layer : m.layers) seq = transformer_layer(seq, layer);
    seq = op::layernorm(seq, m.final_ln.gamma, m.final_ln.beta);
    Tensor pooled = op::reshape(op::slice(seq, {0, 0}, {1, cfg.embed_dim}), {1, cfg.embed_dim});
    Tensor expect = op::reshape(op::linear(pooled, m.heads[0].w, m.heads[0].b), {3});
    for (int i = 0; i < 3; ++i) CHECK(std::abs(logits[0].flat(i) - expect.flat(i)) < 1e-6);
}

TEST_CASE("variant 1 tiny forward equals layer-by-layer recomputation exactly") {
    ModelConfig cfg = tiny_config(1);
    RngState rng{53, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F32);
    RngState data_rng{54, 0};
    Tensor frames = random_clip({4, 8, 8, 1}, data_rng);

    std::vector<Tensor> logits = forward(m, VideoClip{frames});

    TokenGrid g = tubelet_embed(VideoClip{frames}, m.embedding, cfg.tubelet);
    Tensor seq = assemble_sequence(g, m.embedding, true);
    for (const auto& layer : m.layers) seq = transformer_layer(seq, layer);
    seq = op::layernorm(seq, m.final_ln.gamma, m.final_ln.beta);
    Tensor pooled = op::reshape(op::slice(seq, {0, 0}, {1, cfg.embed_dim}), {1, cfg.embed_dim});
    Tensor expect = op::reshape(op::linear(pooled, m.heads[0].w, m.heads[0].b), {3});
    CHECK(bitwise_equal(logits[0], expect));
}

TEST_CASE("variant 2 with no temporal encoder averages frame representations") {
    ModelConfig cfg = tiny_config(2);
    cfg.temporal_layers = 0;
    RngState rng{55, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F32);
    CHECK(m.temporal_encoder.empty());
    CHECK_FALSE(m.temporal_cls.defined());

    RngState data_rng{56, 0};
    Tensor frames = random_clip({4, 8, 8, 1}, data_rng);
    std::vector<Tensor> logits = forward(m, VideoClip{frames});

    // oracle: spatial encoder one frame at a time, mean, linear head
    TokenGrid g = tubelet_embed(VideoClip{frames}, m.embedding, cfg.tubelet);
    const std::int64_t nt = g.grid.nt, ns = g.grid.nh * g.grid.nw, d = cfg.embed_dim;
    Tensor grid4 = op::reshape(g.tokens, {nt, ns, d});
    std::vector<Tensor> frame_reprs;
    for (std::int64_t f = 0; f < nt; ++f) {
        Tensor tokens = op::reshape(op::slice(grid4, {f, 0, 0}, {1, ns, d}), {ns, d});
        Tensor cls = op::reshape(m.embedding.cls_token, {1, d});
        Tensor seq = op::add_broadcast(op::concat({cls, tokens}, 0), m.embedding.pos);
        for (const auto& layer : m.layers) seq = transformer_layer(seq, layer);
        seq = op::layernorm(seq, m.final_ln.gamma, m.final_ln.beta);
        frame_reprs.push_back(op::slice(seq, {0, 0}, {1, d}));
    }
    Tensor pooled = op::mean_axis(op::concat(frame_reprs, 0), 0);
    Tensor expect = op::reshape(op::linear(op::reshape(pooled, {1, d}), m.heads[0].w, m.heads[0].b), {3});
    for (int i = 0; i < 3; ++i) {
        CHECK(logits[0].flat(i) == doctest::Approx(expect.flat(i)).epsilon(1e-6));
    }
}

TEST_CASE("variant 2 temporal encoder sees nt+1 tokens regardless of spatial size") {
    std::vector<std::int64_t> seq_lens;
    set_attention_probe([&](const Tensor& w) { seq_lens.push_back(w.shape().back()); });
    for (std::int64_t hw : {8, 16}) {
        ModelConfig cfg = tiny_config(2);
        cfg.height = hw;
        cfg.width = hw;
        RngState rng{57, 0};
        ViViTModel m = build_model(cfg, rng, Dtype::F32);
        RngState data_rng{58, 0};
        seq_lens.clear();
        forward(m, VideoClip{random_clip({4, hw, hw, 1}, data_rng)});
        const std::int64_t ns1 = (hw / 4) * (hw / 4) + 1;
        REQUIRE(seq_lens.size() == 4);  // 2 spatial + 2 temporal layers
        CHECK(seq_lens[0] == ns1);
        CHECK(seq_lens[1] == ns1);
        CHECK(seq_lens[2] == 2 + 1);  // nt + temporal cls, spatial-independent
        CHECK(seq_lens[3] == 2 + 1);
    }
    set_attention_probe(nullptr);
}

TEST_CASE("variants 3 and 4 tiny forwards match manual layer recomputation") {
    RngState data_rng{59, 0};
    Tensor frames = random_clip({4, 8, 8, 1}, data_rng);

    ModelConfig cfg3 = tiny_config(3);
    RngState rng3{60, 0};
    ViViTModel m3 = build_model(cfg3, rng3, Dtype::F32);
    std::vector<Tensor> l3 = forward(m3, VideoClip{frames});
    {
        TokenGrid g = tubelet_embed(VideoClip{frames}, m3.embedding, cfg3.tubelet);
        const std::int64_t nt = g.grid.nt, ns = g.grid.nh * g.grid.nw, d = cfg3.embed_dim;
        Tensor seq = assemble_sequence(g, m3.embedding, false);
        seq = op::reshape(seq, {nt, ns, d});
        for (const auto& layer : m3.layers) seq = factorised_sa_layer(seq, layer);
        seq = op::layernorm(op::reshape(seq, {nt * ns, d}), m3.final_ln.gamma, m3.final_ln.beta);
        Tensor pooled = op::reshape(op::mean_axis(seq, 0), {1, d});
        Tensor expect = op::reshape(op::linear(pooled, m3.heads[0].w, m3.heads[0].b), {3});
        for (int i = 0; i < 3; ++i) CHECK(l3[0].flat(i) == doctest::Approx(expect.flat(i)).epsilon(1e-6));
    }

    ModelConfig cfg4 = tiny_config(4);
    RngState rng4{61, 0};
    ViViTModel m4 = build_model(cfg4, rng4, Dtype::F32);
    std::vector<Tensor> l4 = forward(m4, VideoClip{frames});
    {
        TokenGrid g = tubelet_embed(VideoClip{frames}, m4.embedding, cfg4.tubelet);
        const std::int64_t d = cfg4.embed_dim;
        Tensor seq = assemble_sequence(g, m4.embedding, false);
        for (const auto& layer : m4.layers) seq = factorised_dot_layer(seq, g.grid, layer);
        seq = op::layernorm(seq, m4.final_ln.gamma, m4.final_ln.beta);
        Tensor pooled = op::reshape(op::mean_axis(seq, 0), {1, d});
        Tensor expect = op::reshape(op::linear(pooled, m4.heads[0].w, m4.heads[0].b), {3});
        for (int i = 0; i < 3; ++i) CHECK(l4[0].flat(i) == doctest::Approx(expect.flat(i)).epsilon(1e-6));
    }
}

TEST_CASE("eval forward is deterministic and heads are independent") {
    ModelConfig cfg = tiny_config(2);
    cfg.num_classes = {3, 5};
    RngState rng{62, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F32);
    RngState data_rng{63, 0};
    Tensor frames = random_clip({4, 8, 8, 1}, data_rng);

    std::vector<Tensor> a = forward(m, VideoClip{frames});
    std::vector<Tensor> b = forward(m, VideoClip{frames});
    REQUIRE(a.size() == 2);
    CHECK(bitwise_equal(a[0], b[0]));
    CHECK(bitwise_equal(a[1], b[1]));

    // perturbing head 2 leaves head 1 bitwise unchanged
    for (auto& v : m.heads[1].w.mutable_data<float>()) v += 0.5f;
    std::vector<Tensor> c = forward(m, VideoClip{frames});
    CHECK(bitwise_equal(a[0], c[0]));
    CHECK_FALSE(bitwise_equal(a[1], c[1]));
}

TEST_CASE("batched forward equals single-clip forwards") {
    ModelConfig cfg = tiny_config(4);
    RngState rng{64, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F32);
    RngState data_rng{65, 0};
    Tensor clips = random_clip({3, 4, 8, 8, 1}, data_rng);
    std::vector<Tensor> batched = forward_batch(m, clips);
    for (std::int64_t i = 0; i < 3; ++i) {
        Tensor one = op::reshape(op::slice(clips, {i, 0, 0, 0, 0}, {1, 4, 8, 8, 1}), {4, 8, 8, 1});
        std::vector<Tensor> single = forward(m, VideoClip{one});
        for (int k = 0; k < 3; ++k) {
            CHECK(batched[0].flat(i * 3 + k) == doctest::Approx(single[0].flat(k)).epsilon(1e-6));
        }
    }
}

TEST_CASE("stochastic depth in train mode changes outputs, eval never does") {
    ModelConfig cfg = tiny_config(1);
    cfg.num_layers = 4;
    RngState rng{66, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F32);
    RngState data_rng{67, 0};
    Tensor frames = random_clip({4, 8, 8, 1}, data_rng);

    ForwardOptions eval_opts;
    Tensor base = forward(m, VideoClip{frames}, eval_opts)[0];

    // drop everything: every layer becomes the identity
    RngState gate_rng{68, 0};
    ForwardOptions drop_all{true, 1.0, &gate_rng};
    // p=l/L at l=L is exactly 1, lower layers may survive; force with repeats
    bool saw_difference = false;
    for (int rep = 0; rep < 5 && !saw_difference; ++rep) {
        Tensor dropped = forward(m, VideoClip{frames}, drop_all)[0];
        saw_difference = !bitwise_equal(base, dropped);
    }
    CHECK(saw_difference);

    ForwardOptions train_no_drop{true, 0.0, &gate_rng};
    CHECK(bitwise_equal(base, forward(m, VideoClip{frames}, train_no_drop)[0]));
}

TEST_CASE("parameter namespace is stable and complete") {
    ModelConfig cfg = tiny_config(2);
    RngState rng{69, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F32);
    auto params = named_parameters(m);
    // embed(3) + 2 spatial layers(16 each) + final_ln(2) + 2 temporal layers(16)
    // + temporal cls/pos(2) + temporal final ln(2) + head(2)
    CHECK(params.size() == 3 + 32 + 2 + 32 + 2 + 2 + 2);
    CHECK(params[0].first == "embed.projection");
    CHECK(params[1].first == "embed.pos");
    CHECK(params[2].first == "embed.cls");
    bool has_lw = false;
    for (auto& [name, t] : params) {
        if (name == "layers.1.msa.wq") has_lw = true;
        CHECK(t->defined());
    }
    CHECK(has_lw);
}

TEST_CASE("variant 3 with zeroed temporal stage matches variant 1 on shared weights") {
    // same trunk weights, both GAP readout, nt=1 so spatial attention is full
    ModelConfig cfg1 = tiny_config(1);
    cfg1.use_cls = false;
    cfg1.frames = 2;  // one temporal slot at t=2
    RngState rng{200, 0};
    ViViTModel m1 = build_model(cfg1, rng, Dtype::F32);

    ModelConfig cfg3 = tiny_config(3);
    cfg3.frames = 2;
    RngState rng3{201, 0};
    ViViTModel m3 = build_model(cfg3, rng3, Dtype::F32);
    // graft the variant-1 trunk into the variant-3 model
    m3.embedding = m1.embedding;
    for (std::size_t i = 0; i < m3.layers.size(); ++i) {
        auto temporal_msa = m3.layers[i].temporal_msa;
        auto temporal_ln = m3.layers[i].temporal_ln;
        m3.layers[i] = m1.layers[i];
        m3.layers[i].temporal_msa = temporal_msa;
        m3.layers[i].temporal_ln = temporal_ln;
    }
    m3.final_ln = m1.final_ln;
    m3.heads = m1.heads;
    init_model3_temporal(m3);

    RngState data_rng{202, 0};
    Tensor frames = random_clip({2, 8, 8, 1}, data_rng);
    Tensor l1 = forward(m1, VideoClip{frames})[0];
    Tensor l3 = forward(m3, VideoClip{frames})[0];
    for (std::int64_t i = 0; i < l1.numel(); ++i) {
        CHECK(std::abs(l1.flat(i) - l3.flat(i)) < 1e-6);
    }
}
