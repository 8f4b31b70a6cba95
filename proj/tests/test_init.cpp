// SPDX-License-Identifier: Apache-2.0
//
// init tests: filter inflation, central-frame placement, positional
// repetition, pretrained loading, checkpoint IO validation.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "vivit/init.hpp"
#include "vivit/train.hpp"
#include "vivit/ops.hpp"

using namespace vivit;
namespace op = vivit::ops;

namespace {

Tensor random_tensor(Shape shape, RngState& rng, Dtype dt = Dtype::F32, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t = Tensor::zeros(shape, dt);
    if (dt == Dtype::F32) {
        for (auto& v : t.mutable_data<float>()) v = static_cast<float>(rng.uniform(lo, hi));
    } else {
        for (auto& v : t.mutable_data<double>()) v = rng.uniform(lo, hi);
    }
    return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (a.flat(i) != b.flat(i)) return false;
    }
    return true;
}

std::string temp_base(const char* tag) {
    return std::string("/tmp/vivit_test_") + tag + "_" + std::to_string(::getpid());
}

// image model := variant-1 config on a single frame with per-frame embedding
ModelConfig image_config() {
    ModelConfig cfg;
    cfg.variant = 1;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.embed_dim = 16;
    cfg.tubelet = {1, 4, 4};
    cfg.frames = 1;
    cfg.height = 8;
    cfg.width = 8;
    cfg.channels = 1;
    cfg.embed_method = EmbedMethod::UniformFrame;
    cfg.use_cls = true;
    cfg.num_classes = {3};
    return cfg;
}

ModelConfig video_config(int variant) {
    ModelConfig cfg = image_config();
    cfg.variant = variant;
    cfg.frames = 8;
    cfg.tubelet = {2, 4, 4};
    cfg.embed_method = EmbedMethod::Tubelet;
    cfg.use_cls = (variant == 1 || variant == 2);
    cfg.temporal_layers = 2;
    return cfg;
}

}  // namespace

TEST_CASE("inflate_embedding divides evenly across time") {
    RngState rng{70, 0};
    Tensor e = random_tensor({2, 2, 1, 3}, rng);
    CHECK(bitwise_equal(inflate_embedding(e, 1), op::reshape(e, {1, 2, 2, 1, 3})));

    Tensor inflated = inflate_embedding(e, 4);
    CHECK(inflated.shape() == Shape{4, 2, 2, 1, 3});
    const std::int64_t block = e.numel();
    for (std::int64_t s = 0; s < 4; ++s)
        for (std::int64_t i = 0; i < block; ++i) {
            CHECK(inflated.flat(s * block + i) == doctest::Approx(e.flat(i) / 4.0).epsilon(1e-9));
        }
    // quarters sum back exactly (f64 accumulation of exact quarters)
    for (std::int64_t i = 0; i < block; ++i) {
        double acc = 0;
        for (std::int64_t s = 0; s < 4; ++s) acc += inflated.flat(s * block + i);
        CHECK(acc == static_cast<double>(static_cast<float>(e.flat(i))));
    }
    CHECK_THROWS_AS(inflate_embedding(e, 0), ValueError);
}

TEST_CASE("inflated tubelet on a temporally constant clip equals the 2D embedding") {
    RngState rng{71, 0};
    const std::int64_t H = 8, W = 8, C = 1, d = 6, t = 4;
    Tensor e2d = random_tensor({4, 4, C, d}, rng);
    Tensor frame = random_tensor({1, H, W, C}, rng, Dtype::F32, 0.0, 1.0);

    // clip made of t identical frames
    Tensor clip = op::reshape(op::expand_leading(op::reshape(frame, {H, W, C}), t), {t, H, W, C});

    EmbeddingWeights w3d;
    w3d.projection = inflate_embedding(e2d, t);
    TokenGrid tube = tubelet_embed(VideoClip{clip}, w3d, {t, 4, 4});

    EmbeddingWeights w2d;
    w2d.projection = e2d;
    TokenGrid single = uniform_frame_embed(VideoClip{frame}, w2d, 1);

    REQUIRE(tube.tokens.numel() == single.tokens.numel());
    for (std::int64_t i = 0; i < tube.tokens.numel(); ++i) {
        CHECK(std::abs(tube.tokens.flat(i) - single.tokens.flat(i)) < 1e-6);
    }
}

TEST_CASE("central_frame_init puts the filter at floor(t/2) and zeros elsewhere") {
    RngState rng{72, 0};
    Tensor e = random_tensor({2, 2, 1, 3}, rng, Dtype::F32, 0.5, 1.5);  // strictly nonzero
    Tensor c2 = central_frame_init(e, 2);
    const std::int64_t block = e.numel();
    for (std::int64_t i = 0; i < block; ++i) {
        CHECK(c2.flat(i) == 0.0);                    // slice 0
        CHECK(c2.flat(block + i) == e.flat(i));      // slice 1 = floor(2/2)
    }
    // exactly (t-1)*block zero entries
    Tensor c5 = central_frame_init(e, 5);
    std::int64_t zeros = 0;
    for (std::int64_t i = 0; i < c5.numel(); ++i) zeros += (c5.flat(i) == 0.0) ? 1 : 0;
    CHECK(zeros == 4 * block);

    CHECK(bitwise_equal(central_frame_init(e, 1), inflate_embedding(e, 1)));
}

TEST_CASE("central-frame tubelets equal uniform sampling of the centre frames exactly") {
    RngState rng{73, 0};
    const std::int64_t T = 8, H = 8, W = 8, C = 1, d = 5, t = 2;
    Tensor clip = random_tensor({T, H, W, C}, rng, Dtype::F32, 0.0, 1.0);
    Tensor e2d = random_tensor({4, 4, C, d}, rng);

    EmbeddingWeights w3d;
    w3d.projection = central_frame_init(e2d, t);
    TokenGrid tube = tubelet_embed(VideoClip{clip}, w3d, {t, 4, 4});

    // centre frame of tubelet i is i*t + floor(t/2)
    const std::int64_t nt = T / t;
    std::vector<std::int64_t> centres;
    for (std::int64_t i = 0; i < nt; ++i) centres.push_back(i * t + t / 2);
    Tensor centre_frames = op::index_select(clip, 0, centres);
    EmbeddingWeights w2d;
    w2d.projection = e2d;
    TokenGrid sampled = uniform_frame_embed(VideoClip{centre_frames}, w2d, nt);

    CHECK(tube.grid == sampled.grid);
    for (std::int64_t i = 0; i < tube.tokens.numel(); ++i) {
        CHECK(tube.tokens.flat(i) == sampled.tokens.flat(i));
    }
}

TEST_CASE("repeat_positional tiles temporal-major") {
    RngState rng{74, 0};
    Tensor p = random_tensor({4, 3}, rng);
    CHECK(bitwise_equal(repeat_positional(p, 1), p));

    Tensor r = repeat_positional(p, 3);
    CHECK(r.shape() == Shape{12, 3});
    for (std::int64_t t = 0; t < 3; ++t)
        for (std::int64_t s = 0; s < 4; ++s)
            for (std::int64_t j = 0; j < 3; ++j) {
                CHECK(r.flat((t * 4 + s) * 3 + j) == p.flat(s * 3 + j));
            }

    // streaming mean of the copies recovers the table exactly
    for (std::int64_t s = 0; s < 4; ++s)
        for (std::int64_t j = 0; j < 3; ++j) {
            double mean = 0;
            for (std::int64_t t = 0; t < 3; ++t) {
                mean += (r.flat((t * 4 + s) * 3 + j) - mean) / static_cast<double>(t + 1);
            }
            CHECK(mean == p.flat(s * 3 + j));
        }
}

TEST_CASE("variant-3 zero temporal init behaves as a residual pass-through") {
    ModelConfig cfg = video_config(3);
    RngState rng{75, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F32);
    init_model3_temporal(m);

    RngState data_rng{76, 0};
    Tensor frames = random_tensor({8, 8, 8, 1}, data_rng, Dtype::F32, 0.0, 1.0);
    Tensor with_temporal = forward(m, VideoClip{frames})[0];

    // oracle: delete the temporal stage entirely (spatial MSA + MLP only)
    TokenGrid g = tubelet_embed(VideoClip{frames}, m.embedding, cfg.tubelet);
    const std::int64_t nt = g.grid.nt, ns = g.grid.nh * g.grid.nw, d = cfg.embed_dim;
    Tensor seq = assemble_sequence(g, m.embedding, false);
    seq = op::reshape(seq, {nt, ns, d});
    for (const auto& layer : m.layers) {
        Tensor ys = op::add(msa(op::layernorm(seq, layer.ln1.gamma, layer.ln1.beta), layer.msa), seq);
        seq = op::add(mlp(op::layernorm(ys, layer.ln2.gamma, layer.ln2.beta), layer.mlp), ys);
    }
    seq = op::layernorm(op::reshape(seq, {nt * ns, d}), m.final_ln.gamma, m.final_ln.beta);
    Tensor pooled = op::reshape(op::mean_axis(seq, 0), {1, d});
    Tensor expect = op::reshape(op::linear(pooled, m.heads[0].w, m.heads[0].b), {3});
    for (int i = 0; i < 3; ++i) CHECK(with_temporal.flat(i) == expect.flat(i));

    // wrong variant is rejected
    ModelConfig cfg1 = video_config(1);
    RngState rng1{77, 0};
    ViViTModel m1 = build_model(cfg1, rng1, Dtype::F32);
    CHECK_THROWS_AS(init_model3_temporal(m1), ValueError);
}

TEST_CASE("zeroed temporal MSA still receives gradient on a motion-dependent loss") {
    ModelConfig cfg = video_config(3);
    cfg.num_classes = {2};
    RngState rng{78, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F64);
    init_model3_temporal(m);

    for (auto& [name, t] : named_parameters(m)) t->set_requires_grad(true);
    RngState data_rng{79, 0};
    Tensor frames = random_tensor({8, 8, 8, 1}, data_rng, Dtype::F64, 0.0, 1.0);

    Tape tape;
    double temporal_grad_norm = 0;
    {
        TapeScope scope(tape);
        Tensor logits = forward(m, VideoClip{frames})[0];
        Tensor target = Tensor::from_values({1, 2}, {1, 0}, Dtype::F64);
        Tensor loss = op::scale(op::sum_all(op::mul(target, op::log_softmax(op::reshape(logits, {1, 2})))), -1.0);
        tape.backward(loss);
    }
    for (auto& layer : m.layers) {
        for (Tensor* t : {&layer.temporal_msa->wq, &layer.temporal_msa->bq, &layer.temporal_msa->wo,
                          &layer.temporal_msa->bo, &layer.temporal_msa->wv, &layer.temporal_msa->bv}) {
            Tensor g = t->grad();
            if (!g.defined()) continue;
            for (std::int64_t i = 0; i < g.numel(); ++i) temporal_grad_norm += std::abs(g.flat(i));
        }
    }
    CHECK(temporal_grad_norm > 0.0);
}

TEST_CASE("checkpoint save/load round-trips bitwise and validates") {
    ModelConfig cfg = video_config(2);
    RngState rng{80, 0};
    ViViTModel m = build_model(cfg, rng, Dtype::F32);
    const std::string base = temp_base("roundtrip");

    Checkpoint ckpt = checkpoint_of(m);
    save_checkpoint(ckpt, base);
    Checkpoint loaded = load_checkpoint(base);
    ViViTModel restored = model_from_checkpoint(loaded, cfg);

    auto pa = named_parameters(m);
    auto pb = named_parameters(restored);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CAPTURE(pa[i].first);
        CHECK(bitwise_equal(*pa[i].second, *pb[i].second));
    }

    // zeroed tensors survive a save/load cycle bitwise
    ModelConfig cfg3 = video_config(3);
    RngState rng3{81, 0};
    ViViTModel m3 = build_model(cfg3, rng3, Dtype::F32);
    init_model3_temporal(m3);
    const std::string base3 = temp_base("zeros");
    save_checkpoint(checkpoint_of(m3), base3);
    ViViTModel m3b = model_from_checkpoint(load_checkpoint(base3), cfg3);
    for (auto& layer : m3b.layers) {
        for (std::int64_t i = 0; i < layer.temporal_msa->wq.numel(); ++i) {
            CHECK(layer.temporal_msa->wq.flat(i) == 0.0);
        }
    }

    std::remove((base + ".manifest").c_str());
    std::remove((base + ".blob").c_str());
    std::remove((base3 + ".manifest").c_str());
    std::remove((base3 + ".blob").c_str());
}

TEST_CASE("corrupt checkpoints are rejected with the offending entry named") {
    const std::string base = temp_base("corrupt");
    {
        Checkpoint ckpt;
        RngState rng{82, 0};
        ckpt.add("alpha", random_tensor({2, 3}, rng));
        ckpt.add("beta", random_tensor({4}, rng));
        save_checkpoint(ckpt, base);
    }

    SUBCASE("truncated blob") {
        std::ifstream in(base + ".blob", std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(base + ".blob", std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 8));
        out.close();
        try {
            load_checkpoint(base);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("beta") != std::string::npos);
        }
    }

    SUBCASE("overlapping entries") {
        std::ofstream mf(base + ".manifest", std::ios::trunc);
        mf << "alpha\tf32\t2,3\t0\t24\n";
        mf << "beta\tf32\t4\t12\t16\n";
        mf.close();
        CHECK_THROWS_AS(load_checkpoint(base), CheckpointError);
    }

    SUBCASE("shape/byte disagreement") {
        std::ofstream mf(base + ".manifest", std::ios::trunc);
        mf << "alpha\tf32\t2,3\t0\t20\n";
        mf.close();
        CHECK_THROWS_AS(load_checkpoint(base), CheckpointError);
    }

    SUBCASE("duplicate names") {
        std::ofstream mf(base + ".manifest", std::ios::trunc);
        mf << "alpha\tf32\t2,3\t0\t24\n";
        mf << "alpha\tf32\t4\t24\t16\n";
        mf.close();
        CHECK_THROWS_AS(load_checkpoint(base), CheckpointError);
    }

    std::remove((base + ".manifest").c_str());
    std::remove((base + ".blob").c_str());
}

TEST_CASE("load_pretrained: degenerate video model reproduces the image model") {
    ModelConfig img_cfg = image_config();
    RngState rng{83, 0};
    ViViTModel image_model = build_model(img_cfg, rng, Dtype::F32);
    Checkpoint ckpt = checkpoint_of(image_model);

    // video model with t=1 on single-frame clips
    ModelConfig vid_cfg = img_cfg;
    vid_cfg.embed_method = EmbedMethod::Tubelet;
    vid_cfg.tubelet = {1, 4, 4};
    RngState load_rng{84, 0};
    ViViTModel video_model = load_pretrained(ckpt, vid_cfg, EmbedInit::Central, load_rng);

    RngState data_rng{85, 0};
    Tensor frame = random_tensor({1, 8, 8, 1}, data_rng, Dtype::F32, 0.0, 1.0);
    Tensor img_logits = forward(image_model, VideoClip{frame})[0];
    // heads are freshly initialised, so compare through the image head
    video_model.heads = image_model.heads;
    Tensor vid_logits = forward(video_model, VideoClip{frame})[0];
    for (int i = 0; i < 3; ++i) CHECK(std::abs(img_logits.flat(i) - vid_logits.flat(i)) < 1e-6);
}

TEST_CASE("load_pretrained is idempotent and respects the chosen strategy") {
    ModelConfig img_cfg = image_config();
    RngState rng{86, 0};
    ViViTModel image_model = build_model(img_cfg, rng, Dtype::F32);
    Checkpoint ckpt = checkpoint_of(image_model);

    ModelConfig vid_cfg = video_config(1);
    const RngState fresh{87, 0};
    ViViTModel a = load_pretrained(ckpt, vid_cfg, EmbedInit::Inflate, fresh);
    ViViTModel b = load_pretrained(ckpt, vid_cfg, EmbedInit::Inflate, fresh);
    auto pa = named_parameters(a);
    auto pb = named_parameters(b);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bitwise_equal(*pa[i].second, *pb[i].second));

    // inflation: temporal slices of the filter sum to the image filter
    const std::int64_t block = image_model.embedding.projection.numel();
    for (std::int64_t i = 0; i < block; ++i) {
        double acc = 0;
        for (std::int64_t s = 0; s < vid_cfg.tubelet.t; ++s) {
            acc += a.embedding.projection.flat(s * block + i);
        }
        CHECK(acc == doctest::Approx(image_model.embedding.projection.flat(i)).epsilon(1e-6));
    }

    // positional rows with the same spatial index are bitwise equal
    const std::int64_t ns = 4, d = vid_cfg.embed_dim;
    for (std::int64_t t = 0; t < 4; ++t)
        for (std::int64_t s = 0; s < ns; ++s)
            for (std::int64_t j = 0; j < d; ++j) {
                CHECK(a.embedding.pos.flat((1 + t * ns + s) * d + j) ==
                      a.embedding.pos.flat((1 + s) * d + j));
            }

    // random strategy keeps the fresh filter: different from both image-derived forms
    ViViTModel r = load_pretrained(ckpt, vid_cfg, EmbedInit::Random, fresh);
    CHECK_FALSE(bitwise_equal(r.embedding.projection, a.embedding.projection));

    // spatial-grid mismatch is rejected, naming the offending tensor
    ModelConfig wrong = vid_cfg;
    wrong.height = 12;  // 3x2 grid instead of 2x2
    try {
        load_pretrained(ckpt, wrong, EmbedInit::Inflate, fresh);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("embed.pos") != std::string::npos);
    }
}

TEST_CASE("repeated positional rows diverge after one motion-dependent training step") {
    ModelConfig img_cfg = image_config();
    RngState rng{88, 0};
    ViViTModel image_model = build_model(img_cfg, rng, Dtype::F32);
    Checkpoint ckpt = checkpoint_of(image_model);

    ModelConfig vid_cfg = video_config(1);
    ViViTModel m = load_pretrained(ckpt, vid_cfg, EmbedInit::Central, RngState{89, 0});

    const std::int64_t ns = 4, d = vid_cfg.embed_dim;
    const auto row_gap = [&](const Tensor& pos, std::int64_t s) {
        // distance between temporal copies 0 and 1 of spatial row s (cls row offset 1)
        double total = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double a = pos.flat((1 + s) * d + j);
            const double b = pos.flat((1 + ns + s) * d + j);
            total += std::abs(a - b);
        }
        return total;
    };
    for (std::int64_t s = 0; s < ns; ++s) CHECK(row_gap(m.embedding.pos, s) == 0.0);

    // one SGD step on a clip whose content moves over time
    RngState data_rng{90, 0};
    Tensor frames = random_tensor({8, 8, 8, 1}, data_rng, Dtype::F32, 0.0, 1.0);
    Tensor target = Tensor::from_values({1, 3}, {0, 1, 0}, Dtype::F32);
    auto params = named_parameters(m);
    for (auto& [name, t] : params) t->set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor logits = forward(m, VideoClip{frames})[0];
        Tensor loss = op::scale(
            op::sum_all(op::mul(target, op::log_softmax(op::reshape(logits, {1, 3})))), -1.0);
        tape.backward(loss);
    }
    Tensor grad = m.embedding.pos.grad();
    REQUIRE(grad.defined());
    Tensor velocity;
    Tensor updated = sgd_momentum_update(m.embedding.pos, grad, velocity, 0.1, 0.0);
    double diverged = 0;
    for (std::int64_t s = 0; s < ns; ++s) {
        double total = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            total += std::abs(updated.flat((1 + s) * d + j) - updated.flat((1 + ns + s) * d + j));
        }
        diverged += total;
    }
    CHECK(diverged > 0.0);
}
