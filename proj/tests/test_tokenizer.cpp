// SPDX-License-Identifier: Apache-2.0
//
// tokenizer tests: frame sampling, tubelet gather, sequence assembly.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "vivit/ops.hpp"
#include "vivit/tokenizer.hpp"

using namespace vivit;
namespace op = vivit::ops;

namespace {

Tensor random_tensor(Shape shape, RngState& rng, Dtype dt = Dtype::F32, double lo = 0.0,
                     double hi = 1.0) {
    Tensor t = Tensor::zeros(shape, dt);
    if (dt == Dtype::F32) {
        for (auto& v : t.mutable_data<float>()) v = static_cast<float>(rng.uniform(lo, hi));
    } else {
        for (auto& v : t.mutable_data<double>()) v = rng.uniform(lo, hi);
    }
    return t;
}

}  // namespace

TEST_CASE("uniform frame indices follow floor(i*T/nt)") {
    CHECK(uniform_frame_indices(32, 8) == std::vector<std::int64_t>{0, 4, 8, 12, 16, 20, 24, 28});
    CHECK(uniform_frame_indices(8, 8) == std::vector<std::int64_t>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(uniform_frame_indices(10, 3) == std::vector<std::int64_t>{0, 3, 6});
    CHECK_THROWS_AS(uniform_frame_indices(4, 8), ValueError);
}

TEST_CASE("grid arithmetic uses floors") {
    CHECK(grid_for({32, 224, 224, 3}, {2, 16, 16}) == GridDims{16, 14, 14});
    CHECK(grid_for({224, 224, 224, 3}, {1, 16, 16}).nh * grid_for({224, 224, 224, 3}, {1, 16, 16}).nw ==
          196);
    // remainder frames dropped
    CHECK(grid_for({33, 224, 224, 3}, {2, 16, 16}).nt == 16);
    CHECK_THROWS_AS(grid_for({4, 8, 8, 1}, {8, 4, 4}), ShapeError);
}

TEST_CASE("tubelet embedding matches explicit gather-then-matmul oracle bitwise") {
    RngState rng{21, 0};
    const std::int64_t T = 4, H = 8, W = 8, C = 1, d = 6;
    const TubeletShape tub{2, 4, 4};
    Tensor clip = random_tensor({T, H, W, C}, rng);
    Tensor proj = random_tensor({tub.t, tub.h, tub.w, C, d}, rng, Dtype::F32, -1.0, 1.0);

    EmbeddingWeights w;
    w.projection = proj;
    TokenGrid grid = tubelet_embed(VideoClip{clip}, w, tub);
    CHECK(grid.grid == GridDims{2, 2, 2});
    CHECK(grid.tokens.shape() == Shape{2, 2, 2, d});

    // oracle: loop every tubelet, accumulate the projection directly
    auto cv = clip.data<float>();
    auto pv = proj.data<float>();
    for (std::int64_t it = 0; it < 2; ++it)
        for (std::int64_t ih = 0; ih < 2; ++ih)
            for (std::int64_t iw = 0; iw < 2; ++iw)
                for (std::int64_t j = 0; j < d; ++j) {
                    float acc = 0.0f;
                    for (std::int64_t dt = 0; dt < tub.t; ++dt)
                        for (std::int64_t dh = 0; dh < tub.h; ++dh)
                            for (std::int64_t dw = 0; dw < tub.w; ++dw)
                                for (std::int64_t c = 0; c < C; ++c) {
                                    const std::int64_t ci =
                                        ((it * tub.t + dt) * H + (ih * tub.h + dh)) * W * C +
                                        (iw * tub.w + dw) * C + c;
                                    const std::int64_t pi =
                                        ((dt * tub.h + dh) * tub.w + dw) * C * d + c * d + j;
                                    acc += cv[ci] * pv[pi];
                                }
                    const std::int64_t oi = ((it * 2 + ih) * 2 + iw) * d + j;
                    CHECK(grid.tokens.data<float>()[oi] == acc);
                }
}

TEST_CASE("tubelet t=1 equals uniform sampling of every frame") {
    RngState rng{22, 0};
    const std::int64_t T = 3, H = 8, W = 8, C = 2, d = 5;
    Tensor clip = random_tensor({T, H, W, C}, rng);
    Tensor proj2d = random_tensor({4, 4, C, d}, rng, Dtype::F32, -1.0, 1.0);

    EmbeddingWeights w2d;
    w2d.projection = proj2d;
    TokenGrid uni = uniform_frame_embed(VideoClip{clip}, w2d, T);

    EmbeddingWeights w3d;
    w3d.projection = op::reshape(proj2d, {1, 4, 4, C, d});
    TokenGrid tube = tubelet_embed(VideoClip{clip}, w3d, {1, 4, 4});

    CHECK(uni.grid == tube.grid);
    auto a = uni.tokens.data<float>();
    auto b = tube.tokens.data<float>();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("uniform sampling with nt=T embeds each frame like a single image") {
    RngState rng{23, 0};
    const std::int64_t T = 2, H = 8, W = 8, C = 1, d = 4;
    Tensor clip = random_tensor({T, H, W, C}, rng);
    Tensor proj2d = random_tensor({4, 4, C, d}, rng, Dtype::F32, -1.0, 1.0);
    EmbeddingWeights w;
    w.projection = proj2d;
    TokenGrid all = uniform_frame_embed(VideoClip{clip}, w, T);

    for (std::int64_t f = 0; f < T; ++f) {
        Tensor frame = op::slice(clip, {f, 0, 0, 0}, {1, H, W, C});
        TokenGrid single = uniform_frame_embed(VideoClip{op::reshape(frame, {1, H, W, C})}, w, 1);
        Tensor from_clip = op::slice(all.tokens, {f, 0, 0, 0}, {1, 2, 2, d});
        auto a = from_clip.data<float>();
        auto b = single.tokens.data<float>();
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("assemble_sequence flattening order and cls row") {
    const std::int64_t d = 3;
    // grid (2,2,2): token value encodes its (t,h,w) coordinate
    Tensor tokens = Tensor::zeros({2, 2, 2, d}, Dtype::F32);
    {
        auto tv = tokens.mutable_data<float>();
        for (std::int64_t t = 0; t < 2; ++t)
            for (std::int64_t h = 0; h < 2; ++h)
                for (std::int64_t w = 0; w < 2; ++w)
                    for (std::int64_t j = 0; j < d; ++j)
                        tv[((t * 2 + h) * 2 + w) * d + j] = static_cast<float>(t * 100 + h * 10 + w);
    }
    TokenGrid grid{tokens, Tensor(), GridDims{2, 2, 2}};

    EmbeddingWeights w;
    w.pos = Tensor::zeros({8, d}, Dtype::F32);
    Tensor seq = assemble_sequence(grid, w, false);
    CHECK(seq.shape() == Shape{8, d});
    // zero positional table: output equals flattened tokens
    CHECK(seq.flat(5 * d) == doctest::Approx(101.0));  // (t=1,h=0,w=1) -> index 1*4 + 0*2 + 1 = 5
    CHECK(seq.flat(0) == doctest::Approx(0.0));
    CHECK(seq.flat(7 * d) == doctest::Approx(111.0));

    // with cls: row 0 equals cls token + pos row 0
    RngState rng{24, 0};
    EmbeddingWeights wc;
    wc.pos = random_tensor({9, d}, rng);
    wc.cls_token = random_tensor({d}, rng);
    Tensor seq_cls = assemble_sequence(grid, wc, true);
    CHECK(seq_cls.shape() == Shape{9, d});
    for (std::int64_t j = 0; j < d; ++j) {
        CHECK(seq_cls.flat(j) ==
              doctest::Approx(wc.cls_token.flat(j) + wc.pos.flat(j)).epsilon(1e-7));
    }
    // token rows shift down by one
    for (std::int64_t j = 0; j < d; ++j) {
        CHECK(seq_cls.flat((5 + 1) * d + j) ==
              doctest::Approx(101.0 + wc.pos.flat((5 + 1) * d + j)).epsilon(1e-6));
    }

    // wrong positional row count is rejected
    EmbeddingWeights bad;
    bad.pos = Tensor::zeros({7, d}, Dtype::F32);
    CHECK_THROWS_AS(assemble_sequence(grid, bad, false), ShapeError);
}

TEST_CASE("token count invariant and patch permutation locality") {
    RngState rng{25, 0};
    const std::int64_t T = 4, H = 8, W = 8, C = 1, d = 4;
    const TubeletShape tub{2, 4, 4};
    Tensor clip = random_tensor({T, H, W, C}, rng);
    Tensor proj = random_tensor({tub.t, tub.h, tub.w, C, d}, rng, Dtype::F32, -1.0, 1.0);
    EmbeddingWeights w;
    w.projection = proj;

    TokenGrid g = tubelet_embed(VideoClip{clip}, w, tub);
    CHECK(g.tokens.numel() == g.grid.token_count() * d);

    // swap the contents of tubelets (0,0,0) and (0,1,1); the corresponding
    // pre-positional tokens swap and every other token is untouched
    Tensor swapped = clip.clone();
    {
        auto sv = swapped.mutable_data<float>();
        auto ov = clip.data<float>();
        for (std::int64_t dt = 0; dt < tub.t; ++dt)
            for (std::int64_t dh = 0; dh < tub.h; ++dh)
                for (std::int64_t dw = 0; dw < tub.w; ++dw) {
                    const auto at = [&](std::int64_t bt, std::int64_t bh, std::int64_t bw) {
                        return ((bt * tub.t + dt) * H + (bh * tub.h + dh)) * W * C +
                               (bw * tub.w + dw) * C;
                    };
                    sv[at(0, 0, 0)] = ov[at(0, 1, 1)];
                    sv[at(0, 1, 1)] = ov[at(0, 0, 0)];
                }
    }
    TokenGrid gs = tubelet_embed(VideoClip{swapped}, w, tub);
    auto tok = [&](const TokenGrid& tg, std::int64_t t, std::int64_t h, std::int64_t ww,
                   std::int64_t j) {
        return tg.tokens.data<float>()[((t * tg.grid.nh + h) * tg.grid.nw + ww) * d + j];
    };
    for (std::int64_t j = 0; j < d; ++j) {
        CHECK(tok(gs, 0, 0, 0, j) == tok(g, 0, 1, 1, j));
        CHECK(tok(gs, 0, 1, 1, j) == tok(g, 0, 0, 0, j));
        CHECK(tok(gs, 1, 0, 1, j) == tok(g, 1, 0, 1, j));
        CHECK(tok(gs, 1, 1, 0, j) == tok(g, 1, 1, 0, j));
    }
}

TEST_CASE("gradients flow through the embedding projection") {
    RngState rng{26, 0};
    Tensor clip = random_tensor({2, 4, 4, 1}, rng, Dtype::F64);
    Tensor proj = random_tensor({1, 2, 2, 1, 3}, rng, Dtype::F64, -1.0, 1.0);
    proj.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor clips = op::reshape(clip, {1, 2, 4, 4, 1});
        Tensor tokens = tubelet_embed_batch(clips, proj, {1, 2, 2});
        tape.backward(op::sum_all(tokens));
    }
    Tensor g = proj.grad();
    REQUIRE(g.defined());
    // d(sum)/dE[j] = sum of the matching patch inputs over all tubelets
    double total = 0;
    for (std::int64_t i = 0; i < g.numel(); ++i) total += std::abs(g.flat(i));
    CHECK(total > 0.0);
}
