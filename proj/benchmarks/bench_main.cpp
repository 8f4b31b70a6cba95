// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the kernels the training loop lives in.

#include <benchmark/benchmark.h>

#include "vivit/attention.hpp"
#include "vivit/model.hpp"
#include "vivit/tokenizer.hpp"
#include "vivit/train.hpp"

using namespace vivit;
namespace op = vivit::ops;

namespace {

Tensor randn(Shape shape, double stddev = 1.0) {
    RngState rng{1, 0};
    return Tensor::randn(std::move(shape), stddev, rng, Dtype::F32);
}

void BM_Matmul(benchmark::State& state) {
    const std::int64_t m = state.range(0), k = state.range(1), n = state.range(2);
    Tensor a = randn({m, k});
    Tensor b = randn({k, n});
    for (auto _ : state) {
        benchmark::DoNotOptimize(op::matmul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * 2 * m * k * n);
}
BENCHMARK(BM_Matmul)->Args({8320, 32, 32})->Args({512, 64, 256});

void BM_BatchedAttention(benchmark::State& state) {
    Tensor q = randn({128, 4, 65, 8});
    Tensor k = randn({128, 4, 65, 8});
    Tensor v = randn({128, 4, 65, 8});
    for (auto _ : state) {
        benchmark::DoNotOptimize(attention(q, k, v));
    }
}
BENCHMARK(BM_BatchedAttention);

void BM_TubeletEmbed(benchmark::State& state) {
    Tensor clips = randn({32, 8, 32, 32, 1}, 0.3);
    Tensor proj = randn({2, 4, 4, 1, 32});
    for (auto _ : state) {
        benchmark::DoNotOptimize(tubelet_embed_batch(clips, proj, {2, 4, 4}));
    }
}
BENCHMARK(BM_TubeletEmbed);

ModelConfig desk_config(int variant) {
    ModelConfig cfg;
    cfg.variant = variant;
    cfg.num_layers = 2;
    cfg.num_heads = 4;
    cfg.embed_dim = 32;
    cfg.mlp_dim = 128;
    cfg.temporal_layers = 2;
    cfg.tubelet = {2, 4, 4};
    cfg.frames = 8;
    cfg.height = 32;
    cfg.width = 32;
    cfg.channels = 1;
    cfg.use_cls = variant <= 2;
    cfg.num_classes = {4};
    return cfg;
}

void BM_ForwardDeskModel(benchmark::State& state) {
    const int variant = static_cast<int>(state.range(0));
    RngState rng{2, 0};
    ViViTModel m = build_model(desk_config(variant), rng, Dtype::F32);
    Tensor clips = randn({32, 8, 32, 32, 1}, 0.3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(forward_batch(m, clips, {}));
    }
}
BENCHMARK(BM_ForwardDeskModel)->Arg(1)->Arg(2)->Arg(3)->Arg(4);

void BM_TrainStep(benchmark::State& state) {
    RngState rng{3, 0};
    ViViTModel m = build_model(desk_config(2), rng, Dtype::F32);
    Tensor clips = randn({32, 8, 32, 32, 1}, 0.3);
    Tensor targets = Tensor::zeros({32, 4}, Dtype::F32);
    for (int i = 0; i < 32; ++i) targets.mutable_data<float>()[i * 4 + i % 4] = 1.0f;
    for (auto _ : state) {
        auto params = named_parameters(m);
        for (auto& [name, t] : params) t->set_requires_grad(true);
        Tape tape;
        {
            TapeScope scope(tape);
            auto logits = forward_batch(m, clips, {});
            tape.backward(cross_entropy(logits[0], targets));
        }
        for (auto& [name, t] : params) {
            t->set_requires_grad(false);
            t->zero_grad();
        }
    }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
