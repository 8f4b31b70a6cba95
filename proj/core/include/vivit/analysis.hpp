// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "vivit/model.hpp"

namespace vivit {

// FLOP accounting conventions. The ordering/ratio claims this module backs
// are insensitive to the absolute convention; these constants pin it down:
// one multiply-add counts as 2 FLOPs, plain adds (bias, residual, positional)
// as 1 per element, and the nonlinearities at fixed per-element costs.
inline constexpr std::int64_t kFlopsPerMac = 2;
inline constexpr std::int64_t kFlopsPerSoftmaxElement = 5;
inline constexpr std::int64_t kFlopsPerLayernormElement = 8;
inline constexpr std::int64_t kFlopsPerGeluElement = 10;

struct CostBreakdown {
    std::int64_t embedding = 0;  // token projection + positional add
    std::int64_t attention = 0;  // pre-norm, projections, scores, softmax, AV, residual
    std::int64_t mlp = 0;        // pre-norm, linears, gelu, residual
    std::int64_t heads = 0;      // final norms, pooling, classifiers
};

struct CostReport {
    std::int64_t params = 0;
    std::int64_t flops = 0;  // one forward pass, one view
    CostBreakdown breakdown;
    TokenCounts tokens;
};

// Closed-form count over the model's parameter namespace; matches the
// instantiated model tensor-by-tensor.
std::int64_t count_params(const ModelConfig& cfg);

// Forward-pass FLOPs for a single clip under the conventions above.
std::int64_t count_flops(const ModelConfig& cfg);

CostReport cost_report(const ModelConfig& cfg);

// Fixed column order: variant, tokens, params, gflops, then the breakdown.
std::string comparison_table(const std::vector<ModelConfig>& cfgs);
std::string comparison_csv(const std::vector<ModelConfig>& cfgs);

}  // namespace vivit
