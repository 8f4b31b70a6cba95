// SPDX-License-Identifier: Apache-2.0
#include "vivit/analysis.hpp"

#include <iomanip>
#include <sstream>

namespace vivit {

namespace {

std::int64_t linear_params(std::int64_t in, std::int64_t out) { return in * out + out; }

std::int64_t msa_params(std::int64_t d) { return 4 * (d * d + d); }

std::int64_t layer_params(const ModelConfig& cfg) {
    const std::int64_t d = cfg.embed_dim;
    const std::int64_t m = cfg.mlp_width();
    std::int64_t p = msa_params(d) + 2 * (2 * d) + linear_params(d, m) + linear_params(m, d);
    if (cfg.variant == 3) p += msa_params(d) + 2 * d;  // temporal MSA + its pre-norm
    return p;
}

// ---- flop pieces, mirroring the forward pass ------------------------------

std::int64_t ln_flops(std::int64_t rows, std::int64_t d) {
    return kFlopsPerLayernormElement * rows * d;
}

// B sequences of length S at width d, h heads: the four projections plus the
// score/softmax/AV data path and the residual add.
std::int64_t msa_flops(std::int64_t b, std::int64_t s, std::int64_t d, std::int64_t h) {
    const std::int64_t tokens = b * s;
    std::int64_t f = 4 * (kFlopsPerMac * tokens * d * d + tokens * d);  // q,k,v,o (+bias)
    f += kFlopsPerMac * b * s * s * d;                                  // Q K^T over all heads
    f += b * h * s * s;                                                 // 1/sqrt(dk) scale
    f += kFlopsPerSoftmaxElement * b * h * s * s;
    f += kFlopsPerMac * b * s * s * d;  // weights . V
    f += tokens * d;                    // residual
    return f;
}

std::int64_t mlp_flops(std::int64_t tokens, std::int64_t d, std::int64_t m) {
    std::int64_t f = ln_flops(tokens, d);
    f += kFlopsPerMac * tokens * d * m + tokens * m;  // in-projection
    f += kFlopsPerGeluElement * tokens * m;
    f += kFlopsPerMac * tokens * m * d + tokens * d;  // out-projection
    f += tokens * d;                                  // residual
    return f;
}

std::int64_t head_flops(std::int64_t d, std::int64_t classes) {
    return kFlopsPerMac * d * classes + classes;
}

// variant 4: the projections cover all tokens; half the heads score against
// ns keys, half against nt keys.
std::int64_t factorised_dot_attention_flops(const GridDims& g, std::int64_t d, std::int64_t h) {
    const std::int64_t n = g.token_count();
    const std::int64_t ns = g.nh * g.nw;
    const std::int64_t dk = d / h;
    std::int64_t f = 4 * (kFlopsPerMac * n * d * d + n * d);
    const std::int64_t half = h / 2;
    f += 2 * kFlopsPerMac * n * ns * dk * half;  // spatial scores + AV
    f += 2 * kFlopsPerMac * n * g.nt * dk * half;
    f += n * (ns + g.nt) * half;  // scale
    f += kFlopsPerSoftmaxElement * n * (ns + g.nt) * half;
    f += n * d;  // residual
    return f;
}

}  // namespace

std::int64_t count_params(const ModelConfig& cfg) {
    cfg.validate();
    const TokenCounts tokens = count_tokens(cfg);
    const std::int64_t d = cfg.embed_dim;
    const std::int64_t spatial = tokens.grid.nh * tokens.grid.nw;
    const std::int64_t cls = cfg.use_cls ? 1 : 0;

    std::int64_t p = 0;
    // embedding filter
    const std::int64_t patch_in = (cfg.embed_method == EmbedMethod::Tubelet)
                                      ? cfg.tubelet.t * cfg.tubelet.h * cfg.tubelet.w * cfg.channels
                                      : cfg.tubelet.h * cfg.tubelet.w * cfg.channels;
    p += patch_in * d;
    // positional table (+ cls token)
    p += ((cfg.variant == 2) ? spatial + cls : tokens.total + cls) * d;
    p += cls * d;
    // transformer stack + final norm
    p += cfg.num_layers * layer_params(cfg);
    p += 2 * d;
    // variant-2 temporal encoder
    if (cfg.variant == 2 && cfg.temporal_layers > 0) {
        ModelConfig plain = cfg;
        plain.variant = 1;
        p += cfg.temporal_layers * layer_params(plain);
        p += d;                           // temporal cls
        p += (tokens.grid.nt + 1) * d;    // temporal positions
        p += 2 * d;                       // temporal final norm
    }
    for (auto classes : cfg.num_classes) p += linear_params(d, classes);
    return p;
}

CostReport cost_report(const ModelConfig& cfg) {
    cfg.validate();
    CostReport report;
    report.tokens = count_tokens(cfg);
    report.params = count_params(cfg);

    const GridDims g = report.tokens.grid;
    const std::int64_t n = report.tokens.total;
    const std::int64_t spatial = g.nh * g.nw;
    const std::int64_t d = cfg.embed_dim;
    const std::int64_t m = cfg.mlp_width();
    const std::int64_t h = cfg.num_heads;
    const std::int64_t cls = cfg.use_cls ? 1 : 0;

    const std::int64_t patch_in = (cfg.embed_method == EmbedMethod::Tubelet)
                                      ? cfg.tubelet.t * cfg.tubelet.h * cfg.tubelet.w * cfg.channels
                                      : cfg.tubelet.h * cfg.tubelet.w * cfg.channels;
    report.breakdown.embedding = kFlopsPerMac * n * patch_in * d;  // token projection
    report.breakdown.embedding += (n + ((cfg.variant == 2) ? g.nt * cls : cls)) * d;  // + positions

    switch (cfg.variant) {
        case 1: {
            const std::int64_t s = n + cls;
            report.breakdown.attention = cfg.num_layers * (ln_flops(s, d) + msa_flops(1, s, d, h));
            report.breakdown.mlp = cfg.num_layers * mlp_flops(s, d, m);
            report.breakdown.heads = ln_flops(s, d);
            report.breakdown.heads += cfg.use_cls ? 0 : (s * d + d);  // GAP
            break;
        }
        case 2: {
            const std::int64_t s = spatial + cls;
            report.breakdown.attention =
                cfg.num_layers * (ln_flops(g.nt * s, d) + msa_flops(g.nt, s, d, h));
            report.breakdown.mlp = cfg.num_layers * mlp_flops(g.nt * s, d, m);
            report.breakdown.heads = ln_flops(g.nt * s, d);                    // spatial final norm
            report.breakdown.heads += cfg.use_cls ? 0 : g.nt * (s * d + d);    // per-frame GAP
            if (cfg.temporal_layers > 0) {
                const std::int64_t st = g.nt + 1;
                report.breakdown.attention +=
                    cfg.temporal_layers * (ln_flops(st, d) + msa_flops(1, st, d, h));
                report.breakdown.mlp += cfg.temporal_layers * mlp_flops(st, d, m);
                report.breakdown.heads += st * d;          // temporal positional add
                report.breakdown.heads += ln_flops(st, d);  // temporal final norm
            } else {
                report.breakdown.heads += g.nt * d + d;  // average pooling baseline
            }
            break;
        }
        case 3: {
            report.breakdown.attention =
                cfg.num_layers * (ln_flops(n, d) + msa_flops(g.nt, spatial, d, h) + ln_flops(n, d) +
                                  msa_flops(spatial, g.nt, d, h));
            report.breakdown.mlp = cfg.num_layers * mlp_flops(n, d, m);
            report.breakdown.heads = ln_flops(n, d) + (n * d + d);
            break;
        }
        case 4: {
            report.breakdown.attention =
                cfg.num_layers * (ln_flops(n, d) + factorised_dot_attention_flops(g, d, h));
            report.breakdown.mlp = cfg.num_layers * mlp_flops(n, d, m);
            report.breakdown.heads = ln_flops(n, d) + (n * d + d);
            break;
        }
    }
    for (auto classes : cfg.num_classes) report.breakdown.heads += head_flops(d, classes);

    report.flops = report.breakdown.embedding + report.breakdown.attention + report.breakdown.mlp +
                   report.breakdown.heads;
    return report;
}

std::int64_t count_flops(const ModelConfig& cfg) { return cost_report(cfg).flops; }

namespace {

std::string gflops_str(std::int64_t flops) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << static_cast<double>(flops) / 1e9;
    return os.str();
}

}  // namespace

std::string comparison_table(const std::vector<ModelConfig>& cfgs) {
    std::ostringstream os;
    os << std::left << std::setw(9) << "variant" << std::setw(9) << "tokens" << std::setw(13)
       << "params" << std::setw(11) << "gflops" << std::setw(12) << "embed_gf" << std::setw(12)
       << "attn_gf" << std::setw(12) << "mlp_gf" << std::setw(12) << "heads_gf" << '\n';
    for (const auto& cfg : cfgs) {
        const CostReport r = cost_report(cfg);
        os << std::left << std::setw(9) << cfg.variant << std::setw(9) << r.tokens.total
           << std::setw(13) << r.params << std::setw(11) << gflops_str(r.flops) << std::setw(12)
           << gflops_str(r.breakdown.embedding) << std::setw(12) << gflops_str(r.breakdown.attention)
           << std::setw(12) << gflops_str(r.breakdown.mlp) << std::setw(12)
           << gflops_str(r.breakdown.heads) << '\n';
    }
    return os.str();
}

std::string comparison_csv(const std::vector<ModelConfig>& cfgs) {
    std::ostringstream os;
    os << "variant,nt,nh,nw,tokens,params,flops,gflops,embed_flops,attn_flops,mlp_flops,heads_flops\n";
    for (const auto& cfg : cfgs) {
        const CostReport r = cost_report(cfg);
        os << cfg.variant << ',' << r.tokens.grid.nt << ',' << r.tokens.grid.nh << ','
           << r.tokens.grid.nw << ',' << r.tokens.total << ',' << r.params << ',' << r.flops << ','
           << gflops_str(r.flops) << ',' << r.breakdown.embedding << ',' << r.breakdown.attention
           << ',' << r.breakdown.mlp << ',' << r.breakdown.heads << '\n';
    }
    return os.str();
}

}  // namespace vivit
