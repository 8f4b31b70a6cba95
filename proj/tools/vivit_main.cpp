// SPDX-License-Identifier: Apache-2.0
//
// vivit: train/evaluate the video-transformer variants on the synthetic
// motion task, analyze parameter/FLOP budgets, inflate image checkpoints.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "vivit/analysis.hpp"
#include "vivit/config.hpp"
#include "vivit/grad_check.hpp"
#include "vivit/init.hpp"
#include "vivit/train.hpp"

namespace fs = std::filesystem;
using namespace vivit;
namespace op = vivit::ops;

namespace {

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

ViewSpec parse_views(const std::string& text) {
    const auto sep = text.find('x');
    if (sep == std::string::npos) throw ValueError("views must look like '4x3'");
    ViewSpec views;
    views.temporal_views = std::stoll(text.substr(0, sep));
    views.spatial_crops = std::stoll(text.substr(sep + 1));
    return views;
}

// the image-model counterpart of a video config: one frame, 2-d patches
ModelConfig image_config_of(const ModelConfig& video) {
    ModelConfig cfg = video;
    cfg.variant = 1;
    cfg.frames = 1;
    cfg.tubelet.t = 1;
    cfg.embed_method = EmbedMethod::UniformFrame;
    cfg.use_cls = true;
    cfg.temporal_layers = 0;
    return cfg;
}

int run_train(const std::string& config_path, std::int64_t seed_override,
              const std::string& out_dir) {
    TrainConfig cfg = load_train_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);

    std::cout << "training variant " << cfg.model.variant << " for " << cfg.epochs
              << " epochs (seed " << cfg.seed << ")\n";
    TrainResult result = train(cfg);
    for (std::size_t e = 0; e < result.epoch_test_accuracy.size(); ++e) {
        std::cout << "epoch " << e << ": train_loss=" << result.epoch_train_loss[e]
                  << " test_acc=" << result.epoch_test_accuracy[e] << "\n";
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file(out_dir + "/metrics.log", result.metrics_log);
        write_file(out_dir + "/config.json", train_config_to_json(cfg));
        save_checkpoint(checkpoint_of(result.model), out_dir + "/model");
        std::cout << "wrote " << out_dir << "/{metrics.log, config.json, model.manifest, model.blob}\n";
    }
    return 0;
}

int run_eval(const std::string& ckpt_base, const std::string& views_text,
             const std::string& config_path) {
    std::string cfg_path = config_path;
    if (cfg_path.empty()) {
        cfg_path = (fs::path(ckpt_base).parent_path() / "config.json").string();
    }
    TrainConfig cfg = load_train_config(cfg_path);
    ViViTModel model = model_from_checkpoint(load_checkpoint(ckpt_base), cfg.model);
    const ViewSpec views = parse_views(views_text);

    const std::int64_t long_frames = cfg.dataset.frames * views.temporal_views;
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < cfg.dataset.num_test; ++i) {
        LabeledClip sample = make_long_sample(
            cfg.dataset, static_cast<std::uint64_t>(cfg.dataset.num_train + i), long_frames);
        std::vector<Tensor> logits = multi_view_infer(model, sample.frames, views);
        std::int64_t best = 0;
        for (std::int64_t k = 1; k < logits[0].numel(); ++k) {
            if (logits[0].flat(k) > logits[0].flat(best)) best = k;
        }
        if (best == sample.label) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(cfg.dataset.num_test);
    std::cout << "views " << views.temporal_views << "x" << views.spatial_crops << " accuracy "
              << acc << " (" << correct << "/" << cfg.dataset.num_test << ")\n";
    return 0;
}

int run_analyze(const std::string& config_path, const std::string& csv_path, bool all_variants) {
    TrainConfig cfg = load_train_config(config_path);
    std::vector<ModelConfig> cfgs;
    if (all_variants) {
        for (int v : {1, 2, 3, 4}) {
            ModelConfig c = cfg.model;
            c.variant = v;
            c.use_cls = cfg.model.use_cls && (v == 1 || v == 2);
            cfgs.push_back(c);
        }
    } else {
        cfgs.push_back(cfg.model);
    }
    std::cout << comparison_table(cfgs);
    if (!csv_path.empty()) {
        write_file(csv_path, comparison_csv(cfgs));
        std::cout << "wrote " << csv_path << "\n";
    }
    return 0;
}

int run_inflate(const std::string& image_ckpt, const std::string& config_path,
                const std::string& method_name, const std::string& out_base, std::int64_t seed) {
    TrainConfig cfg = load_train_config(config_path);
    EmbedInit method;
    if (method_name == "inflate") {
        method = EmbedInit::Inflate;
    } else if (method_name == "central") {
        method = EmbedInit::Central;
    } else {
        throw ValueError("method must be 'inflate' or 'central'");
    }
    Checkpoint image = load_checkpoint(image_ckpt);
    ViViTModel model =
        load_pretrained(image, cfg.model, method, RngState{static_cast<std::uint64_t>(seed), 0});
    save_checkpoint(checkpoint_of(model), out_base);
    std::cout << "inflated " << image_ckpt << " -> " << out_base << " (" << method_name << ")\n";
    return 0;
}

int run_make_image_ckpt(const std::string& config_path, const std::string& out_base,
                        std::int64_t seed) {
    TrainConfig cfg = load_train_config(config_path);
    ModelConfig img = image_config_of(cfg.model);
    RngState rng{static_cast<std::uint64_t>(seed), 0};
    ViViTModel model = build_model(img, rng, Dtype::F32);
    save_checkpoint(checkpoint_of(model), out_base);
    std::cout << "wrote image checkpoint " << out_base << " (" << img.num_layers << " layers, d="
              << img.embed_dim << ")\n";
    return 0;
}

int run_gradcheck(std::uint64_t seed) {
    RngState rng{seed, 0};
    bool ok = true;
    const auto report = [&ok](const std::string& name, double err, double limit) {
        const bool pass = err < limit;
        ok = ok && pass;
        std::cout << (pass ? "  ok   " : "  FAIL ") << name << "  max_rel_err=" << err << "\n";
    };

    {
        Tensor w = Tensor::zeros({6, 4}, Dtype::F64);
        Tensor b = Tensor::zeros({4}, Dtype::F64);
        for (auto& v : w.mutable_data<double>()) v = rng.uniform(-1, 1);
        for (auto& v : b.mutable_data<double>()) v = rng.uniform(-1, 1);
        Tensor g = Tensor::full({6}, 1.0, Dtype::F64);
        Tensor beta = Tensor::zeros({6}, Dtype::F64);
        Tensor x = Tensor::zeros({3, 6}, Dtype::F64);
        for (auto& v : x.mutable_data<double>()) v = rng.uniform(-1, 1);

        std::cout << "primitive ops:\n";
        report("matmul+gelu", grad_check([&](const Tensor& t) {
                   return op::sum_all(op::gelu(op::linear(t, w, b)));
               }, x), 1e-5);
        report("softmax", grad_check([&](const Tensor& t) {
                   return op::sum_all(op::mul(t, op::softmax(t)));
               }, x), 1e-5);
        report("layernorm", grad_check([&](const Tensor& t) {
                   return op::sum_all(op::mul(t, op::layernorm(t, g, beta)));
               }, x), 1e-5);
        report("log_softmax", grad_check([&](const Tensor& t) {
                   return op::sum_all(op::mul(t, op::log_softmax(t)));
               }, x), 1e-5);
    }

    std::cout << "tiny models (L=2, d=16):\n";
    for (int variant : {1, 2, 3, 4}) {
        ModelConfig cfg;
        cfg.variant = variant;
        cfg.num_layers = 2;
        cfg.num_heads = 2;
        cfg.embed_dim = 16;
        cfg.mlp_dim = 32;
        cfg.temporal_layers = 2;
        cfg.tubelet = {2, 4, 4};
        cfg.frames = 4;
        cfg.height = 8;
        cfg.width = 8;
        cfg.channels = 1;
        cfg.use_cls = (variant <= 2);
        cfg.num_classes = {3};
        GradCheckReport r = full_model_grad_check(cfg, seed + static_cast<std::uint64_t>(variant));
        report("variant " + std::to_string(variant) + " (" + std::to_string(r.params_checked) +
                   " params, worst " + r.worst_param + ")",
               r.max_rel_error, 1e-5);
    }
    std::cout << (ok ? "all gradient checks passed\n" : "gradient checks FAILED\n");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ViViT video transformers: desk-scale training and analysis"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_base, views_text = "1x1", csv_path, method = "central";
    std::string image_ckpt, out_base = "inflated";
    std::int64_t seed = -1;
    bool all_variants = false;

    CLI::App* cmd_train = app.add_subcommand("train", "train on the synthetic motion dataset");
    cmd_train->add_option("--config", config_path, "JSON config")->required();
    cmd_train->add_option("--seed", seed, "override the config seed");
    cmd_train->add_option("--out", out_dir, "output directory for metrics and checkpoint");

    CLI::App* cmd_eval = app.add_subcommand("eval", "multi-view evaluation of a checkpoint");
    cmd_eval->add_option("--checkpoint", ckpt_base, "checkpoint base path")->required();
    cmd_eval->add_option("--views", views_text, "temporal x spatial views, e.g. 4x3");
    cmd_eval->add_option("--config", config_path, "config (default: config.json next to checkpoint)");

    CLI::App* cmd_analyze = app.add_subcommand("analyze", "parameter and FLOP accounting");
    cmd_analyze->add_option("--config", config_path, "JSON config")->required();
    cmd_analyze->add_option("--csv", csv_path, "also write CSV");
    cmd_analyze->add_flag("--all-variants", all_variants, "emit all four variants");

    CLI::App* cmd_inflate = app.add_subcommand("inflate", "initialise a video model from an image checkpoint");
    cmd_inflate->add_option("--image-ckpt", image_ckpt, "image checkpoint base path")->required();
    cmd_inflate->add_option("--config", config_path, "video model config")->required();
    cmd_inflate->add_option("--method", method, "inflate|central")->required();
    cmd_inflate->add_option("--out", out_base, "output checkpoint base path");
    cmd_inflate->add_option("--seed", seed, "seed for freshly initialised parameters");

    CLI::App* cmd_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    cmd_gradcheck->add_option("--seed", seed, "rng seed");

    CLI::App* cmd_mkimg = app.add_subcommand("make-image-ckpt",
                                             "write a randomly initialised image checkpoint");
    cmd_mkimg->add_option("--config", config_path, "video model config")->required();
    cmd_mkimg->add_option("--out", out_base, "output checkpoint base path")->required();
    cmd_mkimg->add_option("--seed", seed, "rng seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_train->parsed()) return run_train(config_path, seed, out_dir);
        if (cmd_eval->parsed()) return run_eval(ckpt_base, views_text, config_path);
        if (cmd_analyze->parsed()) return run_analyze(config_path, csv_path, all_variants);
        if (cmd_inflate->parsed()) {
            return run_inflate(image_ckpt, config_path, method, out_base, seed < 0 ? 1 : seed);
        }
        if (cmd_gradcheck->parsed()) {
            return run_gradcheck(seed < 0 ? 5 : static_cast<std::uint64_t>(seed));
        }
        if (cmd_mkimg->parsed()) {
            return run_make_image_ckpt(config_path, out_base, seed < 0 ? 1 : seed);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
