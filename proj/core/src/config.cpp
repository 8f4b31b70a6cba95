// SPDX-License-Identifier: Apache-2.0
#include "vivit/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace vivit {

namespace {

using nlohmann::json;

// Tracks which keys a section consumed so leftovers can be reported by path.
class Section {
  public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + key + " has the wrong type");
        }
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ConfigError("unknown key '" + path_ + "." + it.key() + "'");
            }
        }
    }

  private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

ModelConfig parse_model(const json& j) {
    Section s(j, "model");
    ModelConfig cfg;
    const std::string backbone = s.get<std::string>("backbone", "custom");
    if (backbone == "B") {
        cfg = backbone_preset(Backbone::Base);
    } else if (backbone == "L") {
        cfg = backbone_preset(Backbone::Large);
    } else if (backbone == "H") {
        cfg = backbone_preset(Backbone::Huge);
    } else if (backbone == "custom") {
        cfg.backbone = Backbone::Custom;
    } else {
        throw ConfigError("model.backbone must be one of B, L, H, custom");
    }

    cfg.variant = s.get<int>("variant", 1);
    cfg.num_layers = s.get<std::int64_t>("layers", cfg.num_layers);
    cfg.num_heads = s.get<std::int64_t>("heads", cfg.num_heads);
    cfg.embed_dim = s.get<std::int64_t>("embed_dim", cfg.embed_dim);
    cfg.mlp_dim = s.get<std::int64_t>("mlp_dim", 0);
    cfg.temporal_layers = s.get<std::int64_t>("temporal_layers", 4);

    if (s.has("tubelet")) {
        const auto t = s.raw("tubelet").get<std::vector<std::int64_t>>();
        if (t.size() != 3) throw ConfigError("model.tubelet must be [t,h,w]");
        cfg.tubelet = {t[0], t[1], t[2]};
    }
    if (s.has("input")) {
        const auto d = s.raw("input").get<std::vector<std::int64_t>>();
        if (d.size() != 4) throw ConfigError("model.input must be [T,H,W,C]");
        cfg.frames = d[0];
        cfg.height = d[1];
        cfg.width = d[2];
        cfg.channels = d[3];
    }
    const std::string method = s.get<std::string>("embed_method", "tubelet");
    if (method == "tubelet") {
        cfg.embed_method = EmbedMethod::Tubelet;
    } else if (method == "uniform") {
        cfg.embed_method = EmbedMethod::UniformFrame;
    } else {
        throw ConfigError("model.embed_method must be 'tubelet' or 'uniform'");
    }
    cfg.use_cls = s.get<bool>("use_cls", cfg.variant <= 2);
    if (s.has("num_classes")) {
        cfg.num_classes = s.raw("num_classes").get<std::vector<std::int64_t>>();
    }
    s.finish();
    return cfg;
}

RegConfig parse_reg(const json& j) {
    Section s(j, "reg");
    RegConfig cfg;
    cfg.p_droplayer = s.get<double>("p_droplayer", 0.0);
    cfg.label_smoothing = s.get<double>("label_smoothing", 0.0);
    cfg.mixup_alpha = s.get<double>("mixup_alpha", 0.0);
    cfg.randaugment_layers = s.get<int>("randaugment_layers", 0);
    cfg.randaugment_magnitude = s.get<int>("randaugment_magnitude", 0);
    cfg.crop_prob = s.get<double>("crop_prob", 0.0);
    cfg.flip_prob = s.get<double>("flip_prob", 0.0);
    cfg.scale_jitter_prob = s.get<double>("scale_jitter_prob", 0.0);
    cfg.scale_min = s.get<double>("scale_min", 0.9);
    cfg.scale_max = s.get<double>("scale_max", 1.33);
    cfg.colour_jitter_prob = s.get<double>("colour_jitter_prob", 0.0);
    cfg.colour_min = s.get<double>("colour_min", 0.6);
    cfg.colour_max = s.get<double>("colour_max", 1.4);
    s.finish();
    return cfg;
}

DatasetSpec parse_dataset(const json& j, const ModelConfig& model) {
    Section s(j, "dataset");
    DatasetSpec spec;
    spec.frames = model.frames;
    spec.height = model.height;
    spec.width = model.width;
    spec.channels = model.channels;
    spec.num_train = s.get<std::int64_t>("num_train", 2000);
    spec.num_test = s.get<std::int64_t>("num_test", 400);
    spec.square = s.get<std::int64_t>("square", 6);
    spec.speed = s.get<std::int64_t>("speed", 2);
    spec.noise_sigma = s.get<double>("noise_sigma", 0.0);
    spec.seed = s.get<std::uint64_t>("seed", 7);
    s.finish();
    return spec;
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    Section top(root, "config");
    TrainConfig cfg;
    if (!top.has("model")) throw ConfigError("config needs a 'model' section");
    cfg.model = parse_model(top.raw("model"));

    if (top.has("train")) {
        Section s(top.raw("train"), "train");
        cfg.base_lr = s.get<double>("base_lr", cfg.base_lr);
        cfg.momentum = s.get<double>("momentum", cfg.momentum);
        cfg.batch_size = s.get<std::int64_t>("batch_size", cfg.batch_size);
        cfg.epochs = s.get<std::int64_t>("epochs", cfg.epochs);
        cfg.warmup_epochs = s.get<double>("warmup_epochs", cfg.warmup_epochs);
        cfg.seed = s.get<std::uint64_t>("seed", cfg.seed);
        cfg.early_stop_accuracy = s.get<double>("early_stop_accuracy", 0.0);
        s.finish();
    }
    if (top.has("reg")) cfg.reg = parse_reg(top.raw("reg"));
    if (top.has("dataset")) {
        cfg.dataset = parse_dataset(top.raw("dataset"), cfg.model);
    } else {
        cfg.dataset.frames = cfg.model.frames;
        cfg.dataset.height = cfg.model.height;
        cfg.dataset.width = cfg.model.width;
        cfg.dataset.channels = cfg.model.channels;
    }
    top.finish();
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_train_config(text);
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j;
    json& model = j["model"];
    model["variant"] = cfg.model.variant;
    model["backbone"] = "custom";
    model["layers"] = cfg.model.num_layers;
    model["heads"] = cfg.model.num_heads;
    model["embed_dim"] = cfg.model.embed_dim;
    model["mlp_dim"] = cfg.model.mlp_dim;
    model["temporal_layers"] = cfg.model.temporal_layers;
    model["tubelet"] = {cfg.model.tubelet.t, cfg.model.tubelet.h, cfg.model.tubelet.w};
    model["input"] = {cfg.model.frames, cfg.model.height, cfg.model.width, cfg.model.channels};
    model["embed_method"] = cfg.model.embed_method == EmbedMethod::Tubelet ? "tubelet" : "uniform";
    model["use_cls"] = cfg.model.use_cls;
    model["num_classes"] = cfg.model.num_classes;

    json& train = j["train"];
    train["base_lr"] = cfg.base_lr;
    train["momentum"] = cfg.momentum;
    train["batch_size"] = cfg.batch_size;
    train["epochs"] = cfg.epochs;
    train["warmup_epochs"] = cfg.warmup_epochs;
    train["seed"] = cfg.seed;
    train["early_stop_accuracy"] = cfg.early_stop_accuracy;

    json& reg = j["reg"];
    reg["p_droplayer"] = cfg.reg.p_droplayer;
    reg["label_smoothing"] = cfg.reg.label_smoothing;
    reg["mixup_alpha"] = cfg.reg.mixup_alpha;
    reg["randaugment_layers"] = cfg.reg.randaugment_layers;
    reg["randaugment_magnitude"] = cfg.reg.randaugment_magnitude;
    reg["crop_prob"] = cfg.reg.crop_prob;
    reg["flip_prob"] = cfg.reg.flip_prob;
    reg["scale_jitter_prob"] = cfg.reg.scale_jitter_prob;
    reg["scale_min"] = cfg.reg.scale_min;
    reg["scale_max"] = cfg.reg.scale_max;
    reg["colour_jitter_prob"] = cfg.reg.colour_jitter_prob;
    reg["colour_min"] = cfg.reg.colour_min;
    reg["colour_max"] = cfg.reg.colour_max;

    json& dataset = j["dataset"];
    dataset["num_train"] = cfg.dataset.num_train;
    dataset["num_test"] = cfg.dataset.num_test;
    dataset["square"] = cfg.dataset.square;
    dataset["speed"] = cfg.dataset.speed;
    dataset["noise_sigma"] = cfg.dataset.noise_sigma;
    dataset["seed"] = cfg.dataset.seed;

    return j.dump(2) + "\n";
}

}  // namespace vivit
