// SPDX-License-Identifier: Apache-2.0
#include "vivit/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vivit/grad_check.hpp"

namespace vivit {

namespace op = vivit::ops;

void TrainConfig::validate() const {
    if (base_lr <= 0) throw ValueError("base_lr must be positive");
    if (momentum < 0 || momentum >= 1) throw ValueError("momentum must be in [0,1)");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (epochs < 0) throw ValueError("epochs must be >= 0");
    if (epochs > 0 && warmup_epochs >= static_cast<double>(epochs)) {
        throw ValueError("warmup_epochs must be < epochs");
    }
    if (early_stop_accuracy < 0 || early_stop_accuracy > 1) {
        throw ValueError("early_stop_accuracy must be in [0,1]");
    }
    reg.validate();
    model.validate();
    dataset.validate();
    if (dataset.frames != model.frames || dataset.height != model.height ||
        dataset.width != model.width || dataset.channels != model.channels) {
        throw ValueError("dataset clip dims must match the model input dims");
    }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                 double base_lr) {
    if (step < 0 || step > total_steps) throw ValueError("cosine_lr: step outside [0, total]");
    if (warmup_steps >= total_steps) throw ValueError("cosine_lr: warmup must end before total");
    if (step < warmup_steps) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

Tensor sgd_momentum_update(const Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                           double momentum) {
    if (param.shape() != grad.shape()) {
        throw ShapeError("sgd update: grad shape " + shape_str(grad.shape()) +
                         " does not match param " + shape_str(param.shape()));
    }
    if (!velocity.defined()) velocity = Tensor::zeros(param.shape(), param.dtype());
    Tensor updated = Tensor::zeros(param.shape(), param.dtype());
    if (param.dtype() == Dtype::F32) {
        auto p = param.data<float>();
        auto g = grad.data<float>();
        auto v = velocity.mutable_data<float>();
        auto out = updated.mutable_data<float>();
        const float mu = static_cast<float>(momentum);
        const float step = static_cast<float>(lr);
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = mu * v[i] + g[i];
            out[i] = p[i] - step * v[i];
        }
    } else {
        auto p = param.data<double>();
        auto g = grad.data<double>();
        auto v = velocity.mutable_data<double>();
        auto out = updated.mutable_data<double>();
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = momentum * v[i] + g[i];
            out[i] = p[i] - lr * v[i];
        }
    }
    return updated;
}

Tensor cross_entropy(const Tensor& logits, const Tensor& soft_targets) {
    if (logits.shape() != soft_targets.shape()) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs targets " +
                         shape_str(soft_targets.shape()));
    }
    const std::int64_t batch = logits.numel() / logits.shape().back();
    Tensor per_element = op::mul(soft_targets, op::log_softmax(logits));
    return op::scale(op::sum_all(per_element), -1.0 / static_cast<double>(batch));
}

namespace {

Tensor stack_clips(const std::vector<Tensor>& clips) {
    const Shape& s = clips.front().shape();
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(clips.size()), s[0], s[1], s[2], s[3]},
                               Dtype::F32);
    auto dst = out.mutable_data<float>();
    const std::int64_t block = clips.front().numel();
    for (std::size_t i = 0; i < clips.size(); ++i) {
        auto src = clips[i].data<float>();
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::int64_t>(i) * block);
    }
    return out;
}

Tensor one_hot(std::int64_t label, std::int64_t classes) {
    Tensor t = Tensor::zeros({classes}, Dtype::F32);
    t.mutable_data<float>()[static_cast<std::size_t>(label)] = 1.0f;
    return t;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    const std::int64_t cols = rows.front().numel();
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(rows.size()), cols}, Dtype::F32);
    auto dst = out.mutable_data<float>();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = rows[i].data<float>();
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::int64_t>(i) * cols);
    }
    return out;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(10);
    os << std::scientific << v;
    return os.str();
}

}  // namespace

double evaluate_accuracy(const ViViTModel& m, const std::vector<LabeledClip>& clips,
                         std::int64_t batch_size) {
    if (clips.empty()) return 0.0;
    std::int64_t correct = 0;
    const std::int64_t classes = m.config.num_classes.front();
    for (std::size_t begin = 0; begin < clips.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(clips.size(), begin + static_cast<std::size_t>(batch_size));
        std::vector<Tensor> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(clips[i].frames);
        Tensor logits = forward_batch(m, stack_clips(batch), {})[0];
        for (std::size_t i = begin; i < end; ++i) {
            const std::int64_t row = static_cast<std::int64_t>(i - begin);
            std::int64_t best = 0;
            for (std::int64_t k = 1; k < classes; ++k) {
                if (logits.flat(row * classes + k) > logits.flat(row * classes + best)) best = k;
            }
            if (best == clips[i].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(clips.size());
}

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    const MotionDataset ds = generate_dataset(cfg.dataset);

    RngState root{cfg.seed, 0};
    RngState weights_rng = root.substream(0);
    RngState gate_rng = root.substream(1);
    RngState shuffle_rng = root.substream(2);
    RngState mix_rng = root.substream(3);
    const RngState aug_root = root.substream(4);

    TrainResult result;
    result.model = build_model(cfg.model, weights_rng, Dtype::F32);
    std::map<std::string, Tensor> velocity;

    const std::int64_t n_train = static_cast<std::int64_t>(ds.train.size());
    const std::int64_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = cfg.epochs * steps_per_epoch;
    const std::int64_t warmup_steps =
        std::llround(cfg.warmup_epochs * static_cast<double>(steps_per_epoch));

    std::ostringstream log;
    std::vector<std::int64_t> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

    const bool augment = cfg.reg.crop_prob > 0 || cfg.reg.flip_prob > 0 ||
                         cfg.reg.scale_jitter_prob > 0 || cfg.reg.colour_jitter_prob > 0;
    std::int64_t global_step = 0;

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates under the run seed
        for (std::int64_t i = n_train - 1; i > 0; --i) {
            const std::int64_t j =
                static_cast<std::int64_t>(shuffle_rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }

        double epoch_loss = 0.0;
        for (std::int64_t begin = 0; begin < n_train; begin += cfg.batch_size) {
            const std::int64_t end = std::min(n_train, begin + cfg.batch_size);
            const std::int64_t batch = end - begin;

            std::vector<Tensor> clips;
            std::vector<Tensor> targets;
            clips.reserve(static_cast<std::size_t>(batch));
            for (std::int64_t i = begin; i < end; ++i) {
                const LabeledClip& sample = ds.train[static_cast<std::size_t>(order[i])];
                VideoClip clip{sample.frames};
                if (augment) {
                    RngState aug_rng = aug_root.substream(
                        static_cast<std::uint64_t>(epoch * n_train + order[i]));
                    clip = geometric_augment(clip, aug_rng, cfg.reg);
                    if (cfg.reg.randaugment_layers > 0) {
                        clip = rand_augment(clip, cfg.reg.randaugment_layers,
                                            cfg.reg.randaugment_magnitude, aug_rng);
                    }
                }
                clips.push_back(clip.frames);
                Tensor target = one_hot(sample.label, cfg.model.num_classes.front());
                if (cfg.reg.label_smoothing > 0) {
                    target = label_smooth(target, cfg.reg.label_smoothing);
                }
                targets.push_back(target);
            }
            if (cfg.reg.mixup_alpha > 0 && batch > 1) {
                std::vector<Tensor> mixed_x, mixed_y;
                for (std::int64_t i = 0; i < batch; ++i) {
                    const std::int64_t j = (i + 1) % batch;
                    MixedSample mixed = mixup(clips[i], targets[i], clips[j], targets[j],
                                              cfg.reg.mixup_alpha, mix_rng);
                    mixed_x.push_back(mixed.input);
                    mixed_y.push_back(mixed.target);
                }
                clips = std::move(mixed_x);
                targets = std::move(mixed_y);
            }

            const double lr = cosine_lr(global_step, total_steps, warmup_steps, cfg.base_lr);
            double loss_value = 0.0;
            try {
                auto params = named_parameters(result.model);
                for (auto& [name, tensor] : params) tensor->set_requires_grad(true);

                Tape tape;
                {
                    TapeScope scope(tape);
                    ForwardOptions opts{true, cfg.reg.p_droplayer, &gate_rng};
                    std::vector<Tensor> logits = forward_batch(result.model, stack_clips(clips), opts);
                    Tensor target_mat = stack_rows(targets);
                    Tensor loss = cross_entropy(logits[0], target_mat);
                    for (std::size_t h = 1; h < logits.size(); ++h) {
                        loss = op::add(loss, cross_entropy(logits[h], target_mat));
                    }
                    loss_value = loss.item();
                    tape.backward(loss);
                }
                for (auto& [name, tensor] : params) {
                    Tensor grad = tensor->grad();
                    if (!grad.defined()) continue;
                    *tensor = sgd_momentum_update(*tensor, grad, velocity[name], lr, cfg.momentum);
                    tensor->set_requires_grad(false);
                }
            } catch (const NumericError& e) {
                throw NumericError("training aborted at step " + std::to_string(global_step) +
                                   " (epoch " + std::to_string(epoch) + "): " + e.what());
            }

            epoch_loss += loss_value * static_cast<double>(batch);
            log << "step=" << global_step << " epoch=" << epoch << " lr=" << format_double(lr)
                << " loss=" << format_double(loss_value) << '\n';
            ++global_step;
        }

        epoch_loss /= static_cast<double>(n_train);
        const double acc = evaluate_accuracy(result.model, ds.test);
        result.epoch_train_loss.push_back(epoch_loss);
        result.epoch_test_accuracy.push_back(acc);
        log << "epoch=" << epoch << " train_loss=" << format_double(epoch_loss)
            << " test_acc=" << format_double(acc) << '\n';
        if (cfg.early_stop_accuracy > 0 && acc >= cfg.early_stop_accuracy) break;
    }

    result.metrics_log = log.str();
    return result;
}

namespace {

void streaming_mean_update(Tensor& mean, const Tensor& sample, std::int64_t count) {
    if (!mean.defined()) {
        mean = sample.clone();
        return;
    }
    auto m = mean.mutable_data<float>();
    auto s = sample.data<float>();
    const float k = static_cast<float>(count);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += (s[i] - m[i]) / k;
}

}  // namespace

GradCheckReport full_model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double h) {
    RngState rng{seed, 0};
    ViViTModel model = build_model(cfg, rng, Dtype::F64);
    Tensor clip = Tensor::zeros({cfg.frames, cfg.height, cfg.width, cfg.channels}, Dtype::F64);
    for (auto& v : clip.mutable_data<double>()) v = rng.uniform();
    const std::int64_t classes = cfg.num_classes.front();
    Tensor target = one_hot(static_cast<std::int64_t>(rng.uniform_index(classes)), classes).to(Dtype::F64);
    target = op::reshape(target, {1, classes});

    // Central differences resolve a derivative no finer than ~eps*|loss|/h
    // in absolute terms, so tiny-gradient directions (the key bias has an
    // exactly-zero derivative: it cancels inside the row-wise softmax) cannot
    // meet a purely relative bound. An element passes if the two sides agree
    // within 100x the fd noise floor; everything larger must meet the
    // relative bound.
    constexpr double kAbsFloor = 1e-10;

    GradCheckReport report;
    for (auto& [name, slot] : named_parameters(model)) {
        const Tensor original = *slot;
        Tensor* param = slot;
        const auto loss_of = [&](const Tensor& candidate) {
            *param = candidate;
            Tensor logits = forward(model, VideoClip{clip})[0];
            return cross_entropy(op::reshape(logits, {1, classes}), target);
        };

        Tensor probe = original.clone();
        probe.set_requires_grad(true);
        Tape tape;
        Tensor analytic;
        {
            TapeScope scope(tape);
            tape.backward(loss_of(probe));
            analytic = probe.grad();
        }
        if (!analytic.defined()) analytic = Tensor::zeros(original.shape(), Dtype::F64);

        for (std::int64_t i = 0; i < original.numel(); ++i) {
            Tensor plus = original.clone();
            Tensor minus = original.clone();
            plus.mutable_data<double>()[static_cast<std::size_t>(i)] += h;
            minus.mutable_data<double>()[static_cast<std::size_t>(i)] -= h;
            const double numeric = (loss_of(plus).item() - loss_of(minus).item()) / (2.0 * h);
            const double a = analytic.flat(i);
            if (std::abs(a - numeric) < kAbsFloor) continue;
            const double err =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = name;
            }
        }
        *slot = original;
        report.params_checked += original.numel();
    }
    return report;
}

std::vector<Tensor> multi_view_infer(const ViViTModel& m, const Tensor& long_video, ViewSpec views) {
    const Shape& s = long_video.shape();
    if (s.size() != 4) throw ShapeError("multi_view_infer: video must be [F,H,W,C]");
    if (views.temporal_views < 1 || views.spatial_crops < 1) {
        throw ValueError("view counts must be >= 1");
    }
    if (views.spatial_crops != 1 && views.spatial_crops != 3) {
        throw ValueError("spatial crops must be 1 (centre) or 3 (left/centre/right)");
    }
    const std::int64_t clip_len = m.config.frames;
    const std::int64_t crop_h = m.config.height;
    const std::int64_t crop_w = m.config.width;
    if (s[0] < clip_len) {
        throw ValueError("video of " + std::to_string(s[0]) + " frames is shorter than one clip (" +
                         std::to_string(clip_len) + ")");
    }
    if (s[1] < crop_h || s[2] < crop_w || s[3] != m.config.channels) {
        throw ShapeError("video " + shape_str(s) + " cannot supply crops of " +
                         std::to_string(crop_h) + "x" + std::to_string(crop_w));
    }

    std::vector<std::int64_t> starts;
    if (views.temporal_views == 1) {
        starts.push_back((s[0] - clip_len) / 2);
    } else {
        for (std::int64_t i = 0; i < views.temporal_views; ++i) {
            starts.push_back(i * (s[0] - clip_len) / (views.temporal_views - 1));
        }
    }
    std::vector<std::int64_t> x_offsets;
    if (views.spatial_crops == 1) {
        x_offsets.push_back((s[2] - crop_w) / 2);
    } else {
        x_offsets = {0, (s[2] - crop_w) / 2, s[2] - crop_w};
    }
    const std::int64_t y_offset = (s[1] - crop_h) / 2;

    std::vector<Tensor> mean_logits(m.heads.size());
    std::int64_t count = 0;
    for (const auto t0 : starts) {
        for (const auto x0 : x_offsets) {
            Tensor clip = op::slice(long_video, {t0, y_offset, x0, 0},
                                    {clip_len, crop_h, crop_w, s[3]});
            std::vector<Tensor> logits = forward(m, VideoClip{clip});
            ++count;
            for (std::size_t h = 0; h < logits.size(); ++h) {
                streaming_mean_update(mean_logits[h], logits[h], count);
            }
        }
    }
    return mean_logits;
}

}  // namespace vivit
