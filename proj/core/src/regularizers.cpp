// SPDX-License-Identifier: Apache-2.0
#include "vivit/regularizers.hpp"

#include <algorithm>
#include <cmath>

namespace vivit {

namespace {

void require_prob(double p, const char* name) {
    if (p < 0.0 || p > 1.0) {
        throw ValueError(std::string(name) + " must be in [0,1], got " + std::to_string(p));
    }
}

}  // namespace

void RegConfig::validate() const {
    require_prob(p_droplayer, "p_droplayer");
    require_prob(label_smoothing, "label_smoothing");
    require_prob(crop_prob, "crop_prob");
    require_prob(flip_prob, "flip_prob");
    require_prob(scale_jitter_prob, "scale_jitter_prob");
    require_prob(colour_jitter_prob, "colour_jitter_prob");
    if (mixup_alpha < 0.0) throw ValueError("mixup_alpha must be >= 0");
    if (randaugment_layers < 0) throw ValueError("randaugment_layers must be >= 0");
    if (randaugment_magnitude < 0 || randaugment_magnitude > 30) {
        throw ValueError("randaugment_magnitude must be in [0,30]");
    }
    if (scale_min > scale_max) throw ValueError("scale_min must be <= scale_max");
    if (scale_min <= 0) throw ValueError("scale_min must be positive");
    if (colour_min > colour_max || colour_min <= 0) throw ValueError("bad colour jitter range");
}

bool stochastic_depth_gate(std::int64_t layer_index, std::int64_t total_layers, double p_drop,
                           RngState& rng) {
    if (layer_index < 1 || layer_index > total_layers) {
        throw ValueError("stochastic depth: layer index " + std::to_string(layer_index) +
                         " outside [1, " + std::to_string(total_layers) + "]");
    }
    require_prob(p_drop, "p_drop");
    const double p = static_cast<double>(layer_index) / static_cast<double>(total_layers) * p_drop;
    return !rng.bernoulli(p);
}

Tensor label_smooth(const Tensor& onehot, double lambda) {
    require_prob(lambda, "label smoothing lambda");
    const std::int64_t classes = onehot.shape().back();
    Tensor out = Tensor::zeros(onehot.shape(), onehot.dtype());
    const double fill = lambda / static_cast<double>(classes);
    if (onehot.dtype() == Dtype::F32) {
        auto src = onehot.data<float>();
        auto dst = out.mutable_data<float>();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i] = static_cast<float>((1.0 - lambda) * src[i] + fill);
        }
    } else {
        auto src = onehot.data<double>();
        auto dst = out.mutable_data<double>();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (1.0 - lambda) * src[i] + fill;
    }
    return out;
}

namespace {

double sample_gamma(double alpha, RngState& rng) {
    if (alpha < 1.0) {
        const double u = std::max(rng.uniform(), 1e-300);
        return sample_gamma(alpha + 1.0, rng) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = std::max(rng.uniform(), 1e-300);
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

}  // namespace

double sample_beta(double alpha, RngState& rng) {
    if (alpha <= 0.0) throw ValueError("sample_beta: alpha must be positive");
    const double g1 = sample_gamma(alpha, rng);
    const double g2 = sample_gamma(alpha, rng);
    if (g1 + g2 == 0.0) return 0.5;
    return g1 / (g1 + g2);
}

MixedSample mixup_with_lambda(const Tensor& x_a, const Tensor& y_a, const Tensor& x_b,
                              const Tensor& y_b, double lambda) {
    if (x_a.shape() != x_b.shape() || y_a.shape() != y_b.shape()) {
        throw ShapeError("mixup: pair shapes disagree");
    }
    const auto blend = [lambda](const Tensor& a, const Tensor& b) {
        Tensor out = Tensor::zeros(a.shape(), a.dtype());
        if (a.dtype() == Dtype::F32) {
            auto pa = a.data<float>();
            auto pb = b.data<float>();
            auto po = out.mutable_data<float>();
            for (std::size_t i = 0; i < pa.size(); ++i) {
                po[i] = static_cast<float>(lambda * pa[i] + (1.0 - lambda) * pb[i]);
            }
        } else {
            auto pa = a.data<double>();
            auto pb = b.data<double>();
            auto po = out.mutable_data<double>();
            for (std::size_t i = 0; i < pa.size(); ++i) po[i] = lambda * pa[i] + (1.0 - lambda) * pb[i];
        }
        return out;
    };
    return {blend(x_a, x_b), blend(y_a, y_b), lambda};
}

MixedSample mixup(const Tensor& x_a, const Tensor& y_a, const Tensor& x_b, const Tensor& y_b,
                  double alpha, RngState& rng) {
    return mixup_with_lambda(x_a, y_a, x_b, y_b, sample_beta(alpha, rng));
}

// ---- clip transforms -------------------------------------------------------

namespace {

struct ClipView {
    float* data;
    std::int64_t frames, height, width, channels;
    float& at(std::int64_t t, std::int64_t y, std::int64_t x, std::int64_t c) {
        return data[((t * height + y) * width + x) * channels + c];
    }
    float get(std::int64_t t, std::int64_t y, std::int64_t x, std::int64_t c) const {
        return data[((t * height + y) * width + x) * channels + c];
    }
};

Tensor clone_frames(const Tensor& frames) { return frames.clone(); }

ClipView view_of(Tensor& frames) {
    const Shape& s = frames.shape();
    return ClipView{frames.mutable_data<float>().data(), s[0], s[1], s[2], s[3]};
}

float bilinear(const ClipView& in, std::int64_t t, double ys, double xs, std::int64_t c) {
    // edge clamp
    ys = std::clamp(ys, 0.0, static_cast<double>(in.height - 1));
    xs = std::clamp(xs, 0.0, static_cast<double>(in.width - 1));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(ys));
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(xs));
    const std::int64_t y1 = std::min(y0 + 1, in.height - 1);
    const std::int64_t x1 = std::min(x0 + 1, in.width - 1);
    const double fy = ys - static_cast<double>(y0);
    const double fx = xs - static_cast<double>(x0);
    const double v = (1 - fy) * ((1 - fx) * in.get(t, y0, x0, c) + fx * in.get(t, y0, x1, c)) +
                     fy * ((1 - fx) * in.get(t, y1, x0, c) + fx * in.get(t, y1, x1, c));
    return static_cast<float>(v);
}

// Inverse-mapped affine warp about the frame centre, identical for all frames.
Tensor warp_affine(const Tensor& frames, double a, double b, double c, double d, double tx,
                   double ty) {
    Tensor src_t = frames.clone();
    Tensor dst_t = Tensor::zeros(frames.shape(), frames.dtype());
    ClipView src = view_of(src_t);
    ClipView dst = view_of(dst_t);
    const double cy = (src.height - 1) / 2.0;
    const double cx = (src.width - 1) / 2.0;
    for (std::int64_t t = 0; t < src.frames; ++t) {
        for (std::int64_t y = 0; y < src.height; ++y) {
            for (std::int64_t x = 0; x < src.width; ++x) {
                const double xs = a * (x - cx) + b * (y - cy) + cx + tx;
                const double ys = c * (x - cx) + d * (y - cy) + cy + ty;
                for (std::int64_t ch = 0; ch < src.channels; ++ch) {
                    dst.at(t, y, x, ch) = bilinear(src, t, ys, xs, ch);
                }
            }
        }
    }
    return dst_t;
}

void clamp01(Tensor& frames) {
    for (auto& v : frames.mutable_data<float>()) v = std::clamp(v, 0.0f, 1.0f);
}

void apply_brightness(Tensor& frames, double factor) {
    for (auto& v : frames.mutable_data<float>()) v = static_cast<float>(v * factor);
}

void apply_contrast(Tensor& frames, double factor) {
    ClipView view = view_of(frames);
    // per-channel mean over the whole clip keeps the transform identical
    // across frames
    std::vector<double> mean(static_cast<std::size_t>(view.channels), 0.0);
    const std::int64_t per_channel = view.frames * view.height * view.width;
    auto data = frames.mutable_data<float>();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i) {
        mean[static_cast<std::size_t>(i % view.channels)] += data[i];
    }
    for (auto& m : mean) m /= static_cast<double>(per_channel);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i) {
        const double m = mean[static_cast<std::size_t>(i % view.channels)];
        data[i] = static_cast<float>(m + (data[i] - m) * factor);
    }
}

void apply_saturation(Tensor& frames, double factor) {
    ClipView view = view_of(frames);
    if (view.channels != 3) return;  // grayscale clips have no saturation axis
    auto data = frames.mutable_data<float>();
    for (std::size_t i = 0; i < data.size(); i += 3) {
        const double grey = (data[i] + data[i + 1] + data[i + 2]) / 3.0;
        for (int c = 0; c < 3; ++c) {
            data[i + c] = static_cast<float>(grey + (data[i + c] - grey) * factor);
        }
    }
}

void flip_horizontal(Tensor& frames) {
    ClipView view = view_of(frames);
    for (std::int64_t t = 0; t < view.frames; ++t)
        for (std::int64_t y = 0; y < view.height; ++y)
            for (std::int64_t x = 0; x < view.width / 2; ++x)
                for (std::int64_t c = 0; c < view.channels; ++c) {
                    std::swap(view.at(t, y, x, c), view.at(t, y, view.width - 1 - x, c));
                }
}

// Crop [y0, y0+ch) x [x0, x0+cw) and resize back to the clip extent.
Tensor crop_resize(const Tensor& frames, std::int64_t y0, std::int64_t x0, std::int64_t crop_h,
                   std::int64_t crop_w) {
    Tensor src_t = frames.clone();
    Tensor dst_t = Tensor::zeros(frames.shape(), frames.dtype());
    ClipView src = view_of(src_t);
    ClipView dst = view_of(dst_t);
    const double sy = static_cast<double>(crop_h) / static_cast<double>(src.height);
    const double sx = static_cast<double>(crop_w) / static_cast<double>(src.width);
    for (std::int64_t t = 0; t < src.frames; ++t)
        for (std::int64_t y = 0; y < src.height; ++y)
            for (std::int64_t x = 0; x < src.width; ++x) {
                const double ys = y0 + y * sy;
                const double xs = x0 + x * sx;
                for (std::int64_t c = 0; c < src.channels; ++c) {
                    dst.at(t, y, x, c) = bilinear(src, t, ys, xs, c);
                }
            }
    return dst_t;
}

}  // namespace

VideoClip rand_augment(const VideoClip& clip, int num_layers, int magnitude, RngState& rng) {
    if (magnitude < 0 || magnitude > 30) throw ValueError("rand_augment magnitude must be in [0,30]");
    if (num_layers < 0) throw ValueError("rand_augment num_layers must be >= 0");
    if (clip.frames.dtype() != Dtype::F32) throw ValueError("augmentation expects f32 clips");
    const double level = static_cast<double>(magnitude) / 30.0;
    Tensor frames = clone_frames(clip.frames);
    const std::int64_t height = frames.dim(1), width = frames.dim(2);

    for (int layer = 0; layer < num_layers; ++layer) {
        const std::uint64_t pick = rng.uniform_index(6);
        switch (pick) {
            case 0: {  // translate-x
                const double dx = rng.uniform(-0.25, 0.25) * level * static_cast<double>(width);
                frames = warp_affine(frames, 1, 0, 0, 1, -dx, 0);
                break;
            }
            case 1: {  // translate-y
                const double dy = rng.uniform(-0.25, 0.25) * level * static_cast<double>(height);
                frames = warp_affine(frames, 1, 0, 0, 1, 0, -dy);
                break;
            }
            case 2: {  // rotate
                const double theta = rng.uniform(-1.0, 1.0) * level * (30.0 * M_PI / 180.0);
                const double ct = std::cos(theta), st = std::sin(theta);
                frames = warp_affine(frames, ct, -st, st, ct, 0, 0);
                break;
            }
            case 3: {  // shear-x
                const double s = rng.uniform(-0.3, 0.3) * level;
                frames = warp_affine(frames, 1, -s, 0, 1, 0, 0);
                break;
            }
            case 4: {  // brightness
                apply_brightness(frames, 1.0 + rng.uniform(-0.9, 0.9) * level);
                break;
            }
            case 5: {  // contrast
                apply_contrast(frames, 1.0 + rng.uniform(-0.9, 0.9) * level);
                break;
            }
        }
    }
    clamp01(frames);
    return VideoClip{frames, clip.frame_rate_stride};
}

VideoClip geometric_augment(const VideoClip& clip, RngState& rng, const RegConfig& cfg) {
    cfg.validate();
    if (clip.frames.dtype() != Dtype::F32) throw ValueError("augmentation expects f32 clips");
    Tensor frames = clone_frames(clip.frames);
    const std::int64_t height = frames.dim(1), width = frames.dim(2);

    double scale = 1.0;
    if (rng.bernoulli(cfg.scale_jitter_prob)) scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    std::int64_t crop_h = static_cast<std::int64_t>(std::llround(height / scale));
    std::int64_t crop_w = static_cast<std::int64_t>(std::llround(width / scale));
    crop_h = std::clamp<std::int64_t>(crop_h, 1, height);  // zoom-out clamps to the frame
    crop_w = std::clamp<std::int64_t>(crop_w, 1, width);

    std::int64_t y0 = (height - crop_h) / 2;
    std::int64_t x0 = (width - crop_w) / 2;
    if (rng.bernoulli(cfg.crop_prob)) {
        y0 = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(height - crop_h + 1)));
        x0 = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(width - crop_w + 1)));
    }
    if (crop_h != height || crop_w != width || y0 != 0 || x0 != 0) {
        frames = crop_resize(frames, y0, x0, crop_h, crop_w);
    }

    if (rng.bernoulli(cfg.flip_prob)) flip_horizontal(frames);

    if (rng.bernoulli(cfg.colour_jitter_prob)) {
        apply_brightness(frames, rng.uniform(cfg.colour_min, cfg.colour_max));
        apply_contrast(frames, rng.uniform(cfg.colour_min, cfg.colour_max));
        apply_saturation(frames, rng.uniform(cfg.colour_min, cfg.colour_max));
    }

    clamp01(frames);
    return VideoClip{frames, clip.frame_rate_stride};
}

}  // namespace vivit
