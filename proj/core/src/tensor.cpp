// SPDX-License-Identifier: Apache-2.0
#include "vivit/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vivit {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << ")";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> strides(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) strides[i - 1] = strides[i] * s[i];
    return strides;
}

namespace detail {

bool TensorImpl::has_grad() const {
    if (dtype == Dtype::F32) return !std::get<std::vector<float>>(grad).empty();
    return !std::get<std::vector<double>>(grad).empty();
}

void TensorImpl::ensure_zero_grad() {
    if (dtype == Dtype::F32) {
        auto& g = std::get<std::vector<float>>(grad);
        if (g.empty()) g.assign(static_cast<std::size_t>(numel()), 0.0f);
    } else {
        auto& g = std::get<std::vector<double>>(grad);
        if (g.empty()) g.assign(static_cast<std::size_t>(numel()), 0.0);
    }
}

namespace {

Buffer make_buffer(Dtype dt, std::size_t n, double fill) {
    if (dt == Dtype::F32) return std::vector<float>(n, static_cast<float>(fill));
    return std::vector<double>(n, fill);
}

Buffer empty_buffer(Dtype dt) {
    if (dt == Dtype::F32) return std::vector<float>{};
    return std::vector<double>{};
}

void validate_shape(const Shape& shape) {
    for (auto d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

}  // namespace

}  // namespace detail

Tensor Tensor::zeros(Shape shape, Dtype dt) {
    detail::validate_shape(shape);
    auto impl = std::make_shared<detail::TensorImpl>();
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    impl->shape = std::move(shape);
    impl->dtype = dt;
    impl->data = std::make_shared<detail::Buffer>(detail::make_buffer(dt, n, 0.0));
    impl->grad = detail::empty_buffer(dt);
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    if (dt == Dtype::F32) {
        for (auto& v : t.mutable_data<float>()) v = static_cast<float>(value);
    } else {
        for (auto& v : t.mutable_data<double>()) v = value;
    }
    return t;
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    if (static_cast<std::int64_t>(values.size()) != t.numel()) {
        throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(t.shape()));
    }
    if (dt == Dtype::F32) {
        auto out = t.mutable_data<float>();
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>(values[i]);
    } else {
        auto out = t.mutable_data<double>();
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i];
    }
    return t;
}

Tensor Tensor::scalar(double value, Dtype dt) { return from_values({1}, {value}, dt); }

Tensor Tensor::glorot_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out,
                              RngState& rng, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    if (dt == Dtype::F32) {
        for (auto& v : t.mutable_data<float>()) v = static_cast<float>(rng.uniform(-limit, limit));
    } else {
        for (auto& v : t.mutable_data<double>()) v = rng.uniform(-limit, limit);
    }
    return t;
}

Tensor Tensor::randn(Shape shape, double stddev, RngState& rng, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    if (dt == Dtype::F32) {
        for (auto& v : t.mutable_data<float>()) v = static_cast<float>(rng.normal(0.0, stddev));
    } else {
        for (auto& v : t.mutable_data<double>()) v = rng.normal(0.0, stddev);
    }
    return t;
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ValueError("operation on an undefined tensor");
    return impl_->shape;
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

Dtype Tensor::dtype() const {
    if (!impl_) throw ValueError("operation on an undefined tensor");
    return impl_->dtype;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    if (!impl_) throw ValueError("operation on an undefined tensor");
    impl_->requires_grad = v;
    return *this;
}

template <typename T>
std::span<const T> Tensor::data() const {
    if (!impl_) throw ValueError("operation on an undefined tensor");
    return std::span<const T>(std::get<std::vector<T>>(*impl_->data));
}

template <typename T>
std::span<T> Tensor::mutable_data() {
    if (!impl_) throw ValueError("operation on an undefined tensor");
    return std::span<T>(std::get<std::vector<T>>(*impl_->data));
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

double Tensor::flat(std::int64_t i) const {
    if (dtype() == Dtype::F32) return static_cast<double>(data<float>()[static_cast<std::size_t>(i)]);
    return data<double>()[static_cast<std::size_t>(i)];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return flat(0);
}

Tensor Tensor::grad() const {
    if (!impl_ || !impl_->has_grad()) return Tensor();
    Tensor g = Tensor::zeros(impl_->shape, impl_->dtype);
    if (impl_->dtype == Dtype::F32) {
        const auto& src = std::get<std::vector<float>>(impl_->grad);
        auto dst = g.mutable_data<float>();
        std::copy(src.begin(), src.end(), dst.begin());
    } else {
        const auto& src = std::get<std::vector<double>>(impl_->grad);
        auto dst = g.mutable_data<double>();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return g;
}

void Tensor::zero_grad() {
    if (!impl_) return;
    impl_->grad = detail::empty_buffer(impl_->dtype);
}

Tensor Tensor::clone() const {
    if (!impl_) return Tensor();
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->data = std::make_shared<detail::Buffer>(*impl_->data);
    impl->grad = detail::empty_buffer(impl_->dtype);
    impl->requires_grad = impl_->requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::to(Dtype dt) const {
    if (dtype() == dt) return clone();
    Tensor t = zeros(shape(), dt);
    const auto n = static_cast<std::size_t>(numel());
    if (dt == Dtype::F32) {
        auto dst = t.mutable_data<float>();
        auto src = data<double>();
        for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(src[i]);
    } else {
        auto dst = t.mutable_data<double>();
        auto src = data<float>();
        for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(src[i]);
    }
    return t;
}

Tensor Tensor::detach() const {
    if (!impl_) return Tensor();
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->data = impl_->data;  // aliased: buffers are immutable after creation
    impl->grad = detail::empty_buffer(impl_->dtype);
    impl->requires_grad = false;
    return Tensor(std::move(impl));
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward: loss must be a defined scalar");
    }
    check_finite(loss, "backward seed");
    auto seed = loss.impl();
    seed->ensure_zero_grad();
    if (seed->dtype == Dtype::F32) {
        std::get<std::vector<float>>(seed->grad)[0] = 1.0f;
    } else {
        std::get<std::vector<double>>(seed->grad)[0] = 1.0;
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output->has_grad()) continue;  // branch unused by the loss
        it->backward();
    }
}

void check_finite(const Tensor& t, const char* op_name) {
    // v - v is 0 for finite v and NaN for NaN/Inf; the branchless count
    // vectorizes where an isfinite+break loop would not
    std::int64_t bad = 0;
    if (t.dtype() == Dtype::F32) {
        for (float v : t.data<float>()) bad += !(v - v == 0.0f);
    } else {
        for (double v : t.data<double>()) bad += !(v - v == 0.0);
    }
    if (bad != 0) {
        throw NumericError(std::string(op_name) + ": non-finite value in output of shape " +
                           shape_str(t.shape()));
    }
}

}  // namespace vivit
