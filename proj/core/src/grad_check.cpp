// SPDX-License-Identifier: Apache-2.0
#include "vivit/grad_check.hpp"

#include <cmath>

namespace vivit {

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    if (x.dtype() != Dtype::F64) throw ValueError("grad_check: input must be f64");
    Tensor probe = x.clone();
    probe.set_requires_grad(true);

    Tape tape;
    Tensor analytic;
    {
        TapeScope scope(tape);
        Tensor y = f(probe);
        if (y.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
        check_finite(y, "grad_check f(x)");
        tape.backward(y);
        analytic = probe.grad();
    }
    if (!analytic.defined()) analytic = Tensor::zeros(x.shape(), Dtype::F64);

    const auto eval = [&](const Tensor& at) {
        Tensor y = f(at);
        check_finite(y, "grad_check f(x)");
        return y.item();
    };

    double max_rel = 0.0;
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        Tensor plus = x.clone();
        Tensor minus = x.clone();
        plus.mutable_data<double>()[static_cast<std::size_t>(i)] += h;
        minus.mutable_data<double>()[static_cast<std::size_t>(i)] -= h;
        const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
        const double a = analytic.flat(i);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
    return max_rel;
}

}  // namespace vivit
