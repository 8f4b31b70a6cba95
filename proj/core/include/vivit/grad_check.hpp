// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "vivit/tensor.hpp"

namespace vivit {

// Compares the tape gradient of a scalar-valued function against central
// finite differences (f(x+h.e_i) - f(x-h.e_i)) / 2h. Returns the max relative
// error with denominator max(|analytic|, |numeric|, 1e-8). Requires f64 input.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-4);

}  // namespace vivit
