#pragma once

#include <functional>

#include "epiray/tensor.hpp"

namespace epiray {

/// Central-difference check of an analytic gradient.
/// numeric_i = (f(x + h e_i) - f(x - h e_i)) / 2h;
/// returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
/// Throws if f(x) is not finite.
double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                         const Tensor& analytic_grad, double step = 1e-5);

/// The numeric gradient itself (same stencil), for direct inspection.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step = 1e-5);

}  // namespace epiray
