#include "epiray/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace epiray {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step) {
  if (!std::isfinite(f(x))) throw std::domain_error("finite_diff_grad: f(x) not finite");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double fp = f(probe);
    probe[i] = saved - step;
    const double fm = f(probe);
    probe[i] = saved;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                         const Tensor& analytic_grad, double step) {
  if (!analytic_grad.same_shape(x)) {
    throw_shape_mismatch("finite_diff_check", analytic_grad.shape(), x.shape());
  }
  Tensor numeric = finite_diff_grad(f, x, step);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double err = std::fabs(analytic_grad[i] - numeric[i]) /
                       std::max(1.0, std::fabs(numeric[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace epiray
