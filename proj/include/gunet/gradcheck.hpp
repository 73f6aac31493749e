#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace gunet {

// Central-difference derivative of f with respect to p[i]. f is re-evaluated
// with the coordinate perturbed in place; p is restored afterwards.
template <typename F>
double finite_diff_coord(F&& f, double* p, std::size_t i, double eps) {
  const double orig = p[i];
  p[i] = orig + eps;
  const double fp = f();
  p[i] = orig - eps;
  const double fm = f();
  p[i] = orig;
  return (fp - fm) / (2.0 * eps);
}

// Full central-difference gradient over count coordinates.
template <typename F>
std::vector<double> finite_diff_grad(F&& f, double* p, std::size_t count, double eps) {
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) g[i] = finite_diff_coord(f, p, i, eps);
  return g;
}

// Mixed absolute/relative agreement test between an analytic and a numeric
// derivative. The absolute floor keeps near-zero gradients from failing on
// roundoff alone.
inline bool grad_close(double analytic, double numeric, double rtol = 1e-4,
                       double atol = 1e-9) {
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  return std::fabs(analytic - numeric) <= atol + rtol * scale;
}

}  // namespace gunet
