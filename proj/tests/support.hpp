#pragma once

// Test-only finite-difference helpers. They evaluate the function with
// recording disabled and never touch the tape.

#include "iecl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace iecl::testing {

// Central differences with h = rel_h * max(1, |x_i|).
inline std::vector<double> central_diff(const std::function<double()>& f, Tensor& x, double rel_h = 1e-5) {
  NoGradGuard guard;
  auto d = x.mutable_data();
  std::vector<double> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double xi = d[i];
    const double h = rel_h * std::max(1.0, std::abs(xi));
    d[i] = xi + h;
    const double fp = f();
    d[i] = xi - h;
    const double fm = f();
    d[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Relative error with a 1e-4 denominator floor so exact-zero gradients are
// compared absolutely.
inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4}); }

inline double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

// Gradient of a scalar-valued build() with respect to leaf x, via the tape.
inline std::vector<double> autodiff(const std::function<Tensor()>& build, Tensor& x) {
  TapeScope scope;
  x.clear_grad();
  Tensor y = build();
  backward(y);
  auto g = x.grad();
  return {g.begin(), g.end()};
}

}  // namespace iecl::testing
