#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hammer/errors.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

/// Maximum over every coordinate of every input of
///   |analytic - central difference| / max(1, |central difference|).
/// `f` must rebuild its graph from the current values of `inputs` on each call.
inline double finite_difference_check(const std::function<Tensor<double>()>& f,
                                      std::vector<Tensor<double>> inputs, double h = 1e-5) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    auto loss = f();
    backward(loss);
  }
  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& x : inputs) {
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = f().item();
      values[i] = saved - h;
      const double down = f().item();
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_difference_check: non-finite function value");
      }
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

inline double finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                      Tensor<double> x, double h = 1e-5) {
  return finite_difference_check([&] { return f(x); }, std::vector<Tensor<double>>{x}, h);
}

}  // namespace hammer
