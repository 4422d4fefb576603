#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "hammer/errors.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Moment buffers and step count for a fixed, ordered list of parameters.
template <class T>
struct AdamWState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  AdamWState() = default;
  AdamWState(AdamWConfig cfg, const std::vector<Tensor<T>>& params) : config(cfg) {
    for (const auto& p : params) {
      first_moment.emplace_back(p.numel(), T{0});
      second_moment.emplace_back(p.numel(), T{0});
    }
  }
};

/// One bias-corrected AdamW update using the gradients stored on `params`.
/// Weight decay is decoupled: parameters are scaled by (1 - lr*wd) first.
template <class T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState<T>& state) {
  if (params.size() != state.first_moment.size()) {
    throw ContractError(detail::concat("adamw_step: ", params.size(), " parameters but state tracks ",
                                       state.first_moment.size()));
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const T decay = static_cast<T>(1.0 - c.lr * c.weight_decay);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw ContractError("adamw_step: moment buffer shape differs from parameter " + shape_str(p.shape()));
    }
    auto data = p.mutable_data();
    const auto grad = p.grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T g = grad[j];
      data[j] *= decay;
      m[j] = b1 * m[j] + (T{1} - b1) * g;
      v[j] = b2 * v[j] + (T{1} - b2) * g * g;
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      data[j] -= static_cast<T>(c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

/// Linear decay from base_lr at step 0 to 0 at total_steps; no warmup.
class LinearSchedule {
 public:
  LinearSchedule(double base_lr, std::uint64_t total_steps) : base_(base_lr), total_(total_steps) {}
  double lr_at(std::uint64_t step) const {
    if (total_ == 0 || step >= total_) return 0.0;
    return base_ * (1.0 - static_cast<double>(step) / static_cast<double>(total_));
  }

 private:
  double base_;
  std::uint64_t total_;
};

}  // namespace hammer
