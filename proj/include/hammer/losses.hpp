#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hammer/errors.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

struct LossWeights {
  double lambda_txt = 1.0;
  double lambda_aff = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_eps = 1.0;

  void validate() const {
    if (!(lambda_txt >= 0.0) || !(lambda_aff >= 0.0)) throw ConfigError("loss weights must be non-negative");
    if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) throw ConfigError("loss.focal_alpha must lie in (0,1)");
    if (!(focal_gamma >= 0.0)) throw ConfigError("loss.focal_gamma must be >= 0");
    if (!(dice_eps > 0.0)) throw ConfigError("loss.dice_eps must be > 0");
  }
};

inline constexpr double kProbClamp = 1e-7;

namespace detail {

/// Ground truth binarized at y > 0, as a tensor shaped like the predictions.
template <class T>
Tensor<T> binary_targets(const Tensor<T>& p, std::span<const double> y) {
  if (y.size() != p.numel()) {
    throw DimensionError(detail::concat("loss: ", p.numel(), " predictions vs ", y.size(), " targets"));
  }
  std::vector<T> b(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) b[i] = y[i] > 0.0 ? T{1} : T{0};
  return Tensor<T>::from(p.shape(), std::move(b));
}

template <class T>
void check_probabilities(const Tensor<T>& p) {
  for (const T v : p.data()) {
    if (!(v >= T{0} && v <= T{1})) throw ContractError("loss: prediction outside [0,1]");
  }
}

}  // namespace detail

/// Mean over points of -alpha_t (1 - p_t)^gamma log(p_t), predictions clamped
/// to [1e-7, 1 - 1e-7].
template <class T>
Tensor<T> focal_loss(const Tensor<T>& p, std::span<const double> y, double alpha = 0.25, double gamma = 2.0) {
  detail::check_probabilities(p);
  const auto pos = detail::binary_targets(p, y);
  std::vector<T> alpha_t(pos.numel()), neg(pos.numel());
  for (std::size_t i = 0; i < pos.numel(); ++i) {
    alpha_t[i] = static_cast<T>(pos[i] > T{0} ? alpha : 1.0 - alpha);
    neg[i] = T{1} - pos[i];
  }
  const auto at = Tensor<T>::from(p.shape(), std::move(alpha_t));
  const auto negt = Tensor<T>::from(p.shape(), std::move(neg));
  const auto pc = clamp(p, static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
  // p_t = y p + (1 - y)(1 - p)
  const auto pt = add(mul(pos, pc), mul(negt, add_scalar(scale(pc, T{-1}), T{1})));
  const auto modulator = pow_scalar(add_scalar(scale(pt, T{-1}), T{1}), static_cast<T>(gamma));
  return scale(mean(mul(mul(at, modulator), log(pt))), T{-1});
}

/// 1 - (2 sum p y + eps) / (sum p + sum y + eps).
template <class T>
Tensor<T> dice_loss(const Tensor<T>& p, std::span<const double> y, double eps = 1.0) {
  detail::check_probabilities(p);
  const auto yt = detail::binary_targets(p, y);
  const T e = static_cast<T>(eps);
  T y_sum{0};
  for (const T v : yt.data()) y_sum += v;
  const auto numer = add_scalar(scale(sum(mul(p, yt)), T{2}), e);
  const auto denom = add_scalar(sum(p), y_sum + e);
  const auto ratio = mul(numer, pow_scalar(denom, T{-1}));
  return add_scalar(scale(ratio, T{-1}), T{1});
}

template <class T>
Tensor<T> affordance_loss(const Tensor<T>& p, std::span<const double> y, const LossWeights& w = {}) {
  return add(focal_loss(p, y, w.focal_alpha, w.focal_gamma), dice_loss(p, y, w.dice_eps));
}

template <class T>
Tensor<T> total_loss(const Tensor<T>& l_txt, const Tensor<T>& l_aff, const LossWeights& w) {
  w.validate();
  return add(scale(l_txt, static_cast<T>(w.lambda_txt)), scale(l_aff, static_cast<T>(w.lambda_aff)));
}

}  // namespace hammer
