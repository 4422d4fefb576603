#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hammer/errors.hpp"
#include "hammer/rng.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

/// Named, ordered collection of trainable leaves. Names are hierarchical
/// ("backbone.sa1.mlp0.weight") and double as checkpoint keys.
template <class T>
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}

  /// Registers a parameter initialised uniformly in [-bound, bound]. The draw
  /// depends only on (seed, name), never on registration order.
  Tensor<T> create(const std::string& name, Shape shape, double bound) {
    if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
    CounterRng rng(mix_keys(seed_, hash_string(name)));
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    auto t = Tensor<T>::from(std::move(shape), std::move(values), true);
    params_.emplace(name, t);
    return t;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw MissingParameterError(name, "unknown parameter: " + name);
    return it->second;
  }
  const std::map<std::string, Tensor<T>>& items() const { return params_; }
  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : params_) out.push_back(n);
    return out;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }
  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, Tensor<T>> params_;
};

/// y = x W + b with W stored in x out layout.
template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when the layer has no bias

  static Linear create(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                       bool with_bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = ps.create(name + ".weight", {in, out}, bound);
    if (with_bias) l.bias = ps.create(name + ".bias", {out}, bound);
    return l;
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_features()) {
      throw DimensionError("linear layer expects width " + std::to_string(in_features()) + ", got " +
                           shape_str(x.shape()));
    }
    auto y = matmul(x, weight);
    return bias.defined() ? add_row(y, bias) : y;
  }
};

/// Per-channel standardization over the rows of one call: (x - mean) /
/// sqrt(var + eps), statistics taken over all rows. Stands in for batch
/// normalization when every call holds a single cloud; train and eval agree.
template <class T>
Tensor<T> channel_normalize(const Tensor<T>& x, double eps = 1e-5) {
  if (x.rank() != 2 || x.rows() == 0) throw DimensionError("channel_normalize expects a non-empty matrix");
  const auto centered = add_row(x, scale(mean_rows(x), T{-1}));
  const auto var = mean_rows(mul(centered, centered));
  const auto inv = pow_scalar(add_scalar(var, static_cast<T>(eps)), T{-0.5});
  return mul(centered, repeat_rows(inv, x.rows()));
}

/// Stack of Linear layers with ReLU between them (and after the last one when
/// `final_activation` is set). With `normalize`, every activated layer is
/// channel-normalized before its ReLU.
template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;
  bool final_activation = false;
  bool normalize = false;

  static Mlp create(ParameterSet<T>& ps, const std::string& name, std::size_t in,
                    const std::vector<std::size_t>& widths, bool final_activation, bool normalize = false) {
    Mlp m;
    m.final_activation = final_activation;
    m.normalize = normalize;
    std::size_t prev = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      m.layers.push_back(Linear<T>::create(ps, name + "." + std::to_string(i), prev, widths[i]));
      prev = widths[i];
    }
    return m;
  }

  std::size_t out_features() const { return layers.back().out_features(); }

  Tensor<T> operator()(Tensor<T> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size() || final_activation) x = relu(normalize ? channel_normalize(x) : x);
    }
    return x;
  }
};

/// Overwrites a leaf's values in place (tests and constructed initialisations).
template <class T>
void assign(Tensor<T>& t, const std::vector<T>& values) {
  if (values.size() != t.numel()) throw DimensionError("assign: value count differs from " + shape_str(t.shape()));
  auto d = t.mutable_data();
  std::copy(values.begin(), values.end(), d.begin());
}

template <class T>
void fill(Tensor<T>& t, T value) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), value);
}

}  // namespace hammer
