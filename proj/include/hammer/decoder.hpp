#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "hammer/errors.hpp"
#include "hammer/nn.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

struct AffordanceMap {
  std::string id;
  std::vector<double> scores;
};

template <class T>
class AffordanceDecoder {
 public:
  static AffordanceDecoder create(ParameterSet<T>& ps, std::size_t d, const std::string& prefix = "decoder") {
    AffordanceDecoder dec;
    dec.query_ = Linear<T>::create(ps, prefix + ".p2i.query", d, d, false);
    dec.key_ = Linear<T>::create(ps, prefix + ".p2i.key", d, d, false);
    dec.value_ = Linear<T>::create(ps, prefix + ".p2i.value", d, d, false);
    dec.head_ = Mlp<T>::create(ps, prefix + ".head", d, {std::max<std::size_t>(d / 2, 1), 1}, false);
    return dec;
  }

  /// Every point attends to the single intention token, with a residual:
  /// f = f~_p + softmax(q k^T / sqrt(d)) v.
  Tensor<T> point_to_intention(const Tensor<T>& points, const Tensor<T>& intention) const {
    if (points.rank() != 2 || intention.numel() != points.dim(1)) {
      throw DimensionError("point_to_intention: points " + shape_str(points.shape()) + " vs intention " +
                           shape_str(intention.shape()));
    }
    const auto token = intention.rank() == 2 ? intention : reshape(intention, {1, intention.numel()});
    return add(points, scaled_dot_attention(query_(points), key_(token), value_(token)));
  }

  /// sigmoid(phi_d(f)), N x 1.
  Tensor<T> predict(const Tensor<T>& f) const { return sigmoid(head_(f)); }

  Linear<T>& value_projection() { return value_; }
  const Mlp<T>& head() const { return head_; }

 private:
  Linear<T> query_, key_, value_;
  Mlp<T> head_;
};

template <class T>
AffordanceMap to_affordance_map(const Tensor<T>& scores, std::string id = {}) {
  AffordanceMap m;
  m.id = std::move(id);
  m.scores.assign(scores.data().begin(), scores.data().end());
  return m;
}

}  // namespace hammer
