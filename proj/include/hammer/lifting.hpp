#pragma once

// Multi-granular geometry lifting: residual attention stages that pool
// multi-scale point features into the intention embedding.

#include <cmath>
#include <string>
#include <vector>

#include "hammer/backbone.hpp"
#include "hammer/errors.hpp"
#include "hammer/intention.hpp"
#include "hammer/nn.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

enum class LiftMode { Multi, Single, Concat };

inline LiftMode parse_lift_mode(const std::string& s) {
  if (s == "multi") return LiftMode::Multi;
  if (s == "single") return LiftMode::Single;
  if (s == "concat") return LiftMode::Concat;
  throw ConfigError("lifting.mode must be one of multi|single|concat, got '" + s + "'");
}

inline std::string to_string(LiftMode m) {
  switch (m) {
    case LiftMode::Multi: return "multi";
    case LiftMode::Single: return "single";
    case LiftMode::Concat: return "concat";
  }
  return "multi";
}

struct LiftingConfig {
  LiftMode mode = LiftMode::Multi;
  bool share_weights = false;
  bool reverse_order = false;  // fine -> coarse instead of coarse -> fine
  std::size_t stages = 3;      // R
};

template <class T>
struct LiftStageParams {
  Linear<T> query, key, value;  // d x d, no bias
  Linear<T> ffn_in;             // d -> 4d
  Linear<T> ffn_out;            // 4d -> d

  static LiftStageParams create(ParameterSet<T>& ps, const std::string& name, std::size_t d) {
    LiftStageParams s;
    s.query = Linear<T>::create(ps, name + ".query", d, d, false);
    s.key = Linear<T>::create(ps, name + ".key", d, d, false);
    s.value = Linear<T>::create(ps, name + ".value", d, d, false);
    s.ffn_in = Linear<T>::create(ps, name + ".ffn.0", d, 4 * d);
    s.ffn_out = Linear<T>::create(ps, name + ".ffn.1", 4 * d, d);
    return s;
  }
};

/// f' = f + softmax(q k^T / sqrt(d)) v ; out = f' + FFN(f').
template <class T>
Tensor<T> lift_stage(const Tensor<T>& f_c, const Tensor<T>& f_p, const LiftStageParams<T>& p) {
  if (f_c.rank() != 2 || f_c.dim(0) != 1 || f_p.rank() != 2 || f_p.dim(1) != f_c.dim(1)) {
    throw DimensionError("lift_stage: embedding " + shape_str(f_c.shape()) + " vs features " +
                         shape_str(f_p.shape()));
  }
  auto lifted = add(f_c, scaled_dot_attention(p.query(f_c), p.key(f_p), p.value(f_p)));
  return add(lifted, p.ffn_out(relu(p.ffn_in(lifted))));
}

template <class T>
class Lifter {
 public:
  static Lifter create(ParameterSet<T>& ps, std::size_t d, LiftingConfig cfg, const std::string& prefix = "lifting") {
    Lifter l;
    l.cfg_ = cfg;
    const std::size_t n = cfg.share_weights ? 1 : cfg.stages;
    for (std::size_t i = 0; i < n; ++i) {
      l.stages_.push_back(LiftStageParams<T>::create(ps, prefix + ".stage" + std::to_string(i + 1), d));
    }
    l.concat_proj_ = Linear<T>::create(ps, prefix + ".concat_proj", 2 * d, d);
    return l;
  }

  const LiftingConfig& config() const { return cfg_; }
  std::vector<LiftStageParams<T>>& stages() { return stages_; }
  const std::vector<LiftStageParams<T>>& stages() const { return stages_; }
  const Linear<T>& concat_projection() const { return concat_proj_; }

  /// Produces f_c^3D from f_c and the decoder scales (coarse -> fine).
  IntentionEmbedding<T> lift_all(const IntentionEmbedding<T>& f_c, const MultiScaleFeatures<T>& ms) const {
    if (ms.scales.empty()) throw ContractError("lift_all: no feature scales");
    Tensor<T> cur = f_c.value;
    switch (cfg_.mode) {
      case LiftMode::Multi: {
        const std::size_t n = ms.scales.size();
        if (!cfg_.share_weights && stages_.size() < n) {
          throw ContractError(detail::concat("lift_all: ", n, " scales but only ", stages_.size(), " stage parameter sets"));
        }
        if (stages_.empty()) throw ContractError("lift_all: no stage parameters");
        for (std::size_t s = 0; s < n; ++s) {
          const std::size_t scale_index = cfg_.reverse_order ? n - 1 - s : s;
          const auto& params = cfg_.share_weights ? stages_.front() : stages_[s];
          cur = lift_stage(cur, ms.scales[scale_index].feats, params);
        }
        break;
      }
      case LiftMode::Single:
        if (stages_.empty()) throw ContractError("lift_all: single mode needs stage parameters");
        cur = lift_stage(cur, ms.scales.back().feats, stages_.front());
        break;
      case LiftMode::Concat:
        if (!concat_proj_.weight.defined()) throw ContractError("lift_all: concat mode needs the projection");
        cur = concat_proj_(concat_cols(cur, mean_rows(ms.scales.back().feats)));
        break;
    }
    return IntentionEmbedding<T>{cur, IntentionStage::LiftedFinal};
  }

 private:
  LiftingConfig cfg_;
  std::vector<LiftStageParams<T>> stages_;
  Linear<T> concat_proj_;
};

}  // namespace hammer
