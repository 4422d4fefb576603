#pragma once

// Full forward pass: intention head -> hierarchical integration -> geometry
// lifting -> point-to-intention decoding, plus the training objective.

#include <cstddef>
#include <span>
#include <string>

#include "hammer/backbone.hpp"
#include "hammer/config.hpp"
#include "hammer/decoder.hpp"
#include "hammer/fusion.hpp"
#include "hammer/intention.hpp"
#include "hammer/lifting.hpp"
#include "hammer/losses.hpp"
#include "hammer/nn.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

template <class T>
struct ForwardResult {
  Tensor<T> scores;      // N x 1, in (0,1)
  Tensor<T> aux_logits;  // 1 x K
  Tensor<T> fused;       // f~_p, N x d
  Tensor<T> tokens;      // f_h, L x d
  IntentionEmbedding<T> intention;  // f_c^3D
  MultiScaleFeatures<T> multiscale;
};

template <class T>
struct LossTerms {
  Tensor<T> l_txt, l_aff, total;
};

template <class T>
class HammerModel {
 public:
  /// Parameters are drawn from `cfg.seed`; K comes from the dataset vocabulary.
  static HammerModel create(const RunConfig& cfg, std::size_t num_affordances) {
    cfg.validate();
    HammerModel m(cfg.seed);
    m.cfg_ = cfg;
    const std::size_t d = cfg.model.d;
    m.intention_ = IntentionHead<T>::create(
        m.params_, IntentionConfig{cfg.model.hidden_width, cfg.model.cont_width, d, num_affordances});
    m.backbone_ = Backbone<T>::create(m.params_, cfg.model.backbone());
    m.fusion_ = FusionParams<T>::create(m.params_, d, cfg.fusion);
    LiftingConfig lc = cfg.lifting;
    lc.stages = cfg.model.radii.size();
    m.lifter_ = Lifter<T>::create(m.params_, d, lc);
    m.decoder_ = AffordanceDecoder<T>::create(m.params_, d);
    return m;
  }

  ForwardResult<T> forward(std::span<const Vec3> coords, const HiddenStates& h) const {
    h.validate();
    if (h.width != cfg_.model.hidden_width) {
      throw DimensionError(detail::concat("model: fixture width ", h.width, ", config expects ", cfg_.model.hidden_width));
    }
    const auto states = h.as_tensor<T>();
    const auto h_cont = row(states, h.cont_index);
    ForwardResult<T> r;
    r.tokens = intention_.project_hidden(states);
    r.aux_logits = intention_.aux_affordance_logits(h_cont);
    const auto f_c = intention_.project_cont(h_cont);
    auto integ = integrate(coords, r.tokens, backbone_, fusion_);
    r.fused = integ.fused;
    r.multiscale = std::move(integ.multiscale);
    r.intention = lifter_.lift_all(f_c, r.multiscale);
    r.scores = decoder_.predict(decoder_.point_to_intention(r.fused, r.intention.value));
    return r;
  }

  LossTerms<T> loss(const ForwardResult<T>& f, std::span<const double> labels, std::size_t affordance_id) const {
    LossTerms<T> out;
    const std::size_t target[1] = {affordance_id};
    out.l_txt = cross_entropy(f.aux_logits, std::span<const std::size_t>(target, 1));
    out.l_aff = affordance_loss(f.scores, labels, cfg_.loss);
    out.total = total_loss(out.l_txt, out.l_aff, cfg_.loss);
    return out;
  }

  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const RunConfig& config() const { return cfg_; }
  const IntentionHead<T>& intention() const { return intention_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const FusionParams<T>& fusion() const { return fusion_; }
  const Lifter<T>& lifter() const { return lifter_; }
  const AffordanceDecoder<T>& decoder() const { return decoder_; }

 private:
  explicit HammerModel(std::uint64_t seed) : params_(seed) {}

  RunConfig cfg_;
  ParameterSet<T> params_;
  IntentionHead<T> intention_;
  Backbone<T> backbone_;
  FusionParams<T> fusion_;
  Lifter<T> lifter_;
  AffordanceDecoder<T> decoder_;
};

}  // namespace hammer
