#pragma once

// Intention path: hidden-state fixtures standing in for the multimodal model,
// [CONT] extraction, the intention projection head, the token projection used
// by fusion, and the auxiliary affordance classifier.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hammer/errors.hpp"
#include "hammer/nn.hpp"
#include "hammer/rng.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

struct HiddenStates {
  std::size_t length = 0;  // L
  std::size_t width = 0;   // d_h
  std::vector<float> states;  // L x d_h row-major
  std::size_t cont_index = 0;
  std::string prompt;
  std::string class_name;
  std::string affordance_name;
  std::size_t affordance_id = 0;

  void validate() const {
    if (length < 2) throw ContractError(detail::concat("hidden states need L >= 2, got ", length));
    if (width < 1) throw ContractError("hidden states need d_h >= 1");
    if (states.size() != length * width) throw DimensionError("hidden states buffer does not match L x d_h");
    if (cont_index >= length) {
      throw ContractError(detail::concat("[CONT] index ", cont_index, " out of range for L=", length));
    }
  }

  template <class T>
  Tensor<T> as_tensor() const {
    return Tensor<T>::from({length, width}, std::vector<T>(states.begin(), states.end()));
  }
};

enum class IntentionStage { Raw, Lifted, LiftedFinal };

template <class T>
struct IntentionEmbedding {
  Tensor<T> value;  // 1 x d
  IntentionStage stage = IntentionStage::Raw;
};

/// Row `cont_index` of the hidden states.
inline std::vector<float> extract_cont(const HiddenStates& h) {
  if (h.cont_index >= h.length) {
    throw ContractError(detail::concat("extract_cont: index ", h.cont_index, " out of range for L=", h.length));
  }
  if (h.states.size() != h.length * h.width) throw DimensionError("extract_cont: malformed hidden states");
  const auto begin = h.states.begin() + static_cast<std::ptrdiff_t>(h.cont_index * h.width);
  return std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(h.width));
}

inline std::string object_centric_prompt(const std::string& class_name) {
  return "<image> Which region of the " + class_name +
         " does the interaction in the image act on? Answer with the affordance and [CONT].";
}

/// Deterministic stand-in for the model's hidden states. Every token carries
/// a fixed random projection of (class, affordance) plus N(0, 0.1^2) noise;
/// the [CONT] token (last position) gets N(0, 0.01^2) noise instead.
inline HiddenStates synth_fixture(std::size_t class_id, std::size_t affordance_id, std::uint64_t seed,
                                  std::size_t length = 32, std::size_t width = 2048) {
  if (length < 2) throw ContractError(detail::concat("synth_fixture: L must be >= 2, got ", length));
  if (width < 1) throw ContractError("synth_fixture: d_h must be >= 1");
  constexpr std::uint64_t kTableKey = 0x48414D4D45525442ULL;
  CounterRng class_row(mix_keys(kTableKey, 0, class_id));
  CounterRng aff_row(mix_keys(kTableKey, 1, affordance_id));
  std::vector<double> signal(width);
  for (auto& s : signal) s = class_row.normal();
  for (auto& s : signal) s += aff_row.normal();

  HiddenStates h;
  h.length = length;
  h.width = width;
  h.cont_index = length - 1;
  h.affordance_id = affordance_id;
  h.states.resize(length * width);
  CounterRng noise(mix_keys(seed, class_id, affordance_id, 0x4E4F495345ULL));
  for (std::size_t t = 0; t < length; ++t) {
    const double sigma = t == h.cont_index ? 0.01 : 0.1;
    for (std::size_t j = 0; j < width; ++j) {
      h.states[t * width + j] = static_cast<float>(signal[j] + sigma * noise.normal());
    }
  }
  return h;
}

struct IntentionConfig {
  std::size_t hidden_width = 2048;  // d_h
  std::size_t cont_width = 256;     // bottleneck of the [CONT] head
  std::size_t d = 512;
  std::size_t num_affordances = 2;  // K
};

template <class T>
class IntentionHead {
 public:
  static IntentionHead create(ParameterSet<T>& ps, const IntentionConfig& cfg, const std::string& prefix = "intention") {
    if (cfg.num_affordances < 2) throw ConfigError("intention: affordance vocabulary needs K >= 2");
    IntentionHead h;
    h.cfg_ = cfg;
    h.cont_head_ = Mlp<T>::create(ps, prefix + ".cont_head", cfg.hidden_width, {cfg.cont_width, cfg.d}, false);
    h.token_proj_ = Mlp<T>::create(ps, prefix + ".token_proj", cfg.hidden_width, {cfg.d, cfg.d}, false);
    h.aux_head_ = Linear<T>::create(ps, prefix + ".aux_head", cfg.hidden_width, cfg.num_affordances);
    return h;
  }

  const IntentionConfig& config() const { return cfg_; }

  /// Two-layer head d_h -> 256 -> d on the [CONT] state (1 x d_h).
  IntentionEmbedding<T> project_cont(const Tensor<T>& h_cont) const {
    check_width(h_cont, "project_cont");
    return IntentionEmbedding<T>{cont_head_(h_cont), IntentionStage::Raw};
  }

  /// Row-wise token projection, L x d_h -> L x d.
  Tensor<T> project_hidden(const Tensor<T>& states) const {
    check_width(states, "project_hidden");
    return token_proj_(states);
  }

  /// Linear affordance classifier over the [CONT] state, 1 x K.
  Tensor<T> aux_affordance_logits(const Tensor<T>& h_cont) const {
    check_width(h_cont, "aux_affordance_logits");
    return aux_head_(h_cont);
  }

  const Mlp<T>& cont_head() const { return cont_head_; }
  const Mlp<T>& token_proj() const { return token_proj_; }
  const Linear<T>& aux_head() const { return aux_head_; }

 private:
  void check_width(const Tensor<T>& x, const char* op) const {
    if (x.rank() != 2 || x.dim(1) != cfg_.hidden_width) {
      throw DimensionError(detail::concat(op, ": expected width ", cfg_.hidden_width, ", got ", shape_str(x.shape())));
    }
  }

  IntentionConfig cfg_;
  Mlp<T> cont_head_;
  Mlp<T> token_proj_;
  Linear<T> aux_head_;
};

}  // namespace hammer
