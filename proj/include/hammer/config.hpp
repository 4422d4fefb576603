#pragma once

// Run configuration. Loading is strict: every key must be known, every value
// must have the right JSON type, and the result is validated before use.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hammer/backbone.hpp"
#include "hammer/dataio.hpp"
#include "hammer/errors.hpp"
#include "hammer/fusion.hpp"
#include "hammer/lifting.hpp"
#include "hammer/losses.hpp"
#include "hammer/optim.hpp"

namespace hammer {

struct ModelConfig {
  std::size_t n_points = 2048;      // N
  std::size_t d = 512;
  std::size_t hidden_width = 2048;  // d_h
  std::size_t hidden_length = 32;   // L
  std::size_t cont_width = 256;
  std::size_t sa_ratio = 4;
  std::vector<double> radii{0.1, 0.2, 0.4};  // one per SA layer; R = radii.size()
  std::vector<std::size_t> k_max{32, 32, 32};
  bool bottleneck_scale = true;

  BackboneConfig backbone() const {
    BackboneConfig b;
    b.n_points = n_points;
    b.d = d;
    b.sa_ratio = sa_ratio;
    b.radii = radii;
    b.k_max = k_max;
    b.bottleneck_scale = bottleneck_scale;
    return b;
  }
};

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::string schedule = "linear";  // "linear" or "constant"
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::size_t grad_accum = 1;
  std::size_t max_steps = 0;  // 0 = epochs decide

  AdamWConfig adamw() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

struct DataConfig {
  std::string dataset;
  std::string train_split = "train";
  std::string eval_split = "test";
};

struct TrainConfig {
  std::string out = "run";
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::string resume;                // checkpoint directory to continue from
};

struct RunConfig {
  ModelConfig model;
  FusionConfig fusion;
  LiftingConfig lifting;
  LossWeights loss;
  OptimConfig optim;
  DataConfig data;
  TrainConfig train;
  std::uint64_t seed = 0;

  /// Desk-scale setting used by the learning checks.
  static RunConfig toy() {
    RunConfig c;
    c.model.n_points = 512;
    c.model.d = 64;
    c.model.hidden_width = 256;
    c.model.hidden_length = 8;
    c.model.radii = {0.2, 0.4, 0.8};
    c.model.k_max = {16, 16, 16};
    c.optim.lr = 1e-3;
    c.optim.batch_size = 8;
    return c;
  }

  void validate() const {
    if (model.n_points < 4) throw ConfigError("model.n_points must be >= 4");
    if (model.d < 2) throw ConfigError("model.d must be >= 2");
    if (model.hidden_width < 1) throw ConfigError("model.hidden_width must be >= 1");
    if (model.hidden_length < 2) throw ConfigError("model.hidden_length must be >= 2");
    if (model.cont_width < 1) throw ConfigError("model.cont_width must be >= 1");
    model.backbone().validate();
    if (!lifting.share_weights && lifting.mode == LiftMode::Multi && lifting.stages < model.radii.size()) {
      throw ConfigError("lifting needs one stage per decoder scale");
    }
    loss.validate();
    if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be > 0");
    if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
      throw ConfigError("optim.beta1/beta2 must lie in [0,1)");
    }
    if (!(optim.eps > 0.0)) throw ConfigError("optim.eps must be > 0");
    if (!(optim.weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
    if (optim.schedule != "linear" && optim.schedule != "constant") {
      throw ConfigError("optim.schedule must be 'linear' or 'constant', got '" + optim.schedule + "'");
    }
    if (optim.epochs < 1 && optim.max_steps == 0) throw ConfigError("optim.epochs must be >= 1");
    if (optim.batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
    if (optim.grad_accum < 1) throw ConfigError("optim.grad_accum must be >= 1");
  }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

template <class V>
void read_key(const json& j, const std::string& where, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    const auto& v = j.at(key);
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<V> && v.is_number_integer() && v.get<std::int64_t>() < 0)) {
        throw ConfigError("");
      }
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    out = v.get<V>();
  } catch (const std::exception&) {
    throw ConfigError("config: bad value for '" + where + "." + key + "': " + j.at(key).dump());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  return {
      {"model",
       {{"n_points", c.model.n_points},
        {"d", c.model.d},
        {"hidden_width", c.model.hidden_width},
        {"hidden_length", c.model.hidden_length},
        {"cont_width", c.model.cont_width},
        {"sa_ratio", c.model.sa_ratio},
        {"radii", c.model.radii},
        {"k_max", c.model.k_max},
        {"bottleneck_scale", c.model.bottleneck_scale}}},
      {"fusion", {{"stage1", c.fusion.stage1}, {"stage2", c.fusion.stage2}, {"residual", c.fusion.residual}}},
      {"lifting",
       {{"mode", to_string(c.lifting.mode)},
        {"share_weights", c.lifting.share_weights},
        {"reverse_order", c.lifting.reverse_order}}},
      {"loss",
       {{"lambda_txt", c.loss.lambda_txt},
        {"lambda_aff", c.loss.lambda_aff},
        {"focal_alpha", c.loss.focal_alpha},
        {"focal_gamma", c.loss.focal_gamma},
        {"dice_eps", c.loss.dice_eps}}},
      {"optim",
       {{"lr", c.optim.lr},
        {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"eps", c.optim.eps},
        {"weight_decay", c.optim.weight_decay},
        {"schedule", c.optim.schedule},
        {"epochs", c.optim.epochs},
        {"batch_size", c.optim.batch_size},
        {"grad_accum", c.optim.grad_accum},
        {"max_steps", c.optim.max_steps}}},
      {"data", {{"dataset", c.data.dataset}, {"train_split", c.data.train_split}, {"eval_split", c.data.eval_split}}},
      {"train", {{"out", c.train.out}, {"checkpoint_every", c.train.checkpoint_every}, {"resume", c.train.resume}}},
      {"seed", c.seed},
  };
}

/// Overlays `j` on `base`. Missing keys keep their base values; unknown keys
/// and wrongly typed values raise ConfigError. The result is validated.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  using detail::read_key;
  detail::reject_unknown(j, "", {"model", "fusion", "lifting", "loss", "optim", "data", "train", "seed"});
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m, "model", {"n_points", "d", "hidden_width", "hidden_length", "cont_width", "sa_ratio",
                                        "radii", "k_max", "bottleneck_scale"});
    read_key(m, "model", "n_points", c.model.n_points);
    read_key(m, "model", "d", c.model.d);
    read_key(m, "model", "hidden_width", c.model.hidden_width);
    read_key(m, "model", "hidden_length", c.model.hidden_length);
    read_key(m, "model", "cont_width", c.model.cont_width);
    read_key(m, "model", "sa_ratio", c.model.sa_ratio);
    read_key(m, "model", "bottleneck_scale", c.model.bottleneck_scale);
    try {
      if (m.contains("radii")) c.model.radii = m.at("radii").get<std::vector<double>>();
      if (m.contains("k_max")) c.model.k_max = m.at("k_max").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: model.radii/k_max must be arrays of numbers: ") + e.what());
    }
  }
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    detail::reject_unknown(f, "fusion", {"stage1", "stage2", "residual"});
    read_key(f, "fusion", "stage1", c.fusion.stage1);
    read_key(f, "fusion", "stage2", c.fusion.stage2);
    read_key(f, "fusion", "residual", c.fusion.residual);
  }
  if (j.contains("lifting")) {
    const auto& l = j.at("lifting");
    detail::reject_unknown(l, "lifting", {"mode", "share_weights", "reverse_order"});
    std::string mode = to_string(c.lifting.mode);
    read_key(l, "lifting", "mode", mode);
    c.lifting.mode = parse_lift_mode(mode);
    read_key(l, "lifting", "share_weights", c.lifting.share_weights);
    read_key(l, "lifting", "reverse_order", c.lifting.reverse_order);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    detail::reject_unknown(l, "loss", {"lambda_txt", "lambda_aff", "focal_alpha", "focal_gamma", "dice_eps"});
    read_key(l, "loss", "lambda_txt", c.loss.lambda_txt);
    read_key(l, "loss", "lambda_aff", c.loss.lambda_aff);
    read_key(l, "loss", "focal_alpha", c.loss.focal_alpha);
    read_key(l, "loss", "focal_gamma", c.loss.focal_gamma);
    read_key(l, "loss", "dice_eps", c.loss.dice_eps);
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    detail::reject_unknown(o, "optim", {"lr", "beta1", "beta2", "eps", "weight_decay", "schedule", "epochs",
                                        "batch_size", "grad_accum", "max_steps"});
    read_key(o, "optim", "lr", c.optim.lr);
    read_key(o, "optim", "beta1", c.optim.beta1);
    read_key(o, "optim", "beta2", c.optim.beta2);
    read_key(o, "optim", "eps", c.optim.eps);
    read_key(o, "optim", "weight_decay", c.optim.weight_decay);
    read_key(o, "optim", "schedule", c.optim.schedule);
    read_key(o, "optim", "epochs", c.optim.epochs);
    read_key(o, "optim", "batch_size", c.optim.batch_size);
    read_key(o, "optim", "grad_accum", c.optim.grad_accum);
    read_key(o, "optim", "max_steps", c.optim.max_steps);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown(d, "data", {"dataset", "train_split", "eval_split"});
    read_key(d, "data", "dataset", c.data.dataset);
    read_key(d, "data", "train_split", c.data.train_split);
    read_key(d, "data", "eval_split", c.data.eval_split);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t, "train", {"out", "checkpoint_every", "resume"});
    read_key(t, "train", "out", c.train.out);
    read_key(t, "train", "checkpoint_every", c.train.checkpoint_every);
    read_key(t, "train", "resume", c.train.resume);
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !(j.at("seed").is_number_integer() && j.at("seed").get<std::int64_t>() >= 0)) {
      throw ConfigError("config: seed must be a non-negative integer");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.lifting.stages = c.model.radii.size();
  c.validate();
  return c;
}

inline RunConfig load_config(const fs::path& path, const RunConfig& base = {}) {
  nlohmann::json j;
  try {
    j = read_json(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j, base);
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
inline RunConfig apply_override(const RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json patch = nlohmann::json::object();
  nlohmann::json* cur = &patch;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set: malformed key '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      break;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
  return config_from_json(patch, c);
}

}  // namespace hammer
