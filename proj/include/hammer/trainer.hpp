#pragma once

// Training loop and evaluation. A run is fully determined by its config: the
// epoch order comes from a counter-based shuffle keyed by (seed, epoch), so a
// resumed run only needs the step count and optimizer state.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hammer/config.hpp"
#include "hammer/dataio.hpp"
#include "hammer/errors.hpp"
#include "hammer/metrics.hpp"
#include "hammer/model.hpp"
#include "hammer/optim.hpp"
#include "hammer/rng.hpp"

namespace hammer {

struct StepLog {
  std::uint64_t step = 0;
  double lr = 0, l_txt = 0, l_aff = 0, total = 0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"lr", lr}, {"l_txt", l_txt}, {"l_aff", l_aff}, {"total", total}};
  }
};

struct TrainResult {
  std::vector<StepLog> log;
  std::uint64_t steps = 0;   // total steps completed, including resumed ones
  fs::path final_checkpoint;
};

/// Step arithmetic shared by training and resume.
struct TrainPlan {
  std::size_t samples = 0;
  std::size_t per_step = 0;  // batch_size * grad_accum
  std::uint64_t steps_per_epoch = 0;
  std::uint64_t total_steps = 0;

  static TrainPlan make(const OptimConfig& o, std::size_t samples) {
    if (samples == 0) throw ContractError("train: the training split is empty");
    TrainPlan p;
    p.samples = samples;
    p.per_step = o.batch_size * o.grad_accum;
    p.steps_per_epoch = (samples + p.per_step - 1) / p.per_step;
    p.total_steps = p.steps_per_epoch * o.epochs;
    if (o.max_steps > 0) p.total_steps = o.epochs > 0 ? std::min<std::uint64_t>(p.total_steps, o.max_steps) : o.max_steps;
    return p;
  }
};

/// Sample order for one epoch: a Fisher-Yates shuffle keyed by (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  CounterRng rng(mix_keys(seed, 0x53485546464C45ULL, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

inline double scheduled_lr(const OptimConfig& o, std::uint64_t step, std::uint64_t total) {
  if (o.schedule == "constant") return o.lr;
  return LinearSchedule(o.lr, total).lr_at(step);
}

struct TrainOptions {
  std::ostream* log_stream = nullptr;      // JSON lines, one per step
  std::function<void(const StepLog&)> on_step;
  bool write_checkpoints = true;
};

template <class T>
void save_model(const fs::path& dir, const HammerModel<T>& model, std::uint64_t step, const Vocabulary& vocab,
                const AdamWState<T>* optim) {
  const auto& cfg = model.config();
  save_checkpoint(dir, model.params(), to_json(cfg), step, {{"kind", "epoch-shuffle"}, {"seed", cfg.seed}}, vocab,
                  optim);
}

/// Restores a model saved by save_model, using the config stored with it.
template <class T>
HammerModel<T> load_model(const fs::path& dir, Vocabulary* vocab_out = nullptr, AdamWState<T>* optim = nullptr,
                          std::uint64_t* step_out = nullptr) {
  const auto manifest = read_checkpoint_manifest(dir);
  RunConfig cfg = config_from_json(manifest.at("config"));
  const auto vocab = Vocabulary::from_json(manifest.at("vocabulary"));
  auto model = HammerModel<T>::create(cfg, vocab.affordances.size());
  if (optim) *optim = AdamWState<T>(cfg.optim.adamw(), model.params().tensors());
  const auto contents = load_checkpoint(dir, model.params(), optim);
  if (vocab_out) *vocab_out = contents.vocabulary;
  if (step_out) *step_out = contents.step;
  return model;
}

/// Trains on `data.train_split`. Each step averages the loss over
/// batch_size * grad_accum samples, applies AdamW at the scheduled rate, and
/// logs {step, lr, l_txt, l_aff, total}. A non-finite value aborts the run
/// with a NumericError naming the step; earlier checkpoints stay usable.
template <class T = float>
TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainOptions& opt = {}) {
  cfg.validate();
  const auto& vocab = data.vocabulary();
  const auto indices = data.split_indices(cfg.data.train_split);
  const auto plan = TrainPlan::make(cfg.optim, indices.size());
  std::vector<Sample> samples;
  samples.reserve(indices.size());
  for (auto i : indices) samples.push_back(data.load(i));

  auto model = HammerModel<T>::create(cfg, vocab.affordances.size());
  auto params = model.params().tensors();
  AdamWState<T> state(cfg.optim.adamw(), params);
  std::uint64_t start = 0;
  if (!cfg.train.resume.empty()) {
    const fs::path dir = cfg.train.resume;
    const auto manifest = read_checkpoint_manifest(dir);
    const auto saved = Vocabulary::from_json(manifest.at("vocabulary"));
    if (!(saved == vocab)) throw VocabularyMismatch("resume: checkpoint vocabulary differs from the dataset");
    const auto contents = load_checkpoint(dir, model.params(), &state);
    state.config = cfg.optim.adamw();
    start = contents.step;
  }

  const fs::path out = cfg.train.out;
  TrainResult result;
  result.steps = start;
  std::vector<std::size_t> order;
  std::uint64_t order_epoch = ~0ULL;
  for (std::uint64_t step = start; step < plan.total_steps; ++step) {
    const std::uint64_t epoch = step / plan.steps_per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(cfg.seed, epoch, samples.size());
      order_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(step % plan.steps_per_epoch) * plan.per_step;
    const std::size_t end = std::min(begin + plan.per_step, samples.size());
    const T inv = static_cast<T>(1.0 / static_cast<double>(end - begin));

    StepLog entry;
    entry.step = step;
    entry.lr = scheduled_lr(cfg.optim, step, plan.total_steps);
    model.params().zero_grad();
    try {
      for (std::size_t k = begin; k < end; ++k) {
        const auto& s = samples[order[k]];
        const auto f = model.forward(s.cloud.coords, s.hidden);
        const auto terms = model.loss(f, *s.cloud.labels, s.hidden.affordance_id);
        entry.l_txt += static_cast<double>(terms.l_txt.item());
        entry.l_aff += static_cast<double>(terms.l_aff.item());
        entry.total += static_cast<double>(terms.total.item());
        if (terms.total.requires_grad()) backward(scale(terms.total, inv));
      }
      state.config.lr = entry.lr;
      adamw_step(params, state);
      for (const auto& p : params) detail::check_finite(p.node()->data, "parameter update");
    } catch (const NumericError& e) {
      if (opt.log_stream) {
        *opt.log_stream << nlohmann::json{{"step", step}, {"error", e.what()}}.dump() << "\n" << std::flush;
      }
      throw NumericError(detail::concat("training aborted at step ", step, ": ", e.what()));
    }
    const double n = static_cast<double>(end - begin);
    entry.l_txt /= n;
    entry.l_aff /= n;
    entry.total /= n;
    result.log.push_back(entry);
    if (opt.log_stream) *opt.log_stream << entry.to_json().dump() << "\n" << std::flush;
    if (opt.on_step) opt.on_step(entry);
    result.steps = step + 1;
    if (opt.write_checkpoints && cfg.train.checkpoint_every > 0 && result.steps % cfg.train.checkpoint_every == 0 &&
        result.steps < plan.total_steps) {
      save_model(out / "checkpoints" / ("step-" + std::to_string(result.steps)), model, result.steps, vocab, &state);
    }
  }
  if (opt.write_checkpoints) {
    result.final_checkpoint = out / "final";
    save_model(result.final_checkpoint, model, result.steps, vocab, &state);
  }
  return result;
}

/// Trains and also hands back the in-memory model (used by tests that go on
/// to evaluate without a checkpoint round trip).
template <class T = float>
std::pair<TrainResult, HammerModel<T>> train_model(const RunConfig& cfg, const Dataset& data,
                                                   const TrainOptions& opt = {}) {
  auto result = train<T>(cfg, data, opt);
  if (result.final_checkpoint.empty()) throw ContractError("train_model: checkpoints are disabled");
  return {result, load_model<T>(result.final_checkpoint)};
}

/// Scores of one sample, no graph recorded.
template <class T>
std::vector<double> predict_scores(const HammerModel<T>& model, const Sample& s) {
  NoGradGuard guard;
  const auto f = model.forward(s.cloud.coords, s.hidden);
  return std::vector<double>(f.scores.data().begin(), f.scores.data().end());
}

/// Per-affordance and overall metrics over one split. Raises
/// VocabularyMismatch when the model was trained on another vocabulary.
template <class T>
MetricReport evaluate(const HammerModel<T>& model, const Vocabulary& model_vocab, const Dataset& data,
                      const std::string& split) {
  if (!(model_vocab == data.vocabulary())) {
    throw VocabularyMismatch("eval: checkpoint vocabulary " + model_vocab.to_json().dump() + " differs from dataset " +
                             data.vocabulary().to_json().dump());
  }
  std::vector<SampleMetrics> rows;
  for (auto i : data.split_indices(split)) {
    const auto s = data.load(i);
    const auto p = predict_scores(model, s);
    rows.push_back(evaluate_sample(s.cloud.id, s.cloud.affordance_name, p, *s.cloud.labels));
  }
  if (rows.empty()) throw ContractError("eval: split '" + split + "' has no samples");
  return build_report(std::move(rows));
}

}  // namespace hammer
