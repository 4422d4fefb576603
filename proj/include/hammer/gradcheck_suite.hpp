#pragma once

// Central finite-difference checks for every differentiable primitive and
// composite, in float64 at small shapes (d=8, N=16, L=3).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hammer/backbone.hpp"
#include "hammer/config.hpp"
#include "hammer/decoder.hpp"
#include "hammer/fusion.hpp"
#include "hammer/gradcheck.hpp"
#include "hammer/intention.hpp"
#include "hammer/lifting.hpp"
#include "hammer/losses.hpp"
#include "hammer/model.hpp"
#include "hammer/nn.hpp"
#include "hammer/rng.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

struct GradCheckResult {
  std::string name;
  double error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckResult> results;
  double tolerance = 1e-4;
  double seconds = 0.0;

  bool passed() const {
    for (const auto& r : results)
      if (!r.passed) return false;
    return !results.empty();
  }
};

namespace detail {

struct GradFixture {
  std::uint64_t seed;
  std::uint64_t counter = 0;

  /// Uniform values in [lo, hi], keyed by a running counter.
  Tensor<double> uniform(Shape shape, double lo = -1.0, double hi = 1.0) {
    CounterRng rng(mix_keys(seed, ++counter));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>::from(std::move(shape), std::move(v), true);
  }

  /// Values with |x| in [0.2, 1], away from the kinks of relu and clamp.
  Tensor<double> away_from_zero(Shape shape) {
    CounterRng rng(mix_keys(seed, ++counter));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.0);
    return Tensor<double>::from(std::move(shape), std::move(v), true);
  }

  /// Fixed random weights that turn any output into a scalar with a generic gradient.
  Tensor<double> probe(const Tensor<double>& out) {
    CounterRng rng(mix_keys(seed, 0x50524F4245ULL, out.numel()));
    std::vector<double> v(out.numel());
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return sum(mul(out, Tensor<double>::from(out.shape(), std::move(v))));
  }

  std::vector<Vec3> cloud(std::size_t n) {
    CounterRng rng(mix_keys(seed, 0x434C4F5544ULL, ++counter));
    std::vector<Vec3> pts(n);
    for (auto& p : pts)
      for (auto& v : p) v = rng.uniform(-1.0, 1.0);
    return pts;
  }
};

inline std::vector<Tensor<double>> linear_params(const Linear<double>& l) {
  std::vector<Tensor<double>> out{l.weight};
  if (l.bias.defined()) out.push_back(l.bias);
  return out;
}

inline std::vector<Tensor<double>> mlp_params(const Mlp<double>& m) {
  std::vector<Tensor<double>> out;
  for (const auto& l : m.layers)
    for (auto& t : linear_params(l)) out.push_back(t);
  return out;
}

inline void append(std::vector<Tensor<double>>& a, const std::vector<Tensor<double>>& b) {
  a.insert(a.end(), b.begin(), b.end());
}

/// Small configuration for the whole-model check.
inline RunConfig gradcheck_config() {
  RunConfig c;
  c.model.n_points = 16;
  c.model.d = 8;
  c.model.hidden_width = 6;
  c.model.hidden_length = 3;
  c.model.cont_width = 4;
  c.model.sa_ratio = 2;
  c.model.radii = {0.6, 1.2, 2.4};
  c.model.k_max = {4, 4, 4};
  c.seed = 11;
  return c;
}

}  // namespace detail

/// Runs every check. A check passes when the largest
/// |analytic - numeric| / max(1, |numeric|) is at most `tolerance`.
inline GradCheckReport run_gradcheck_suite(double tolerance = 1e-4, std::uint64_t seed = 7) {
  using Td = Tensor<double>;
  using detail::GradFixture;
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  report.tolerance = tolerance;
  constexpr std::size_t d = 8, n = 16, L = 3;
  auto run = [&](const std::string& name, const std::function<double(GradFixture&)>& check) {
    GradFixture fx{mix_keys(seed, hash_string(name))};
    GradCheckResult r;
    r.name = name;
    try {
      r.error = check(fx);
      r.passed = r.error <= tolerance;
    } catch (const Error&) {
      r.error = INFINITY;
      r.passed = false;
    }
    report.results.push_back(r);
  };
  auto unary_check = [&](const std::string& name, std::function<Td(const Td&)> op, bool away = false) {
    run(name, [=](GradFixture& fx) {
      auto x = away ? fx.away_from_zero({n, d}) : fx.uniform({n, d});
      return finite_difference_check([&] { return fx.probe(op(x)); }, {x});
    });
  };

  // Primitives.
  run("matmul", [](GradFixture& fx) {
    auto a = fx.uniform({n, d}), b = fx.uniform({d, 5});
    return finite_difference_check([&] { return fx.probe(matmul(a, b)); }, {a, b});
  });
  unary_check("transpose", [](const Td& x) { return transpose(x); });
  unary_check("reshape", [](const Td& x) { return reshape(x, {d, n}); });
  run("add", [](GradFixture& fx) {
    auto a = fx.uniform({n, d}), b = fx.uniform({n, d});
    return finite_difference_check([&] { return fx.probe(add(a, b)); }, {a, b});
  });
  run("sub", [](GradFixture& fx) {
    auto a = fx.uniform({n, d}), b = fx.uniform({n, d});
    return finite_difference_check([&] { return fx.probe(sub(a, b)); }, {a, b});
  });
  run("mul", [](GradFixture& fx) {
    auto a = fx.uniform({n, d}), b = fx.uniform({n, d});
    return finite_difference_check([&] { return fx.probe(mul(a, b)); }, {a, b});
  });
  unary_check("scale", [](const Td& x) { return scale(x, -1.7); });
  unary_check("add_scalar", [](const Td& x) { return add_scalar(x, 0.3); });
  unary_check("relu", [](const Td& x) { return relu(x); }, true);
  unary_check("sigmoid", [](const Td& x) { return sigmoid(x); });
  run("log", [](GradFixture& fx) {
    auto x = fx.uniform({n, d}, 0.2, 2.0);
    return finite_difference_check([&] { return fx.probe(log(x)); }, {x});
  });
  run("pow_scalar", [](GradFixture& fx) {
    auto x = fx.uniform({n, d}, 0.2, 2.0);
    return finite_difference_check([&] { return fx.probe(pow_scalar(x, 2.5)); }, {x});
  });
  unary_check("clamp", [](const Td& x) { return clamp(x, -0.5, 0.5); }, true);
  unary_check("sum", [](const Td& x) { return sum(mul(x, x)); });
  unary_check("mean", [](const Td& x) { return mean(mul(x, x)); });
  unary_check("mean_rows", [](const Td& x) { return mean_rows(x); });
  run("repeat_rows", [](GradFixture& fx) {
    auto v = fx.uniform({1, d});
    return finite_difference_check([&] { return fx.probe(repeat_rows(v, n)); }, {v});
  });
  run("add_row", [](GradFixture& fx) {
    auto a = fx.uniform({n, d}), b = fx.uniform({d});
    return finite_difference_check([&] { return fx.probe(add_row(a, b)); }, {a, b});
  });
  run("concat_cols", [](GradFixture& fx) {
    auto a = fx.uniform({n, d}), b = fx.uniform({n, 3});
    return finite_difference_check([&] { return fx.probe(concat_cols(a, b)); }, {a, b});
  });
  unary_check("gather_rows", [](const Td& x) { return gather_rows(x, {3, 0, 3, 15, 7}); });
  unary_check("row", [](const Td& x) { return row(x, 5); });
  unary_check("segment_max", [](const Td& x) {
    const std::vector<std::size_t> offsets{0, 4, 5, 11, 16};
    return segment_max(x, std::span<const std::size_t>(offsets));
  });
  unary_check("weighted_gather", [](const Td& x) {
    return weighted_gather(x, {0, 1, 2, 2, 9, 15}, {0.5, 0.3, 0.2, 0.1, 0.6, 0.3}, 3);
  });
  unary_check("softmax_lastdim", [](const Td& x) { return softmax_lastdim(x); });
  unary_check("cross_entropy", [](const Td& x) {
    std::vector<std::size_t> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = (i * 5) % d;
    return cross_entropy(x, std::span<const std::size_t>(t));
  });
  run("scaled_dot_attention", [](GradFixture& fx) {
    auto q = fx.uniform({n, d}), k = fx.uniform({L, d}), v = fx.uniform({L, d});
    return finite_difference_check([&] { return fx.probe(scaled_dot_attention(q, k, v)); }, {q, k, v});
  });

  // Composites.
  run("linear+mlp", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    auto mlp = Mlp<double>::create(ps, "mlp", d, {12, d}, false);
    auto x = fx.uniform({n, d});
    auto inputs = detail::mlp_params(mlp);
    inputs.push_back(x);
    return finite_difference_check([&] { return fx.probe(mlp(x)); }, inputs);
  });
  run("channel_normalize", [](GradFixture& fx) {
    auto x = fx.uniform({n, d});
    return finite_difference_check([&] { return fx.probe(channel_normalize(x)); }, {x});
  });
  run("normalized mlp", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    auto mlp = Mlp<double>::create(ps, "mlp", d, {12, d}, true, true);
    auto x = fx.uniform({n, d});
    auto inputs = detail::mlp_params(mlp);
    inputs.push_back(x);
    return finite_difference_check([&] { return fx.probe(mlp(x)); }, inputs);
  });
  run("intention.project_cont", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    auto head = IntentionHead<double>::create(ps, {6, 4, d, 2});
    auto h = fx.uniform({1, 6});
    auto inputs = detail::mlp_params(head.cont_head());
    inputs.push_back(h);
    return finite_difference_check([&] { return fx.probe(head.project_cont(h).value); }, inputs);
  });
  run("intention.project_hidden", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    auto head = IntentionHead<double>::create(ps, {6, 4, d, 2});
    auto h = fx.uniform({L, 6});
    auto inputs = detail::mlp_params(head.token_proj());
    inputs.push_back(h);
    return finite_difference_check([&] { return fx.probe(head.project_hidden(h)); }, inputs);
  });
  run("intention.aux_cross_entropy", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    auto head = IntentionHead<double>::create(ps, {6, 4, d, 3});
    auto h = fx.uniform({1, 6});
    auto inputs = detail::linear_params(head.aux_head());
    inputs.push_back(h);
    const std::size_t target[1] = {2};
    return finite_difference_check(
        [&] { return cross_entropy(head.aux_affordance_logits(h), std::span<const std::size_t>(target, 1)); }, inputs);
  });
  run("backbone.set_abstraction", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    const auto pts = fx.cloud(n);
    auto feats = fx.uniform({n, 4});
    auto mlp = Mlp<double>::create(ps, "sa", 7, {6, d}, true, true);
    auto inputs = detail::mlp_params(mlp);
    inputs.push_back(feats);
    return finite_difference_check(
        [&] { return fx.probe(set_abstraction(std::span<const Vec3>(pts), feats, 6, 0.9, 5, mlp).feats); }, inputs);
  });
  run("backbone.feature_propagation", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    const auto src = fx.cloud(5), dst = fx.cloud(n);
    auto src_feats = fx.uniform({5, d}), skip = fx.uniform({n, 4});
    auto unit = Linear<double>::create(ps, "fp", d + 4, d);
    auto inputs = detail::linear_params(unit);
    inputs.push_back(src_feats);
    inputs.push_back(skip);
    return finite_difference_check(
        [&] {
          return fx.probe(feature_propagation(std::span<const Vec3>(src), src_feats, std::span<const Vec3>(dst), skip, unit));
        },
        inputs);
  });
  run("fusion.stage1_attention", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    auto p = FusionParams<double>::create(ps, d, {});
    auto f_enc = fx.uniform({4, d}), f_h = fx.uniform({L, d});
    std::vector<Td> inputs{f_enc, f_h, p.query.weight, p.key.weight, p.value.weight, p.output.weight};
    return finite_difference_check([&] { return fx.probe(bottleneck_cross_attention(f_enc, f_h, p)); }, inputs);
  });
  run("fusion.gated_descriptor+fuse", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    auto p = FusionParams<double>::create(ps, d, {});
    auto f_p0 = fx.uniform({n, d}), f_h = fx.uniform({L, d});
    std::vector<Td> inputs{f_p0, f_h, p.gate};
    detail::append(inputs, detail::mlp_params(p.fuse));
    return finite_difference_check([&] { return fx.probe(fuse_full_res(f_p0, gated_global_descriptor(f_h, p.gate), p)); },
                                   inputs);
  });
  for (std::size_t stage = 0; stage < 3; ++stage) {
    run("lifting.stage" + std::to_string(stage + 1), [stage](GradFixture& fx) {
      ParameterSet<double> ps(fx.seed);
      auto lifter = Lifter<double>::create(ps, d, {});
      const auto& s = lifter.stages()[stage];
      auto f_c = fx.uniform({1, d}), f_p = fx.uniform({n >> (2 - stage), d});
      std::vector<Td> inputs{f_c, f_p, s.query.weight, s.key.weight, s.value.weight};
      detail::append(inputs, detail::linear_params(s.ffn_in));
      detail::append(inputs, detail::linear_params(s.ffn_out));
      return finite_difference_check([&] { return fx.probe(lift_stage(f_c, f_p, s)); }, inputs);
    });
  }
  run("lifting.concat_mode", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    LiftingConfig cfg;
    cfg.mode = LiftMode::Concat;
    auto lifter = Lifter<double>::create(ps, d, cfg);
    MultiScaleFeatures<double> ms;
    auto f_c = fx.uniform({1, d}), f_p = fx.uniform({n, d});
    ms.scales.push_back(Scale<double>{{}, f_p});
    std::vector<Td> inputs{f_c, f_p};
    detail::append(inputs, detail::linear_params(lifter.concat_projection()));
    return finite_difference_check(
        [&] { return fx.probe(lifter.lift_all(IntentionEmbedding<double>{f_c, IntentionStage::Raw}, ms).value); }, inputs);
  });
  run("decoder", [](GradFixture& fx) {
    ParameterSet<double> ps(fx.seed);
    auto dec = AffordanceDecoder<double>::create(ps, d);
    auto points = fx.uniform({n, d}), token = fx.uniform({1, d});
    std::vector<Td> inputs{points, token};
    for (const auto& name : ps.names()) inputs.push_back(ps.get(name));
    return finite_difference_check([&] { return fx.probe(dec.predict(dec.point_to_intention(points, token))); }, inputs);
  });
  auto targets = [](std::uint64_t s) {
    CounterRng rng(s);
    std::vector<double> y(n);
    for (auto& v : y) v = rng.uniform() < 0.4 ? rng.uniform(0.1, 1.0) : 0.0;
    y[0] = 1.0;
    return y;
  };
  run("losses.focal", [&](GradFixture& fx) {
    auto x = fx.uniform({n, 1}, -2.0, 2.0);
    const auto y = targets(fx.seed);
    return finite_difference_check([&] { return focal_loss(sigmoid(x), y); }, {x});
  });
  run("losses.dice", [&](GradFixture& fx) {
    auto x = fx.uniform({n, 1}, -2.0, 2.0);
    const auto y = targets(fx.seed);
    return finite_difference_check([&] { return dice_loss(sigmoid(x), y); }, {x});
  });
  run("losses.total_objective", [&](GradFixture& fx) {
    auto cfg = detail::gradcheck_config();
    auto model = HammerModel<double>::create(cfg, 3);
    const auto pts = fx.cloud(n);
    HiddenStates h;
    h.length = L;
    h.width = cfg.model.hidden_width;
    h.cont_index = L - 1;
    h.affordance_id = 1;
    CounterRng rng(mix_keys(fx.seed, 0x48ULL));
    for (std::size_t i = 0; i < L * h.width; ++i) h.states.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
    const auto y = targets(fx.seed);
    return finite_difference_check(
        [&] { return model.loss(model.forward(pts, h), y, h.affordance_id).total; }, model.params().tensors());
  });

  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace hammer
