#include <gtest/gtest.h>

#include <cmath>

#include "hammer/gradcheck.hpp"
#include "hammer/lifting.hpp"

using namespace hammer;

namespace {

template <class T = double>
Tensor<T> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<T> v(r * c);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1, 1));
  return Tensor<T>::from({r, c}, v);
}

void zero_branches(LiftStageParams<double>& s) {
  fill(s.value.weight, 0.0);
  fill(s.ffn_out.weight, 0.0);
  fill(s.ffn_out.bias, 0.0);
}

MultiScaleFeatures<double> random_scales(std::size_t d, std::uint64_t seed) {
  MultiScaleFeatures<double> ms;
  const std::size_t rows[] = {2, 5, 11};
  for (std::size_t i = 0; i < 3; ++i) {
    Scale<double> s;
    s.coords.resize(rows[i]);
    s.feats = random_matrix(rows[i], d, seed + i);
    ms.scales.push_back(s);
  }
  ms.full_res = random_matrix(20, d, seed + 10);
  return ms;
}

}  // namespace

TEST(LiftStage, ZeroBranchesAreIdentity) {
  ParameterSet<double> ps(1);
  auto s = LiftStageParams<double>::create(ps, "s", 8);
  zero_branches(s);
  auto f_c = random_matrix(1, 8, 2);
  auto out = lift_stage(f_c, random_matrix(5, 8, 3), s);
  EXPECT_EQ(out.to_vector(), f_c.to_vector());
}

TEST(LiftStage, SingleKeyAddsProjectedValue) {
  ParameterSet<double> ps(2);
  auto s = LiftStageParams<double>::create(ps, "s", 8);
  fill(s.ffn_out.weight, 0.0);
  fill(s.ffn_out.bias, 0.0);
  auto f_c = random_matrix(1, 8, 4);
  auto f_p = random_matrix(1, 8, 5);
  auto out = lift_stage(f_c, f_p, s);
  auto v = s.value(f_p);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.at(0, j), f_c.at(0, j) + v.at(0, j), 1e-12);
}

TEST(LiftStage, MatchesHandWrittenFormula) {
  ParameterSet<double> ps(3);
  const std::size_t d = 4;
  auto s = LiftStageParams<double>::create(ps, "s", d);
  auto f_c = random_matrix(1, d, 6);
  auto f_p = random_matrix(3, d, 7);
  auto out = lift_stage(f_c, f_p, s);
  // Independent evaluation with plain loops.
  auto W = [](const Tensor<double>& w, std::size_t i, std::size_t j) { return w.at(i, j); };
  std::vector<double> q(d, 0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < d; ++i) q[j] += f_c.at(0, i) * W(s.query.weight, i, j);
  std::vector<std::vector<double>> k(3, std::vector<double>(d, 0)), v = k;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < d; ++i) {
        k[r][j] += f_p.at(r, i) * W(s.key.weight, i, j);
        v[r][j] += f_p.at(r, i) * W(s.value.weight, i, j);
      }
  std::vector<double> logit(3, 0);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t j = 0; j < d; ++j) logit[r] += q[j] * k[r][j];
    logit[r] /= std::sqrt(double(d));
  }
  const double mx = std::max({logit[0], logit[1], logit[2]});
  double z = 0;
  for (auto& l : logit) z += (l = std::exp(l - mx));
  std::vector<double> lifted(d);
  for (std::size_t j = 0; j < d; ++j) {
    lifted[j] = f_c.at(0, j);
    for (std::size_t r = 0; r < 3; ++r) lifted[j] += logit[r] / z * v[r][j];
  }
  std::vector<double> hidden(4 * d);
  for (std::size_t h = 0; h < 4 * d; ++h) {
    double a = s.ffn_in.bias.data()[h];
    for (std::size_t j = 0; j < d; ++j) a += lifted[j] * W(s.ffn_in.weight, j, h);
    hidden[h] = std::max(a, 0.0);
  }
  for (std::size_t j = 0; j < d; ++j) {
    double a = s.ffn_out.bias.data()[j];
    for (std::size_t h = 0; h < 4 * d; ++h) a += hidden[h] * W(s.ffn_out.weight, h, j);
    EXPECT_NEAR(out.at(0, j), lifted[j] + a, 1e-12);
  }
}

TEST(LiftStage, WidthMismatch) {
  ParameterSet<double> ps(4);
  auto s = LiftStageParams<double>::create(ps, "s", 8);
  EXPECT_THROW(lift_stage(random_matrix(1, 8, 1), random_matrix(3, 7, 2), s), DimensionError);
  EXPECT_THROW(lift_stage(random_matrix(2, 8, 1), random_matrix(3, 8, 2), s), DimensionError);
}

TEST(LiftStage, GradientCheck) {
  ParameterSet<double> ps(5);
  auto s = LiftStageParams<double>::create(ps, "s", 8);
  auto f_c = random_matrix(1, 8, 8);
  auto f_p = random_matrix(5, 8, 9);
  auto probe = random_matrix(1, 8, 10);
  std::vector<Tensor<double>> inputs{f_c, f_p};
  for (const auto& t : ps.tensors()) inputs.push_back(t);
  const double err = finite_difference_check([&] { return sum(mul(lift_stage(f_c, f_p, s), probe)); }, inputs);
  EXPECT_LE(err, 1e-4);
}

TEST(LiftAll, ZeroBranchedStagesComposeToIdentity) {
  ParameterSet<double> ps(6);
  auto lifter = Lifter<double>::create(ps, 8, {});
  for (auto& s : lifter.stages()) zero_branches(s);
  auto f_c = random_matrix(1, 8, 11);
  auto out = lifter.lift_all({f_c, IntentionStage::Raw}, random_scales(8, 12));
  EXPECT_EQ(out.value.to_vector(), f_c.to_vector());
  EXPECT_EQ(out.stage, IntentionStage::LiftedFinal);
}

TEST(LiftAll, MultiModeAppliesStagesCoarseToFine) {
  ParameterSet<double> ps(7);
  auto lifter = Lifter<double>::create(ps, 8, {});
  auto f_c = random_matrix(1, 8, 13);
  auto ms = random_scales(8, 14);
  auto expected = f_c;
  for (std::size_t i = 0; i < 3; ++i) expected = lift_stage(expected, ms.scales[i].feats, lifter.stages()[i]);
  EXPECT_EQ(lifter.lift_all({f_c, IntentionStage::Raw}, ms).value.to_vector(), expected.to_vector());

  ParameterSet<double> ps2(7);
  LiftingConfig rev;
  rev.reverse_order = true;
  auto rlifter = Lifter<double>::create(ps2, 8, rev);
  expected = f_c;
  for (std::size_t i = 0; i < 3; ++i) expected = lift_stage(expected, ms.scales[2 - i].feats, rlifter.stages()[i]);
  EXPECT_EQ(rlifter.lift_all({f_c, IntentionStage::Raw}, ms).value.to_vector(), expected.to_vector());
}

TEST(LiftAll, SingleModeIgnoresCoarseScales) {
  ParameterSet<double> ps(8);
  LiftingConfig cfg;
  cfg.mode = LiftMode::Single;
  auto lifter = Lifter<double>::create(ps, 8, cfg);
  auto f_c = random_matrix(1, 8, 15);
  auto ms = random_scales(8, 16);
  auto a = lifter.lift_all({f_c, IntentionStage::Raw}, ms);
  ms.scales[0].feats = random_matrix(2, 8, 99);
  ms.scales[1].feats = random_matrix(5, 8, 98);
  auto b = lifter.lift_all({f_c, IntentionStage::Raw}, ms);
  EXPECT_EQ(a.value.to_vector(), b.value.to_vector());
}

TEST(LiftAll, ConcatModeFormula) {
  ParameterSet<double> ps(9);
  LiftingConfig cfg;
  cfg.mode = LiftMode::Concat;
  auto lifter = Lifter<double>::create(ps, 8, cfg);
  auto f_c = random_matrix(1, 8, 17);
  auto ms = random_scales(8, 18);
  auto out = lifter.lift_all({f_c, IntentionStage::Raw}, ms);
  auto expected = lifter.concat_projection()(concat_cols(f_c, mean_rows(ms.scales.back().feats)));
  EXPECT_EQ(out.value.to_vector(), expected.to_vector());
}

TEST(LiftAll, MissingStageParameters) {
  ParameterSet<double> ps(10);
  LiftingConfig cfg;
  cfg.stages = 2;
  auto lifter = Lifter<double>::create(ps, 8, cfg);
  EXPECT_THROW(lifter.lift_all({random_matrix(1, 8, 1), IntentionStage::Raw}, random_scales(8, 2)), ContractError);
  EXPECT_THROW(lifter.lift_all({random_matrix(1, 8, 1), IntentionStage::Raw}, MultiScaleFeatures<double>{}),
               ContractError);
  EXPECT_THROW(parse_lift_mode("sideways"), ConfigError);
}

TEST(LiftAll, SharedWeightsUseOneParameterSet) {
  ParameterSet<double> ps(11);
  LiftingConfig cfg;
  cfg.share_weights = true;
  auto lifter = Lifter<double>::create(ps, 8, cfg);
  EXPECT_EQ(lifter.stages().size(), 1u);
  auto f_c = random_matrix(1, 8, 19);
  auto ms = random_scales(8, 20);
  auto expected = f_c;
  for (std::size_t i = 0; i < 3; ++i) expected = lift_stage(expected, ms.scales[i].feats, lifter.stages()[0]);
  EXPECT_EQ(lifter.lift_all({f_c, IntentionStage::Raw}, ms).value.to_vector(), expected.to_vector());
}

TEST(LiftAll, PointPermutationInvariance) {
  ParameterSet<double> ps(12);
  auto lifter = Lifter<double>::create(ps, 8, {});
  auto f_c = random_matrix(1, 8, 21);
  auto ms = random_scales(8, 22);
  auto a = lifter.lift_all({f_c, IntentionStage::Raw}, ms);
  for (auto& s : ms.scales) {
    std::vector<std::size_t> perm(s.feats.rows());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = perm.size() - 1 - i;
    s.feats = gather_rows(s.feats, perm);
  }
  auto b = lifter.lift_all({f_c, IntentionStage::Raw}, ms);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(a.value.at(0, j), b.value.at(0, j), 1e-6);
}

TEST(LiftAll, UnusedParametersGetNoGradient) {
  for (auto mode : {LiftMode::Multi, LiftMode::Single, LiftMode::Concat}) {
    ParameterSet<double> ps(13);
    LiftingConfig cfg;
    cfg.mode = mode;
    auto lifter = Lifter<double>::create(ps, 8, cfg);
    ps.zero_grad();
    backward(sum(lifter.lift_all({random_matrix(1, 8, 23), IntentionStage::Raw}, random_scales(8, 24)).value));
    for (const auto& [name, t] : ps.items()) {
      bool used = false;
      if (mode == LiftMode::Multi) used = name.find("stage") != std::string::npos;
      if (mode == LiftMode::Single) used = name.find("stage1.") != std::string::npos;
      if (mode == LiftMode::Concat) used = name.find("concat_proj") != std::string::npos;
      double g = 0;
      for (double v : t.grad()) g += std::abs(v);
      if (used) {
        EXPECT_GT(g, 0.0) << name;
      } else {
        EXPECT_EQ(g, 0.0) << name;
      }
    }
  }
}

TEST(LiftAll, DefaultWidth) {
  ParameterSet<float> ps(14);
  auto lifter = Lifter<float>::create(ps, 512, {});
  MultiScaleFeatures<float> ms;
  for (std::size_t n : {32u, 128u, 512u}) ms.scales.push_back(Scale<float>{std::vector<Vec3>(n), random_matrix<float>(n, 512, n)});
  auto out = lifter.lift_all({random_matrix<float>(1, 512, 1), IntentionStage::Raw}, ms);
  EXPECT_EQ(out.value.shape(), (Shape{1, 512}));
  for (float v : out.value.data()) EXPECT_TRUE(std::isfinite(v));
}
