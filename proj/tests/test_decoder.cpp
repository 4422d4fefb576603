#include <gtest/gtest.h>

#include <cmath>

#include "hammer/decoder.hpp"
#include "hammer/gradcheck.hpp"
#include "hammer/losses.hpp"

using namespace hammer;

namespace {

template <class T = double>
Tensor<T> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1, double hi = 1) {
  CounterRng rng(seed);
  std::vector<T> v(r * c);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from({r, c}, v);
}

}  // namespace

TEST(PointToIntention, ZeroValueIsResidualIdentity) {
  ParameterSet<double> ps(1);
  auto dec = AffordanceDecoder<double>::create(ps, 8);
  fill(dec.value_projection().weight, 0.0);
  auto pts = random_matrix(6, 8, 2);
  auto f = dec.point_to_intention(pts, random_matrix(1, 8, 3));
  EXPECT_EQ(f.to_vector(), pts.to_vector());
}

TEST(PointToIntention, SingleKeyAddsSameVectorToEveryRow) {
  ParameterSet<double> ps(2);
  auto dec = AffordanceDecoder<double>::create(ps, 8);
  auto pts = random_matrix(4, 8, 4);
  auto tok = random_matrix(1, 8, 5);
  auto f = dec.point_to_intention(pts, tok);
  auto v = dec.value_projection()(tok);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(f.at(i, j), pts.at(i, j) + v.at(0, j), 1e-12);
}

TEST(PointToIntention, IdenticalRowsStayIdentical) {
  ParameterSet<double> ps(3);
  auto dec = AffordanceDecoder<double>::create(ps, 8);
  auto row = random_matrix(1, 8, 6);
  auto f = dec.point_to_intention(repeat_rows(row, 2), random_matrix(1, 8, 7));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(f.at(0, j), f.at(1, j));
}

TEST(PointToIntention, WidthMismatch) {
  ParameterSet<double> ps(4);
  auto dec = AffordanceDecoder<double>::create(ps, 8);
  EXPECT_THROW(dec.point_to_intention(random_matrix(3, 8, 1), random_matrix(1, 7, 2)), DimensionError);
}

TEST(PointToIntention, GradientCheck) {
  ParameterSet<double> ps(5);
  auto dec = AffordanceDecoder<double>::create(ps, 8);
  auto pts = random_matrix(6, 8, 8);
  auto tok = random_matrix(1, 8, 9);
  auto probe = random_matrix(6, 8, 10);
  std::vector<Tensor<double>> inputs{pts, tok};
  for (const auto& [name, t] : ps.items())
    if (name.find("p2i") != std::string::npos) inputs.push_back(t);
  const double err = finite_difference_check([&] { return sum(mul(dec.point_to_intention(pts, tok), probe)); }, inputs);
  EXPECT_LE(err, 1e-4);
}

TEST(PredictMap, ZeroEverythingGivesHalf) {
  ParameterSet<double> ps(6);
  auto dec = AffordanceDecoder<double>::create(ps, 8);
  for (auto [name, t] : ps.items()) fill(t, 0.0);
  auto p = dec.predict(Tensor<double>::zeros({5, 8}));
  EXPECT_EQ(p.shape(), (Shape{5, 1}));
  for (double v : p.data()) EXPECT_EQ(v, 0.5);
  auto map = to_affordance_map(p, "x");
  EXPECT_EQ(map.id, "x");
  EXPECT_EQ(map.scores.size(), 5u);
}

TEST(PredictMap, ScoresInOpenInterval) {
  ParameterSet<float> ps(7);
  auto dec = AffordanceDecoder<float>::create(ps, 16);
  auto p = dec.predict(random_matrix<float>(200, 16, 11, -50, 50));
  for (float v : p.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(PredictMap, HeadWidths) {
  ParameterSet<double> ps(8);
  auto dec = AffordanceDecoder<double>::create(ps, 512);
  ASSERT_EQ(dec.head().layers.size(), 2u);
  EXPECT_EQ(dec.head().layers[0].out_features(), 256u);
  EXPECT_EQ(dec.head().layers[1].out_features(), 1u);
}

TEST(PredictMap, GradientThroughAffordanceLoss) {
  ParameterSet<double> ps(9);
  auto dec = AffordanceDecoder<double>::create(ps, 8);
  auto pts = random_matrix(10, 8, 12);
  auto tok = random_matrix(1, 8, 13);
  std::vector<double> y(10);
  for (std::size_t i = 0; i < 10; ++i) y[i] = i % 3 == 0 ? 0.0 : 0.1 * double(i);
  std::vector<Tensor<double>> inputs{pts, tok};
  for (const auto& t : ps.tensors()) inputs.push_back(t);
  const double err = finite_difference_check(
      [&] { return affordance_loss(dec.predict(dec.point_to_intention(pts, tok)), std::span<const double>(y)); },
      inputs);
  EXPECT_LE(err, 1e-4);
}

TEST(Decoder, RowPermutationEquivariance) {
  ParameterSet<double> ps(10);
  auto dec = AffordanceDecoder<double>::create(ps, 8);
  auto pts = random_matrix(7, 8, 14);
  auto tok = random_matrix(1, 8, 15);
  const std::vector<std::size_t> perm{6, 4, 2, 0, 1, 3, 5};
  auto a = dec.predict(dec.point_to_intention(pts, tok));
  auto b = dec.predict(dec.point_to_intention(gather_rows(pts, perm), tok));
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_NEAR(b.data()[i], a.data()[perm[i]], 1e-6);
}
