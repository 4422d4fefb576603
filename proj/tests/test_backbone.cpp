#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "hammer/backbone.hpp"
#include "hammer/gradcheck.hpp"
#include "hammer/nn.hpp"
#include "hammer/rng.hpp"

using namespace hammer;

namespace {

std::vector<Vec3> random_cloud(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Vec3> pts(n);
  for (auto& p : pts)
    for (auto& v : p) v = rng.uniform(-1.0, 1.0);
  return pts;
}

// Plain O(m N^2) max-min selection written independently of the library.
std::vector<std::size_t> brute_force_fps(const std::vector<Vec3>& pts, std::size_t m) {
  Vec3 c{0, 0, 0};
  for (const auto& p : pts)
    for (int k = 0; k < 3; ++k) c[k] += p[k] / static_cast<double>(pts.size());
  auto d2 = [](const Vec3& a, const Vec3& b) {
    double s = 0;
    for (int k = 0; k < 3; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
  };
  std::vector<std::size_t> out;
  std::size_t first = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (d2(pts[i], c) > d2(pts[first], c)) first = i;
  out.push_back(first);
  while (out.size() < m) {
    std::size_t best = pts.size();
    double best_d = -1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(out.begin(), out.end(), i) != out.end()) continue;
      double md = INFINITY;
      for (auto j : out) md = std::min(md, d2(pts[i], pts[j]));
      if (md > best_d) best_d = md, best = i;
    }
    out.push_back(best);
  }
  return out;
}

Backbone<float> toy_backbone(ParameterSet<float>& ps) {
  BackboneConfig cfg;
  cfg.n_points = 512;
  cfg.d = 64;
  cfg.radii = {0.2, 0.4, 0.8};
  cfg.k_max = {16, 16, 16};
  return Backbone<float>::create(ps, cfg);
}

}  // namespace

TEST(Fps, ColinearTieBreaking) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  EXPECT_EQ(farthest_point_sample(pts, 3), (std::vector<std::size_t>{0, 3, 1}));
}

TEST(Fps, AllPointsAndSinglePick) {
  const auto pts = random_cloud(20, 1);
  auto all = farthest_point_sample(pts, 20);
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 20u);
  EXPECT_EQ(all, farthest_point_sample(pts, 20));
  EXPECT_EQ(farthest_point_sample(pts, 1).front(), brute_force_fps(pts, 1).front());
}

TEST(Fps, MatchesBruteForce) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto pts = random_cloud(40, 100 + s);
    EXPECT_EQ(farthest_point_sample(pts, 12), brute_force_fps(pts, 12));
  }
}

TEST(Fps, RejectsBadCounts) {
  const auto pts = random_cloud(5, 2);
  EXPECT_THROW(farthest_point_sample(pts, 6), ContractError);
  EXPECT_THROW(farthest_point_sample(pts, 0), ContractError);
}

TEST(Fps, DuplicatePointsGiveDistinctIndices) {
  const std::vector<Vec3> pts(8, Vec3{0.5, 0.5, 0.5});
  auto idx = farthest_point_sample(pts, 8);
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 8u);
}

TEST(BallQuery, RadiusFilter) {
  const std::vector<Vec3> pts{{0.5, 0, 0}, {2.0, 0, 0}};
  const std::vector<Vec3> center{{0, 0, 0}};
  auto g = ball_query(center, pts, 1.0, 8);
  ASSERT_EQ(g.count(), 1u);
  EXPECT_EQ(std::vector<std::size_t>(g.group(0).begin(), g.group(0).end()), (std::vector<std::size_t>{0}));
}

TEST(BallQuery, LargeRadiusSortsAllByDistance) {
  const std::vector<Vec3> pts{{0.3, 0, 0}, {-0.1, 0, 0}, {0, 0.2, 0}, {0, 0, -0.4}};
  const std::vector<Vec3> center{{0, 0, 0}};
  auto g = ball_query(center, pts, 10.0, 4);
  EXPECT_EQ(std::vector<std::size_t>(g.group(0).begin(), g.group(0).end()), (std::vector<std::size_t>{1, 2, 0, 3}));
}

TEST(BallQuery, EmptyBallFallsBackToNearest) {
  const std::vector<Vec3> pts{{5, 0, 0}, {3, 0, 0}};
  const std::vector<Vec3> center{{0, 0, 0}};
  auto g = ball_query(center, pts, 1.0, 4);
  EXPECT_EQ(std::vector<std::size_t>(g.group(0).begin(), g.group(0).end()), (std::vector<std::size_t>{1}));
}

TEST(BallQuery, MatchesBruteForceFilter) {
  const auto pts = random_cloud(64, 3);
  const auto centers = random_cloud(10, 4);
  const double r = 0.6;
  auto g = ball_query(centers, pts, r, 64);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    std::set<std::size_t> expect;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += (pts[i][k] - centers[c][k]) * (pts[i][k] - centers[c][k]);
      if (std::sqrt(s) <= r) expect.insert(i);
    }
    std::set<std::size_t> got(g.group(c).begin(), g.group(c).end());
    if (expect.empty()) {
      EXPECT_EQ(got.size(), 1u);
    } else {
      EXPECT_EQ(got, expect);
    }
  }
}

TEST(BallQuery, TruncatesNearestFirst) {
  const auto pts = random_cloud(64, 5);
  const std::vector<Vec3> center{{0, 0, 0}};
  auto full = ball_query(center, pts, 10.0, 64);
  auto cut = ball_query(center, pts, 10.0, 5);
  ASSERT_EQ(cut.group(0).size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(cut.group(0)[i], full.group(0)[i]);
}

TEST(SetAbstraction, SinglePointGroupEqualsMlpOutput) {
  ParameterSet<double> ps(1);
  auto mlp = Mlp<double>::create(ps, "sa", 3, {4, 6}, true);
  const std::vector<Vec3> pts{{0, 0, 0}, {5, 0, 0}, {0, 5, 0}, {0, 0, 5}};
  auto out = set_abstraction<double>(pts, Tensor<double>{}, 4, 0.1, 8, mlp);
  ASSERT_EQ(out.feats.shape(), (Shape{4, 6}));
  auto direct = mlp(Tensor<double>::zeros({1, 3}));
  for (std::size_t g = 0; g < 4; ++g)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(out.feats.at(g, j), direct.at(0, j));
}

TEST(SetAbstraction, IdenticalLocalGeometryGivesIdenticalFeatures) {
  ParameterSet<double> ps(2);
  auto mlp = Mlp<double>::create(ps, "sa", 3 + 2, {8}, true);
  // Two well-separated copies of the same 3-point pattern.
  const std::vector<Vec3> pts{{0, 0, 0}, {0.1, 0, 0}, {0, 0.1, 0}, {10, 0, 0}, {10.1, 0, 0}, {10, 0.1, 0}};
  auto feats = Tensor<double>::full({6, 2}, 0.7);
  const std::vector<Vec3> centers{{0, 0, 0}, {10, 0, 0}};
  auto groups = ball_query(centers, pts, 0.5, 8);
  EXPECT_EQ(groups.group(0).size(), 3u);
  auto out = set_abstraction<double>(pts, feats, 6, 0.5, 8, mlp);
  // FPS picks both copies' corresponding points in some order; compare pooled
  // features of corresponding centers.
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = 0; b < 6; ++b) {
      const auto& pa = out.coords[a];
      const auto& pb = out.coords[b];
      if (std::abs(pa[0] + 10 - pb[0]) < 1e-12 && pa[1] == pb[1]) {
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.feats.at(a, j), out.feats.at(b, j), 1e-12);
      }
    }
  }
}

TEST(SetAbstraction, InvariantToOrderWithinGroup) {
  ParameterSet<double> ps(3);
  auto mlp = Mlp<double>::create(ps, "sa", 3 + 4, {8}, true);
  const auto pts = random_cloud(24, 6);
  CounterRng rng(7);
  std::vector<double> fv(24 * 4);
  for (auto& v : fv) v = rng.uniform(-1, 1);
  auto feats = Tensor<double>::from({24, 4}, fv);
  auto out = set_abstraction<double>(pts, feats, 6, 0.8, 10, mlp);
  // Rebuild the pooled features with every group reversed.
  for (std::size_t g = 0; g < out.groups.count(); ++g) {
    auto members = out.groups.group(g);
    std::vector<std::size_t> rev(members.rbegin(), members.rend());
    std::vector<double> rows;
    for (auto i : rev) {
      for (int k = 0; k < 3; ++k) rows.push_back((pts[i][k] - out.coords[g][k]) / 0.8);
      for (int j = 0; j < 4; ++j) rows.push_back(fv[i * 4 + j]);
    }
    auto in = Tensor<double>::from({rev.size(), 7}, rows);
    auto h = mlp(in);
    for (std::size_t j = 0; j < 8; ++j) {
      double m = -INFINITY;
      for (std::size_t r = 0; r < rev.size(); ++r) m = std::max(m, h.at(r, j));
      EXPECT_DOUBLE_EQ(out.feats.at(g, j), m);
    }
  }
}

TEST(SetAbstraction, GradientCheck) {
  ParameterSet<double> ps(4);
  auto mlp = Mlp<double>::create(ps, "sa", 3 + 8, {8, 8}, true);
  const auto pts = random_cloud(32, 8);
  CounterRng rng(9);
  std::vector<double> fv(32 * 8);
  for (auto& v : fv) v = rng.uniform(-1, 1);
  auto feats = Tensor<double>::from({32, 8}, fv, true);
  std::vector<Tensor<double>> inputs{feats};
  for (const auto& n : ps.names()) inputs.push_back(ps.get(n));
  const double err = finite_difference_check(
      [&] { return sum(set_abstraction<double>(pts, feats, 8, 0.5, 8, mlp).feats); }, inputs);
  EXPECT_LE(err, 1e-4);
}

TEST(FeaturePropagation, CoincidentPointTakesSourceFeature) {
  const std::vector<Vec3> src{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const std::vector<Vec3> dst{{1, 0, 0}};
  auto f = Tensor<double>::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto out = interpolate_features<double>(src, f, dst);
  EXPECT_NEAR(out.at(0, 0), 3.0, 1e-5);
  EXPECT_NEAR(out.at(0, 1), 4.0, 1e-5);
}

TEST(FeaturePropagation, ConstantSourceStaysConstant) {
  const auto src = random_cloud(7, 10), dst = random_cloud(20, 11);
  auto f = Tensor<double>::full({7, 3}, 2.5);
  auto out = interpolate_features<double>(src, f, dst);
  for (double v : out.data()) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(FeaturePropagation, MatchesNaiveThreeNearestNeighbours) {
  const auto src = random_cloud(12, 12), dst = random_cloud(30, 13);
  CounterRng rng(14);
  std::vector<double> fv(12 * 4);
  for (auto& v : fv) v = rng.uniform(-1, 1);
  auto out = interpolate_features<double>(src, Tensor<double>::from({12, 4}, fv), dst);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < src.size(); ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += (dst[i][k] - src[j][k]) * (dst[i][k] - src[j][k]);
      d.emplace_back(std::sqrt(s), j);
    }
    std::sort(d.begin(), d.end());
    double wsum = 0;
    for (int t = 0; t < 3; ++t) wsum += 1.0 / (d[t].first + 1e-8);
    for (int c = 0; c < 4; ++c) {
      double v = 0;
      for (int t = 0; t < 3; ++t) v += (1.0 / (d[t].first + 1e-8)) / wsum * fv[d[t].second * 4 + c];
      EXPECT_NEAR(out.at(i, c), v, 1e-6);
    }
  }
}

TEST(FeaturePropagation, FewerThanThreeSources) {
  const std::vector<Vec3> src{{0, 0, 0}, {1, 0, 0}};
  const std::vector<Vec3> dst{{0.25, 0, 0}};
  auto out = interpolate_features<double>(src, Tensor<double>::from({2, 1}, {0.0, 1.0}), dst);
  EXPECT_NEAR(out.at(0, 0), 0.25, 1e-7);
}

TEST(Backbone, ToyShapes) {
  ParameterSet<float> ps(5);
  auto bb = toy_backbone(ps);
  const auto pts = random_cloud(512, 15);
  auto enc = bb.encode(pts);
  EXPECT_EQ(enc.bottleneck().shape(), (Shape{8, 64}));
  auto ms = bb.decode(enc.bottleneck(), enc);
  ASSERT_EQ(ms.scales.size(), 3u);
  EXPECT_EQ(ms.scales[0].feats.rows(), 8u);
  EXPECT_EQ(ms.scales[1].feats.rows(), 32u);
  EXPECT_EQ(ms.scales[2].feats.rows(), 128u);
  EXPECT_EQ(ms.full_res.shape(), (Shape{512, 64}));
  for (const auto& s : ms.scales) EXPECT_EQ(s.feats.cols(), 64u);
}

TEST(Backbone, DefaultShapes) {
  ParameterSet<float> ps(6);
  auto bb = Backbone<float>::create(ps, BackboneConfig{});
  const auto pts = random_cloud(2048, 16);
  auto enc = bb.encode(pts);
  EXPECT_EQ(enc.bottleneck().shape(), (Shape{32, 512}));
  auto ms = bb.decode(enc.bottleneck(), enc);
  ASSERT_EQ(ms.scales.size(), 3u);
  EXPECT_EQ(ms.scales[0].feats.rows(), 32u);
  EXPECT_EQ(ms.scales[1].feats.rows(), 128u);
  EXPECT_EQ(ms.scales[2].feats.rows(), 512u);
  EXPECT_EQ(ms.full_res.shape(), (Shape{2048, 512}));
}

TEST(Backbone, ScalesAreSubsetsAndGrow) {
  ParameterSet<float> ps(7);
  auto bb = toy_backbone(ps);
  const auto pts = random_cloud(512, 17);
  auto enc = bb.encode(pts);
  auto ms = bb.decode(enc.bottleneck(), enc);
  std::set<Vec3> input(pts.begin(), pts.end());
  for (std::size_t i = 0; i < ms.scales.size(); ++i) {
    if (i > 0) {
      EXPECT_GT(ms.scales[i].coords.size(), ms.scales[i - 1].coords.size());
    }
    for (const auto& p : ms.scales[i].coords) EXPECT_TRUE(input.count(p));
  }
}

TEST(Backbone, ExcludingBottleneckScale) {
  ParameterSet<float> ps(8);
  BackboneConfig cfg;
  cfg.n_points = 512;
  cfg.d = 32;
  cfg.bottleneck_scale = false;
  auto bb = Backbone<float>::create(ps, cfg);
  auto enc = bb.encode(random_cloud(512, 18));
  auto ms = bb.decode(enc.bottleneck(), enc);
  ASSERT_EQ(ms.scales.size(), 3u);
  EXPECT_EQ(ms.scales[0].feats.rows(), 32u);
  EXPECT_EQ(ms.scales[2].feats.rows(), 512u);
}

TEST(Backbone, DuplicatePointCloudStaysFinite) {
  ParameterSet<float> ps(9);
  auto bb = toy_backbone(ps);
  const std::vector<Vec3> pts(512, Vec3{0.1, -0.2, 0.3});
  auto enc = bb.encode(pts);
  auto ms = bb.decode(enc.bottleneck(), enc);
  for (float v : ms.full_res.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Backbone, SmallCloudClampsSampleCounts) {
  ParameterSet<float> ps(10);
  auto bb = toy_backbone(ps);
  auto enc = bb.encode(random_cloud(20, 19));
  auto ms = bb.decode(enc.bottleneck(), enc);
  EXPECT_EQ(ms.full_res.rows(), 20u);
  EXPECT_THROW(bb.encode(random_cloud(3, 20)), ContractError);
}

TEST(Backbone, ZeroDecoderParametersGiveZeroOutput) {
  ParameterSet<double> ps(11);
  BackboneConfig cfg;
  cfg.n_points = 64;
  cfg.d = 8;
  cfg.radii = {0.5, 1.0, 2.0};
  auto bb = Backbone<double>::create(ps, cfg);
  for (auto [name, t] : ps.items()) {
    if (name.find(".fp") != std::string::npos) fill(t, 0.0);
  }
  auto enc = bb.encode(random_cloud(64, 21));
  auto ms = bb.decode(Tensor<double>::zeros({enc.bottleneck().rows(), 8}), enc);
  for (double v : ms.full_res.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, EncodeDecodeGradientCheck) {
  ParameterSet<double> ps(12);
  BackboneConfig cfg;
  cfg.n_points = 32;
  cfg.d = 8;
  cfg.sa_ratio = 2;
  cfg.radii = {0.6, 1.2, 2.4};
  cfg.k_max = {6, 6, 6};
  auto bb = Backbone<double>::create(ps, cfg);
  const auto pts = random_cloud(32, 22);
  CounterRng rng(23);
  std::vector<double> w(32 * 8);
  for (auto& v : w) v = rng.uniform(-1, 1);
  auto probe = Tensor<double>::from({32, 8}, w);
  const double err = finite_difference_check(
      [&] {
        auto enc = bb.encode(pts);
        return sum(mul(bb.decode(enc.bottleneck(), enc).full_res, probe));
      },
      ps.tensors());
  EXPECT_LE(err, 1e-4);
}

TEST(Backbone, Determinism) {
  ParameterSet<float> ps(13);
  auto bb = toy_backbone(ps);
  const auto pts = random_cloud(512, 24);
  auto a = bb.encode(pts), b = bb.encode(pts);
  EXPECT_EQ(a.bottleneck().to_vector(), b.bottleneck().to_vector());
}

TEST(PointCloud, ValidateAndNormalize) {
  PointCloud c;
  c.coords = {{1, 1, 1}, {3, 1, 1}, {1, 3, 1}, {1, 1, 3}};
  c.labels = std::vector<double>{0, 0.5, 1, 0};
  EXPECT_NO_THROW(c.validate());
  normalize_unit_sphere(c);
  auto ctr = centroid(c.coords);
  for (double v : ctr) EXPECT_NEAR(v, 0.0, 1e-12);
  double mx = 0;
  for (const auto& p : c.coords) mx = std::max(mx, std::sqrt(squared_distance(p, Vec3{0, 0, 0})));
  EXPECT_NEAR(mx, 1.0, 1e-12);
  c.labels = std::vector<double>{0, 0.5, 1.5, 0};
  EXPECT_THROW(c.validate(), ContractError);
  c.coords.pop_back();
  EXPECT_THROW(c.validate(), ContractError);
}
