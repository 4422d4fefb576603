#pragma once

// PointNet++-style encoder/decoder: farthest point sampling, ball grouping,
// set abstraction (SA) for downsampling and feature propagation (FP) for
// upsampling back to full resolution.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hammer/errors.hpp"
#include "hammer/nn.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

using Vec3 = std::array<double, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct PointCloud {
  std::vector<Vec3> coords;
  std::optional<std::vector<double>> labels;  // per-point affordance scores in [0,1]
  std::string id;
  std::string class_name;
  std::string affordance_name;

  std::size_t size() const { return coords.size(); }

  void validate() const {
    if (coords.size() < 4) throw ContractError(detail::concat("point cloud '", id, "' has ", coords.size(), " points, need >= 4"));
    for (const auto& p : coords) {
      for (double c : p) {
        if (!std::isfinite(c)) throw NumericError("point cloud '" + id + "' has a non-finite coordinate");
      }
    }
    if (labels) {
      if (labels->size() != coords.size()) throw ContractError("point cloud '" + id + "': label count differs from point count");
      for (double y : *labels) {
        if (!(y >= 0.0 && y <= 1.0)) throw ContractError("point cloud '" + id + "': label outside [0,1]");
      }
    }
  }
};

inline Vec3 centroid(std::span<const Vec3> pts) {
  Vec3 c{0, 0, 0};
  for (const auto& p : pts)
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  for (auto& v : c) v /= static_cast<double>(pts.size());
  return c;
}

/// Centers at the centroid and scales the largest norm to 1 (no-op scale for
/// fully degenerate clouds).
inline void normalize_unit_sphere(PointCloud& cloud) {
  const Vec3 c = centroid(cloud.coords);
  double max_norm = 0.0;
  for (auto& p : cloud.coords) {
    for (int k = 0; k < 3; ++k) p[k] -= c[k];
    max_norm = std::max(max_norm, std::sqrt(squared_distance(p, Vec3{0, 0, 0})));
  }
  if (max_norm > 0.0) {
    for (auto& p : cloud.coords)
      for (auto& v : p) v /= max_norm;
  }
}

/// Greedy max-min sampling. The first pick is the point farthest from the
/// centroid; every tie resolves to the lowest index.
inline std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> coords, std::size_t m) {
  const std::size_t n = coords.size();
  if (m < 1 || m > n) throw ContractError(detail::concat("farthest_point_sample: m=", m, " with N=", n));
  const Vec3 c = centroid(coords);
  std::size_t first = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = squared_distance(coords[i], c);
    if (d > best) {
      best = d;
      first = i;
    }
  }
  std::vector<std::size_t> picked{first};
  picked.reserve(m);
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  taken[first] = true;
  std::size_t last = first;
  while (picked.size() < m) {
    std::size_t arg = n;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_dist[i] = std::min(min_dist[i], squared_distance(coords[i], coords[last]));
      if (!taken[i] && min_dist[i] > far) {
        far = min_dist[i];
        arg = i;
      }
    }
    taken[arg] = true;
    picked.push_back(arg);
    last = arg;
  }
  return picked;
}

/// Variable-length index groups in CSR layout.
struct Groups {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;

  std::size_t count() const { return offsets.size() - 1; }
  std::span<const std::size_t> group(std::size_t g) const {
    return std::span<const std::size_t>(indices).subspan(offsets[g], offsets[g + 1] - offsets[g]);
  }
};

/// Neighbors within `radius` of each center, nearest first (index breaks ties),
/// at most k_max per group. An empty ball falls back to the single nearest point.
inline Groups ball_query(std::span<const Vec3> centers, std::span<const Vec3> coords, double radius,
                         std::size_t k_max) {
  if (!(radius > 0.0)) throw ContractError("ball_query: radius must be positive");
  if (k_max < 1) throw ContractError("ball_query: k_max must be >= 1");
  if (coords.empty()) throw ContractError("ball_query: empty point set");
  const double r2 = radius * radius;
  Groups out;
  std::vector<std::pair<double, std::size_t>> cand;
  for (const auto& c : centers) {
    cand.clear();
    std::size_t nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const double d = squared_distance(c, coords[i]);
      if (d <= r2) cand.emplace_back(d, i);
      if (d < nearest_d) {
        nearest_d = d;
        nearest = i;
      }
    }
    std::sort(cand.begin(), cand.end());
    if (cand.size() > k_max) cand.resize(k_max);
    if (cand.empty()) cand.emplace_back(nearest_d, nearest);
    for (const auto& [_, i] : cand) out.indices.push_back(i);
    out.offsets.push_back(out.indices.size());
  }
  return out;
}

template <class T>
struct SetAbstractionOutput {
  std::vector<Vec3> coords;
  std::vector<std::size_t> centers;  // indices into the input coordinates
  Groups groups;
  Tensor<T> feats;
};

/// Samples m centers, groups neighbors, runs the shared MLP on
/// [relative coords / radius || neighbor features] and max-pools per group.
/// `feats` may be undefined for coordinate-only input.
template <class T>
SetAbstractionOutput<T> set_abstraction(std::span<const Vec3> coords, const Tensor<T>& feats, std::size_t m,
                                        double radius, std::size_t k_max, const Mlp<T>& mlp) {
  if (feats.defined() && feats.rows() != coords.size()) {
    throw DimensionError(detail::concat("set_abstraction: ", coords.size(), " points but features ",
                                        shape_str(feats.shape())));
  }
  SetAbstractionOutput<T> out;
  out.centers = farthest_point_sample(coords, m);
  for (auto i : out.centers) out.coords.push_back(coords[i]);
  out.groups = ball_query(out.coords, coords, radius, k_max);

  const std::size_t total = out.groups.indices.size();
  std::vector<T> rel(total * 3);
  for (std::size_t g = 0; g < out.groups.count(); ++g) {
    const Vec3& c = out.coords[g];
    for (std::size_t r = out.groups.offsets[g]; r < out.groups.offsets[g + 1]; ++r) {
      const Vec3& p = coords[out.groups.indices[r]];
      for (int k = 0; k < 3; ++k) rel[r * 3 + k] = static_cast<T>((p[k] - c[k]) / radius);
    }
  }
  auto input = Tensor<T>::from({total, 3}, std::move(rel));
  if (feats.defined()) input = concat_cols(input, gather_rows(feats, out.groups.indices));
  out.feats = segment_max(mlp(input), std::span<const std::size_t>(out.groups.offsets));
  return out;
}

/// Inverse-distance weights over the 3 nearest sources (fewer if the source
/// set is smaller): w_j proportional to 1 / (d_j + 1e-8).
struct InterpolationTable {
  std::size_t k = 0;
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

inline InterpolationTable three_nn_weights(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.empty()) throw ContractError("feature_propagation: empty source set");
  InterpolationTable tab;
  tab.k = std::min<std::size_t>(3, src.size());
  std::vector<std::pair<double, std::size_t>> cand(src.size());
  for (const auto& p : dst) {
    for (std::size_t i = 0; i < src.size(); ++i) cand[i] = {squared_distance(p, src[i]), i};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(tab.k), cand.end());
    double total = 0.0;
    std::array<double, 3> w{};
    for (std::size_t j = 0; j < tab.k; ++j) {
      w[j] = 1.0 / (std::sqrt(cand[j].first) + 1e-8);
      total += w[j];
    }
    for (std::size_t j = 0; j < tab.k; ++j) {
      tab.index.push_back(cand[j].second);
      tab.weight.push_back(w[j] / total);
    }
  }
  return tab;
}

template <class T>
Tensor<T> interpolate_features(std::span<const Vec3> src_coords, const Tensor<T>& src_feats,
                               std::span<const Vec3> dst_coords) {
  if (src_feats.rows() != src_coords.size()) {
    throw DimensionError("feature_propagation: source features do not match source points");
  }
  auto tab = three_nn_weights(src_coords, dst_coords);
  std::vector<T> w(tab.weight.begin(), tab.weight.end());
  return weighted_gather(src_feats, std::move(tab.index), std::move(w), tab.k);
}

/// Interpolates source features onto destination points, concatenates skip
/// features (if defined) and applies the unit layer, channel normalization
/// and ReLU.
template <class T>
Tensor<T> feature_propagation(std::span<const Vec3> src_coords, const Tensor<T>& src_feats,
                              std::span<const Vec3> dst_coords, const Tensor<T>& skip_feats,
                              const Linear<T>& unit) {
  auto x = interpolate_features(src_coords, src_feats, dst_coords);
  if (skip_feats.defined()) x = concat_cols(x, skip_feats);
  return relu(channel_normalize(unit(x)));
}

struct BackboneConfig {
  std::size_t n_points = 2048;
  std::size_t d = 512;
  std::size_t sa_ratio = 4;
  std::vector<double> radii{0.1, 0.2, 0.4};
  std::vector<std::size_t> k_max{32, 32, 32};
  /// Whether the enhanced bottleneck counts as the coarsest decoder scale.
  bool bottleneck_scale = true;

  std::size_t layers() const { return radii.size(); }

  /// Nominal center count of SA layer l (0-based).
  std::size_t sample_count(std::size_t l) const {
    std::size_t n = n_points;
    for (std::size_t i = 0; i <= l; ++i) n /= sa_ratio;
    return std::max<std::size_t>(n, 1);
  }

  /// Output width of SA layer l: d halves per level below the bottleneck.
  std::size_t sa_width(std::size_t l) const {
    std::size_t w = d;
    for (std::size_t i = l + 1; i < layers(); ++i) w /= 2;
    return std::max<std::size_t>(w, 1);
  }

  void validate() const {
    if (radii.empty() || radii.size() != k_max.size()) throw ConfigError("backbone: radii and k_max must have equal, non-zero length");
    if (sa_ratio < 2) throw ConfigError("backbone: sa_ratio must be >= 2");
    if (d < 2) throw ConfigError("backbone: d must be >= 2");
    for (double r : radii)
      if (!(r > 0.0)) throw ConfigError("backbone: radii must be positive");
    for (auto k : k_max)
      if (k < 1) throw ConfigError("backbone: k_max must be >= 1");
    if (sample_count(layers() - 1) < 1 || n_points < 4) throw ConfigError("backbone: n_points too small");
  }
};

template <class T>
struct Level {
  std::vector<Vec3> coords;
  Tensor<T> feats;  // the coordinates at the raw input level
};

template <class T>
struct EncoderOutput {
  std::vector<Level<T>> levels;  // levels[0] is the input cloud, levels.back() the bottleneck

  const Tensor<T>& bottleneck() const { return levels.back().feats; }
  const std::vector<Vec3>& bottleneck_coords() const { return levels.back().coords; }
};

template <class T>
struct Scale {
  std::vector<Vec3> coords;
  Tensor<T> feats;
};

template <class T>
struct MultiScaleFeatures {
  Tensor<T> bottleneck;
  std::vector<Vec3> bottleneck_coords;
  std::vector<Scale<T>> scales;  // coarse -> fine
  Tensor<T> full_res;
};

template <class T>
class Backbone {
 public:
  Backbone() = default;

  static Backbone create(ParameterSet<T>& ps, const BackboneConfig& cfg, const std::string& prefix = "backbone") {
    cfg.validate();
    Backbone b;
    b.cfg_ = cfg;
    // Level-0 point features are the coordinates themselves.
    std::size_t in = 3 + 3;
    for (std::size_t l = 0; l < cfg.layers(); ++l) {
      const std::size_t w = cfg.sa_width(l);
      const std::size_t hidden = std::max<std::size_t>(w / 2, 1);
      b.sa_.push_back(Mlp<T>::create(ps, prefix + ".sa" + std::to_string(l + 1), in, {hidden, hidden, w}, true, true));
      in = 3 + w;
    }
    // fp_[l] lifts level l+1 features onto level l.
    for (std::size_t l = 0; l < cfg.layers(); ++l) {
      const std::size_t skip = l == 0 ? 3 : cfg.sa_width(l - 1);
      b.fp_.push_back(Linear<T>::create(ps, prefix + ".fp" + std::to_string(l + 1), cfg.d + skip, cfg.d));
    }
    return b;
  }

  const BackboneConfig& config() const { return cfg_; }

  EncoderOutput<T> encode(std::span<const Vec3> coords) const {
    if (coords.size() < 4) throw ContractError("encode: point cloud needs at least 4 points");
    EncoderOutput<T> out;
    std::vector<T> xyz;
    xyz.reserve(coords.size() * 3);
    for (const auto& p : coords) xyz.insert(xyz.end(), {static_cast<T>(p[0]), static_cast<T>(p[1]), static_cast<T>(p[2])});
    out.levels.push_back(Level<T>{std::vector<Vec3>(coords.begin(), coords.end()), Tensor<T>::from({coords.size(), 3}, std::move(xyz))});
    for (std::size_t l = 0; l < cfg_.layers(); ++l) {
      const auto& prev = out.levels.back();
      const std::size_t m = std::min(cfg_.sample_count(l), prev.coords.size());
      auto sa = set_abstraction(std::span<const Vec3>(prev.coords), prev.feats, m, cfg_.radii[l], cfg_.k_max[l], sa_[l]);
      out.levels.push_back(Level<T>{std::move(sa.coords), std::move(sa.feats)});
    }
    return out;
  }

  /// Runs the FP layers from the (possibly enhanced) bottleneck back to full
  /// resolution. Skips come from the encoder output.
  MultiScaleFeatures<T> decode(const Tensor<T>& bottleneck, const EncoderOutput<T>& enc) const {
    const auto& levels = enc.levels;
    if (levels.size() != cfg_.layers() + 1) throw ContractError("decode: encoder output has the wrong depth");
    if (bottleneck.rank() != 2 || bottleneck.rows() != levels.back().coords.size() || bottleneck.cols() != cfg_.d) {
      throw DimensionError("decode: bottleneck " + shape_str(bottleneck.shape()) + " inconsistent with encoder");
    }
    MultiScaleFeatures<T> ms;
    ms.bottleneck = bottleneck;
    ms.bottleneck_coords = levels.back().coords;
    std::vector<Scale<T>> produced;  // fine levels in coarse -> fine order
    Tensor<T> cur = bottleneck;
    for (std::size_t l = cfg_.layers(); l-- > 0;) {
      const auto& src = levels[l + 1].coords;
      const auto& dst = levels[l].coords;
      cur = feature_propagation(std::span<const Vec3>(src), cur, std::span<const Vec3>(dst), levels[l].feats, fp_[l]);
      produced.push_back(Scale<T>{dst, cur});
    }
    ms.full_res = produced.back().feats;
    if (cfg_.bottleneck_scale) {
      ms.scales.push_back(Scale<T>{ms.bottleneck_coords, bottleneck});
      for (std::size_t i = 0; i + 1 < produced.size(); ++i) ms.scales.push_back(produced[i]);
    } else {
      ms.scales = std::move(produced);
    }
    return ms;
  }

  const std::vector<Mlp<T>>& sa_layers() const { return sa_; }
  const std::vector<Linear<T>>& fp_layers() const { return fp_; }

 private:
  BackboneConfig cfg_;
  std::vector<Mlp<T>> sa_;
  std::vector<Linear<T>> fp_;
};

}  // namespace hammer
