#pragma once

// Point-cloud corruptions: seven kinds at five severity levels. All randomness
// comes from a counter-based stream keyed by (seed, sample id, kind, level),
// so results do not depend on generation order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hammer/backbone.hpp"
#include "hammer/errors.hpp"
#include "hammer/rng.hpp"

namespace hammer {

enum class CorruptionKind { Scale, Jitter, Rotate, DropoutLocal, DropoutGlobal, AddLocal, AddGlobal };

inline constexpr std::array<CorruptionKind, 7> kAllCorruptions{
    CorruptionKind::Scale,         CorruptionKind::Jitter,   CorruptionKind::Rotate,   CorruptionKind::DropoutLocal,
    CorruptionKind::DropoutGlobal, CorruptionKind::AddLocal, CorruptionKind::AddGlobal};

inline constexpr int kSeverityLevels = 5;

inline std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::Scale: return "scale";
    case CorruptionKind::Jitter: return "jitter";
    case CorruptionKind::Rotate: return "rotate";
    case CorruptionKind::DropoutLocal: return "dropout_local";
    case CorruptionKind::DropoutGlobal: return "dropout_global";
    case CorruptionKind::AddLocal: return "add_local";
    case CorruptionKind::AddGlobal: return "add_global";
  }
  return "?";
}

inline CorruptionKind parse_corruption_kind(std::string_view s) {
  for (auto k : kAllCorruptions) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown corruption kind '" + std::string(s) + "'");
}

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::Jitter;
  int level = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (level < 0 || level >= kSeverityLevels) {
      throw ContractError("corruption level must be in 0..4, got " + std::to_string(level));
    }
  }
};

/// Per-level magnitude constants.
struct LevelTable {
  static double scale_range(int l) { return 0.1 * (l + 1); }        // factor in [1/(1+s), 1+s]
  static double jitter_sigma(int l) { return 0.01 * (l + 1); }      // clipped at 3 sigma
  static double rotate_max_deg(int l) { return 7.5 * (l + 1); }     // random axis
  static double fraction(int l) { return 0.1 * (l + 1); }           // dropped / added share of N
  static int local_seeds(int l) { return l + 1; }
  static constexpr double kLocalAddSigma = 0.05;

  /// Magnitude that orders levels within a kind.
  static double magnitude(CorruptionKind k, int l) {
    switch (k) {
      case CorruptionKind::Scale: return scale_range(l);
      case CorruptionKind::Jitter: return jitter_sigma(l);
      case CorruptionKind::Rotate: return rotate_max_deg(l);
      default: return fraction(l);
    }
  }

  static nlohmann::json to_json() {
    nlohmann::json j;
    for (int l = 0; l < kSeverityLevels; ++l) {
      j["scale_range"].push_back(scale_range(l));
      j["jitter_sigma"].push_back(jitter_sigma(l));
      j["jitter_clip_sigmas"] = 3.0;
      j["rotate_max_deg"].push_back(rotate_max_deg(l));
      j["fraction"].push_back(fraction(l));
      j["local_seeds"].push_back(local_seeds(l));
    }
    j["add_local_sigma"] = kLocalAddSigma;
    return j;
  }
};

namespace detail {

inline std::vector<std::size_t> pick_distinct(CounterRng& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(count);
  return idx;
}

inline void keep_points(PointCloud& cloud, const std::vector<bool>& keep) {
  std::vector<Vec3> coords;
  std::vector<double> labels;
  for (std::size_t i = 0; i < cloud.coords.size(); ++i) {
    if (!keep[i]) continue;
    coords.push_back(cloud.coords[i]);
    if (cloud.labels) labels.push_back((*cloud.labels)[i]);
  }
  cloud.coords = std::move(coords);
  if (cloud.labels) cloud.labels = std::move(labels);
}

inline void append_point(PointCloud& cloud, const Vec3& p) {
  cloud.coords.push_back(p);
  if (cloud.labels) cloud.labels->push_back(0.0);
}

inline void require_remaining(const PointCloud& cloud) {
  if (cloud.coords.size() < 4) throw ContractError("corruption left fewer than 4 points in '" + cloud.id + "'");
}

}  // namespace detail

/// Applies one corruption. Labels follow their points: dropped points lose
/// their labels and added points are labelled 0.
inline PointCloud apply_corruption(const PointCloud& input, const CorruptionSpec& spec) {
  spec.validate();
  PointCloud out = input;
  const int l = spec.level;
  const std::size_t n = out.coords.size();
  CounterRng rng(mix_keys(spec.seed, hash_string(input.id), static_cast<std::uint64_t>(spec.kind),
                          static_cast<std::uint64_t>(l)));
  switch (spec.kind) {
    case CorruptionKind::Scale: {
      const double s = LevelTable::scale_range(l);
      const double f = rng.uniform(1.0 / (1.0 + s), 1.0 + s);
      for (auto& p : out.coords)
        for (auto& v : p) v *= f;
      break;
    }
    case CorruptionKind::Jitter: {
      const double sigma = LevelTable::jitter_sigma(l);
      for (auto& p : out.coords)
        for (auto& v : p) v += std::clamp(rng.normal(0.0, sigma), -3.0 * sigma, 3.0 * sigma);
      break;
    }
    case CorruptionKind::Rotate: {
      Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
      const double norm = std::sqrt(squared_distance(axis, Vec3{0, 0, 0}));
      for (auto& v : axis) v = norm > 0 ? v / norm : 0.0;
      if (norm == 0) axis = {0, 0, 1};
      const double angle = rng.uniform(0.0, LevelTable::rotate_max_deg(l)) * std::numbers::pi / 180.0;
      const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
      const auto [x, y, z] = axis;
      const std::array<std::array<double, 3>, 3> R{{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
                                                    {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
                                                    {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
      for (auto& p : out.coords) {
        const Vec3 q = p;
        for (int r = 0; r < 3; ++r) p[r] = R[r][0] * q[0] + R[r][1] * q[1] + R[r][2] * q[2];
      }
      break;
    }
    case CorruptionKind::DropoutGlobal: {
      const auto drop = static_cast<std::size_t>(std::llround(LevelTable::fraction(l) * static_cast<double>(n)));
      if (n - std::min(drop, n) < 4) throw ContractError("dropout_global would leave fewer than 4 points");
      std::vector<bool> keep(n, true);
      for (auto i : detail::pick_distinct(rng, n, drop)) keep[i] = false;
      detail::keep_points(out, keep);
      break;
    }
    case CorruptionKind::DropoutLocal: {
      const auto seeds = static_cast<std::size_t>(LevelTable::local_seeds(l));
      const auto per_seed = static_cast<std::size_t>(std::floor(LevelTable::fraction(l) * static_cast<double>(n) / static_cast<double>(seeds)));
      if (n < seeds * per_seed + 4) throw ContractError("dropout_local would leave fewer than 4 points");
      std::vector<bool> keep(n, true);
      std::vector<std::pair<double, std::size_t>> cand;
      for (std::size_t s = 0; s < seeds; ++s) {
        std::vector<std::size_t> alive;
        for (std::size_t i = 0; i < n; ++i)
          if (keep[i]) alive.push_back(i);
        const Vec3 center = out.coords[alive[rng.index(alive.size())]];
        cand.clear();
        for (auto i : alive) cand.emplace_back(squared_distance(out.coords[i], center), i);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(per_seed), cand.end());
        for (std::size_t j = 0; j < per_seed; ++j) keep[cand[j].second] = false;
      }
      detail::keep_points(out, keep);
      break;
    }
    case CorruptionKind::AddGlobal: {
      const auto add = static_cast<std::size_t>(std::floor(LevelTable::fraction(l) * static_cast<double>(n)));
      for (std::size_t i = 0; i < add; ++i) {
        Vec3 p{};
        do {
          for (auto& v : p) v = rng.uniform(-1.0, 1.0);
        } while (squared_distance(p, Vec3{0, 0, 0}) > 1.0);
        detail::append_point(out, p);
      }
      break;
    }
    case CorruptionKind::AddLocal: {
      const auto seeds = static_cast<std::size_t>(LevelTable::local_seeds(l));
      const auto per_seed = static_cast<std::size_t>(std::floor(LevelTable::fraction(l) * static_cast<double>(n) / static_cast<double>(seeds)));
      for (std::size_t s = 0; s < seeds; ++s) {
        const Vec3 center = input.coords[rng.index(n)];
        for (std::size_t j = 0; j < per_seed; ++j) {
          Vec3 p{};
          for (int k = 0; k < 3; ++k) p[k] = center[k] + rng.normal(0.0, LevelTable::kLocalAddSigma);
          detail::append_point(out, p);
        }
      }
      break;
    }
  }
  detail::require_remaining(out);
  return out;
}

}  // namespace hammer
