#pragma once

// Procedural desk-scale dataset: four part-based shape archetypes whose parts
// act as affordance regions, each sample paired with a synthetic fixture.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "hammer/backbone.hpp"
#include "hammer/dataio.hpp"
#include "hammer/errors.hpp"
#include "hammer/intention.hpp"
#include "hammer/rng.hpp"

namespace hammer {

inline const std::vector<std::string>& affordance_names() {
  static const std::vector<std::string> names{"grasp", "contain", "support", "sit",   "pour",    "open",
                                              "lift",  "pound",   "cut",     "stab",  "push",    "press",
                                              "move",  "wear",    "display", "listen", "wrapgrasp"};
  return names;
}

inline std::string synthetic_class_name(std::size_t c) {
  static const std::array<const char*, 4> base{"mug", "chair", "hammer", "bottle"};
  std::string name = base[c % 4];
  if (c >= 4) name += "_v" + std::to_string(c / 4);
  return name;
}

inline std::string synthetic_affordance_name(std::size_t a) {
  const auto& names = affordance_names();
  return a < names.size() ? names[a] : "affordance_" + std::to_string(a);
}

namespace detail {

struct Part {
  double fraction;
  std::function<Vec3(CounterRng&)> sample;
};

inline Vec3 cylinder_side(CounterRng& r, double cx, double cy, double radius, double z0, double z1) {
  const double t = r.uniform(0.0, 2.0 * std::numbers::pi);
  return {cx + radius * std::cos(t), cy + radius * std::sin(t), r.uniform(z0, z1)};
}

inline Vec3 disk(CounterRng& r, double cx, double cy, double radius, double z) {
  const double t = r.uniform(0.0, 2.0 * std::numbers::pi);
  const double s = radius * std::sqrt(r.uniform());
  return {cx + s * std::cos(t), cy + s * std::sin(t), z};
}

inline Vec3 box_surface(CounterRng& r, const Vec3& lo, const Vec3& hi) {
  const double ax = hi[1] - lo[1], ay = hi[0] - lo[0], az = hi[2] - lo[2];
  const double areas[3] = {ax * az, ay * az, ax * ay};  // faces normal to x, y, z
  const double pick = r.uniform(0.0, areas[0] + areas[1] + areas[2]);
  Vec3 p{r.uniform(lo[0], hi[0]), r.uniform(lo[1], hi[1]), r.uniform(lo[2], hi[2])};
  const bool upper = r.uniform() < 0.5;
  if (pick < areas[0]) p[0] = upper ? hi[0] : lo[0];
  else if (pick < areas[0] + areas[1]) p[1] = upper ? hi[1] : lo[1];
  else p[2] = upper ? hi[2] : lo[2];
  return p;
}

/// Parts of archetype `kind`, listed in affordance order. `s` holds per-sample
/// dimension factors near 1.
inline std::vector<Part> archetype_parts(std::size_t kind, const std::array<double, 3>& s) {
  switch (kind % 4) {
    case 0: {  // mug: handle, rim, body
      const double R = 0.5 * s[0], H = 1.0 * s[1];
      return {
          {0.25, [=](CounterRng& r) {
             const double t = r.uniform(-0.5 * std::numbers::pi, 0.5 * std::numbers::pi);
             const double u = r.uniform(0.0, 2.0 * std::numbers::pi);
             const double major = 0.25 * s[2], minor = 0.05;
             const double rr = major + minor * std::cos(u);
             return Vec3{R + 0.05 + rr * std::cos(t), minor * std::sin(u), 0.5 * H + rr * std::sin(t)};
           }},
          {0.30, [=](CounterRng& r) {
             const double u = r.uniform(0.0, 2.0 * std::numbers::pi);
             const double t = r.uniform(0.0, 2.0 * std::numbers::pi);
             const double rr = R + 0.04 * std::cos(u);
             return Vec3{rr * std::cos(t), rr * std::sin(t), H + 0.04 * std::sin(u)};
           }},
          {0.45, [=](CounterRng& r) {
             return r.uniform() < 0.8 ? cylinder_side(r, 0, 0, R, 0.0, H - 0.06) : disk(r, 0, 0, R, 0.0);
           }},
      };
    }
    case 1: {  // chair: seat, back, legs
      const double W = 0.8 * s[0], Z = 0.5 * s[1], B = 0.7 * s[2];
      return {
          {0.35, [=](CounterRng& r) { return box_surface(r, {-W / 2, -W / 2, Z}, {W / 2, W / 2, Z + 0.06}); }},
          {0.30, [=](CounterRng& r) {
             return box_surface(r, {-W / 2, -W / 2 - 0.06, Z + 0.1}, {W / 2, -W / 2, Z + 0.1 + B});
           }},
          {0.35, [=](CounterRng& r) {
             const auto leg = r.index(4);
             const double x = (leg & 1 ? 1 : -1) * (W / 2 - 0.05), y = (leg & 2 ? 1 : -1) * (W / 2 - 0.05);
             return cylinder_side(r, x, y, 0.035, 0.0, Z - 0.03);
           }},
      };
    }
    case 2: {  // hammer: handle, striking face, head
      const double L = 1.0 * s[0], hr = 0.12 * s[1], hl = 0.5 * s[2];
      return {
          {0.45, [=](CounterRng& r) {
             const Vec3 p = cylinder_side(r, 0, 0, 0.05, -L, -0.15);
             return Vec3{p[2], p[1], p[0]};  // along x
           }},
          {0.25, [=](CounterRng& r) {
             const Vec3 p = disk(r, 0, 0, hr, hl / 2 + 0.02);
             return Vec3{p[0], p[1], p[2]};
           }},
          {0.30, [=](CounterRng& r) { return cylinder_side(r, 0, 0, hr, -hl / 2, hl / 2); }},
      };
    }
    default: {  // bottle: neck, body, cap
      const double R = 0.35 * s[0], H = 0.7 * s[1], n = 0.12 * s[2];
      return {
          {0.30, [=](CounterRng& r) { return cylinder_side(r, 0, 0, n, H + 0.05, H + 0.32); }},
          {0.45, [=](CounterRng& r) {
             return r.uniform() < 0.85 ? cylinder_side(r, 0, 0, R, 0.0, H) : disk(r, 0, 0, R, H);
           }},
          {0.25, [=](CounterRng& r) {
             return r.uniform() < 0.6 ? cylinder_side(r, 0, 0, n + 0.02, H + 0.4, H + 0.5) : disk(r, 0, 0, n + 0.02, H + 0.5);
           }},
      };
    }
  }
}

}  // namespace detail

struct SyntheticOptions {
  std::size_t n_classes = 4;
  std::size_t n_affordances = 2;
  std::size_t samples = 64;
  std::size_t n_points = 2048;
  std::uint64_t seed = 0;
  std::size_t hidden_length = 32;
  std::size_t hidden_width = 2048;
  /// Labels of points outside the region decay as exp(-d^2 / (2 w^2)), cut at 3w.
  double falloff = 0.03;
};

/// One procedural sample: the labelled part for `affordance_id` gets 1.0,
/// nearby points of other parts a smooth falloff. Normalized to the unit sphere.
inline PointCloud synth_shape(std::size_t class_id, std::size_t affordance_id, std::size_t n_points, std::uint64_t seed,
                              double falloff = 0.03) {
  CounterRng rng(mix_keys(seed, class_id, affordance_id, 0x5348415045ULL));
  std::array<double, 3> s{};
  for (auto& v : s) v = rng.uniform(0.85, 1.15);
  if (class_id >= 4) s[static_cast<std::size_t>(class_id / 4) % 3] *= 1.0 + 0.15 * static_cast<double>(class_id / 4);
  auto parts = detail::archetype_parts(class_id, s);
  const std::size_t target = affordance_id % parts.size();

  PointCloud cloud;
  std::vector<std::size_t> part_of;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t count = k + 1 == parts.size()
                                  ? n_points - assigned
                                  : static_cast<std::size_t>(std::llround(parts[k].fraction * static_cast<double>(n_points)));
    for (std::size_t i = 0; i < count; ++i) {
      cloud.coords.push_back(parts[k].sample(rng));
      part_of.push_back(k);
    }
    assigned += count;
  }
  const double yaw = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
  for (auto& p : cloud.coords) {
    const double x = p[0], y = p[1];
    p[0] = std::cos(yaw) * x - std::sin(yaw) * y;
    p[1] = std::sin(yaw) * x + std::cos(yaw) * y;
  }
  normalize_unit_sphere(cloud);

  std::vector<double> labels(cloud.coords.size(), 0.0);
  std::vector<std::size_t> region;
  for (std::size_t i = 0; i < part_of.size(); ++i)
    if (part_of[i] == target) region.push_back(i);
  const double cut2 = 9.0 * falloff * falloff;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (part_of[i] == target) {
      labels[i] = 1.0;
      continue;
    }
    double best = cut2;
    for (auto j : region) best = std::min(best, squared_distance(cloud.coords[i], cloud.coords[j]));
    if (best < cut2) labels[i] = std::exp(-best / (2.0 * falloff * falloff));
  }
  cloud.labels = std::move(labels);
  cloud.class_name = synthetic_class_name(class_id);
  cloud.affordance_name = synthetic_affordance_name(affordance_id);
  return cloud;
}

/// Writes manifest.jsonl, vocabulary.json, points/, labels/ and hidden/ under
/// `out`. Sample i uses combination i mod (classes x affordances); every
/// fourth instance of a combination is held out (split "test").
inline Dataset gen_synthetic_dataset(const fs::path& out, const SyntheticOptions& opt) {
  if (opt.n_classes < 1 || opt.n_affordances < 1 || opt.samples < 1) throw ConfigError("gen-data: counts must be >= 1");
  if (opt.n_points < 4) throw ConfigError("gen-data: need at least 4 points per cloud");
  Vocabulary vocab;
  for (std::size_t c = 0; c < opt.n_classes; ++c) vocab.classes.push_back(synthetic_class_name(c));
  for (std::size_t a = 0; a < opt.n_affordances; ++a) vocab.affordances.push_back(synthetic_affordance_name(a));
  const std::size_t combos = opt.n_classes * opt.n_affordances;

  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < opt.samples; ++i) {
    const std::size_t combo = i % combos, instance = i / combos;
    const std::size_t c = combo / opt.n_affordances, a = combo % opt.n_affordances;
    char id[32];
    std::snprintf(id, sizeof id, "s%05zu", i);
    const std::uint64_t sample_seed = mix_keys(opt.seed, i);

    auto cloud = synth_shape(c, a, opt.n_points, sample_seed, opt.falloff);
    cloud.id = id;
    auto hidden = synth_fixture(c, a, sample_seed, opt.hidden_length, opt.hidden_width);
    hidden.class_name = vocab.classes[c];
    hidden.affordance_name = vocab.affordances[a];
    hidden.prompt = object_centric_prompt(hidden.class_name);

    ManifestEntry e;
    e.id = id;
    e.class_name = hidden.class_name;
    e.affordance_name = hidden.affordance_name;
    e.affordance_id = a;
    e.points = std::string("points/") + id + ".htns";
    e.labels = std::string("labels/") + id + ".htns";
    e.hidden = std::string("hidden/") + id + ".htns";
    e.cont_index = hidden.cont_index;
    e.prompt = hidden.prompt;
    e.split = instance % 4 == 3 ? "test" : "train";

    write_points(out / e.points, cloud.coords);
    write_labels(out / e.labels, *cloud.labels);
    write_fixture(out / e.hidden, hidden);
    entries.push_back(std::move(e));
  }
  Dataset::write(out, vocab, entries);
  return Dataset::open(out);
}

}  // namespace hammer
