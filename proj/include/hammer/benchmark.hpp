#pragma once

// Corrupted copies of a dataset, one directory per (kind, level) cell:
//   <out>/<kind>/level<l>/{manifest.jsonl, vocabulary.json, corruption.json,
//                          points/, labels/}
// Fixtures are not copied; manifests point back at the source files.

#include <string>
#include <vector>

#include <json.hpp>

#include "hammer/corruption.hpp"
#include "hammer/dataio.hpp"
#include "hammer/errors.hpp"

namespace hammer {

inline fs::path corruption_cell_dir(const fs::path& out, CorruptionKind kind, int level) {
  return out / to_string(kind) / ("level" + std::to_string(level));
}

/// Writes one corrupted cell and returns its directory.
inline fs::path write_corrupted_cell(const Dataset& data, const fs::path& out, const CorruptionSpec& spec,
                                     const nlohmann::json& provenance = nlohmann::json::object()) {
  spec.validate();
  const fs::path dir = corruption_cell_dir(out, spec.kind, spec.level);
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto e = data.entries()[i];
    const auto sample = data.load(i);
    const auto cloud = apply_corruption(sample.cloud, spec);
    e.points = "points/" + e.id + ".htns";
    e.labels = "labels/" + e.id + ".htns";
    e.hidden = fs::relative(fs::absolute(data.root() / data.entries()[i].hidden), fs::absolute(dir)).generic_string();
    write_points(dir / e.points, cloud.coords);
    write_labels(dir / e.labels, *cloud.labels);
    entries.push_back(std::move(e));
  }
  Dataset::write(dir, data.vocabulary(), entries);
  write_json(dir / "corruption.json", {{"kind", to_string(spec.kind)},
                                       {"level", spec.level},
                                       {"seed", spec.seed},
                                       {"magnitude", LevelTable::magnitude(spec.kind, spec.level)},
                                       {"level_table", LevelTable::to_json()},
                                       {"source", fs::absolute(data.root()).lexically_normal().generic_string()},
                                       {"samples", entries.size()},
                                       {"provenance", provenance}});
  return dir;
}

/// All requested cells. Each cell depends only on (seed, sample id, kind,
/// level), so regeneration is bitwise identical in any order.
inline std::vector<fs::path> generate_benchmark(const Dataset& data, const fs::path& out,
                                                const std::vector<CorruptionKind>& kinds, const std::vector<int>& levels,
                                                std::uint64_t seed,
                                                const nlohmann::json& provenance = nlohmann::json::object()) {
  std::vector<fs::path> cells;
  for (auto kind : kinds)
    for (int level : levels) cells.push_back(write_corrupted_cell(data, out, {kind, level, seed}, provenance));
  return cells;
}

}  // namespace hammer
