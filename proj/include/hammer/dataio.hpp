#pragma once

// File formats: the HTNS tensor container, dataset manifests (JSON lines plus
// a vocabulary file), hidden-state fixtures, and checkpoints.
//
// HTNS layout, all little-endian:
//   "HTNS" | version u8 = 1 | dtype u8 (0 f32, 1 f64) | rank u8 | pad u8 = 0
//   | rank x u64 dims | row-major payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "hammer/backbone.hpp"
#include "hammer/errors.hpp"
#include "hammer/intention.hpp"
#include "hammer/nn.hpp"
#include "hammer/optim.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::uint8_t kHtnsVersion = 1;

struct TensorFile {
  DType dtype = DType::Float32;
  Shape dims;
  std::vector<std::uint8_t> payload;

  std::size_t element_size() const { return dtype == DType::Float32 ? 4 : 8; }
};

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

template <class T>
void put_scalar(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <class T>
T get_scalar(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

template <class T>
TensorFile make_tensor_file(const Shape& dims, std::span<const T> values) {
  if (shape_numel(dims) != values.size()) throw DimensionError("tensor file: value count does not match dims");
  TensorFile f;
  f.dtype = dtype_of<T>();
  f.dims = dims;
  f.payload.reserve(values.size() * sizeof(T));
  for (const T v : values) detail::put_scalar(f.payload, v);
  return f;
}

inline std::vector<std::uint8_t> encode_tensor_file(const TensorFile& f) {
  if (f.dims.size() > 255) throw ContractError("tensor file: rank exceeds 255");
  if (f.payload.size() != shape_numel(f.dims) * f.element_size()) throw ContractError("tensor file: payload size mismatch");
  std::vector<std::uint8_t> out{'H', 'T', 'N', 'S', kHtnsVersion, static_cast<std::uint8_t>(f.dtype),
                                static_cast<std::uint8_t>(f.dims.size()), 0};
  for (auto d : f.dims) detail::put_u64(out, d);
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

/// Parses a whole HTNS buffer; throws ParseError without producing a partial tensor.
inline TensorFile decode_tensor_file(std::span<const std::uint8_t> bytes, const std::string& what = "tensor file") {
  if (bytes.size() < 8) throw ParseError(what + ": truncated header");
  if (std::memcmp(bytes.data(), "HTNS", 4) != 0) throw ParseError(what + ": bad magic");
  if (bytes[4] != kHtnsVersion) throw ParseError(what + ": unsupported version " + std::to_string(bytes[4]));
  if (bytes[5] > 1) throw ParseError(what + ": unknown dtype " + std::to_string(bytes[5]));
  if (bytes[7] != 0) throw ParseError(what + ": non-zero pad byte");
  TensorFile f;
  f.dtype = static_cast<DType>(bytes[5]);
  const std::size_t rank = bytes[6];
  if (bytes.size() < 8 + 8 * rank) throw ParseError(what + ": truncated dims");
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint64_t d = detail::get_u64(bytes.data() + 8 + 8 * i);
    if (d == 0) throw ParseError(what + ": zero extent");
    if (count > std::numeric_limits<std::uint64_t>::max() / d) throw ParseError(what + ": dim overflow");
    count *= d;
    f.dims.push_back(static_cast<std::size_t>(d));
  }
  const std::size_t header = 8 + 8 * rank;
  const std::uint64_t available = bytes.size() - header;
  if (count > available / f.element_size()) throw ParseError(what + ": payload truncated or dims overflow");
  if (count * f.element_size() != available) throw ParseError(what + ": trailing bytes after payload");
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return f;
}

/// Values of a tensor file converted to T.
template <class T>
std::vector<T> tensor_file_values(const TensorFile& f) {
  const std::size_t n = shape_numel(f.dims);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f.dtype == DType::Float32 ? static_cast<T>(detail::get_scalar<float>(f.payload.data() + 4 * i))
                                       : static_cast<T>(detail::get_scalar<double>(f.payload.data() + 8 * i));
  }
  return out;
}

inline TensorFile read_tensor_file(const fs::path& path) {
  const auto bytes = detail::read_bytes(path);
  return decode_tensor_file(bytes, path.string());
}

inline void write_tensor_file(const fs::path& path, const TensorFile& f) {
  const auto bytes = encode_tensor_file(f);
  detail::write_bytes(path, bytes);
}

template <class T>
void write_tensor(const fs::path& path, const Tensor<T>& t) {
  write_tensor_file(path, make_tensor_file<T>(t.shape(), t.data()));
}

/// Reads a tensor whose stored dtype must equal T.
template <class T>
Tensor<T> read_tensor(const fs::path& path) {
  const auto f = read_tensor_file(path);
  if (f.dtype != dtype_of<T>()) throw ParseError(path.string() + ": stored dtype differs from requested");
  return Tensor<T>::from(f.dims, tensor_file_values<T>(f));
}

// ---------------------------------------------------------------------------
// JSON helpers

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  detail::write_bytes(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// Point clouds and fixtures

inline void write_points(const fs::path& path, std::span<const Vec3> coords) {
  std::vector<float> v;
  v.reserve(coords.size() * 3);
  for (const auto& p : coords)
    for (double c : p) v.push_back(static_cast<float>(c));
  write_tensor_file(path, make_tensor_file<float>({coords.size(), 3}, v));
}

inline std::vector<Vec3> read_points(const fs::path& path) {
  const auto f = read_tensor_file(path);
  if (f.dims.size() != 2 || f.dims[1] != 3) throw ParseError(path.string() + ": expected an N x 3 point array");
  const auto v = tensor_file_values<double>(f);
  std::vector<Vec3> out(f.dims[0]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return out;
}

inline void write_labels(const fs::path& path, std::span<const double> labels) {
  std::vector<float> v(labels.begin(), labels.end());
  write_tensor_file(path, make_tensor_file<float>({labels.size()}, v));
}

inline std::vector<double> read_labels(const fs::path& path) {
  const auto f = read_tensor_file(path);
  if (f.dims.size() != 1) throw ParseError(path.string() + ": expected a label vector");
  return tensor_file_values<double>(f);
}

inline fs::path sidecar_path(const fs::path& tensor_path) {
  auto p = tensor_path;
  return p.replace_extension(".json");
}

/// States tensor plus a JSON sidecar {cont_index, prompt, class_name,
/// affordance_name, affordance_id} next to it.
inline void write_fixture(const fs::path& path, const HiddenStates& h) {
  h.validate();
  write_tensor_file(path, make_tensor_file<float>({h.length, h.width}, h.states));
  write_json(sidecar_path(path), json{{"cont_index", h.cont_index},
                                      {"prompt", h.prompt},
                                      {"class_name", h.class_name},
                                      {"affordance_name", h.affordance_name},
                                      {"affordance_id", h.affordance_id}});
}

inline HiddenStates read_fixture(const fs::path& path) {
  const auto f = read_tensor_file(path);
  if (f.dims.size() != 2 || f.dtype != DType::Float32) throw ParseError(path.string() + ": expected an L x d_h float32 array");
  HiddenStates h;
  h.length = f.dims[0];
  h.width = f.dims[1];
  h.states = tensor_file_values<float>(f);
  const auto side = read_json(sidecar_path(path));
  try {
    h.cont_index = side.at("cont_index").get<std::size_t>();
    h.prompt = side.at("prompt").get<std::string>();
    h.class_name = side.at("class_name").get<std::string>();
    h.affordance_name = side.at("affordance_name").get<std::string>();
    h.affordance_id = side.at("affordance_id").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError(sidecar_path(path).string() + ": " + e.what());
  }
  h.validate();
  return h;
}

// ---------------------------------------------------------------------------
// Datasets

struct Vocabulary {
  std::vector<std::string> classes;
  std::vector<std::string> affordances;

  std::size_t affordance_index(const std::string& name) const { return index_of(affordances, name, "affordance"); }
  std::size_t class_index(const std::string& name) const { return index_of(classes, name, "class"); }

  json to_json() const { return json{{"classes", classes}, {"affordances", affordances}}; }
  static Vocabulary from_json(const json& j) {
    Vocabulary v;
    try {
      v.classes = j.at("classes").get<std::vector<std::string>>();
      v.affordances = j.at("affordances").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("vocabulary: ") + e.what());
    }
    return v;
  }
  bool operator==(const Vocabulary&) const = default;

 private:
  static std::size_t index_of(const std::vector<std::string>& v, const std::string& name, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] == name) return i;
    throw ParseError(std::string("unknown ") + what + " '" + name + "'");
  }
};

struct ManifestEntry {
  std::string id;
  std::string class_name;
  std::string affordance_name;
  std::size_t affordance_id = 0;
  std::string points;  // paths relative to the manifest directory
  std::string labels;
  std::string hidden;
  std::size_t cont_index = 0;
  std::string prompt;
  std::string split = "train";

  json to_json() const {
    return json{{"id", id},         {"class_name", class_name}, {"affordance_name", affordance_name},
                {"affordance_id", affordance_id}, {"points", points}, {"labels", labels},
                {"hidden", hidden}, {"cont_index", cont_index}, {"prompt", prompt}, {"split", split}};
  }

  static ManifestEntry from_json(const json& j) {
    ManifestEntry e;
    try {
      e.id = j.at("id").get<std::string>();
      e.class_name = j.at("class_name").get<std::string>();
      e.affordance_name = j.at("affordance_name").get<std::string>();
      e.affordance_id = j.at("affordance_id").get<std::size_t>();
      e.points = j.at("points").get<std::string>();
      e.labels = j.at("labels").get<std::string>();
      e.hidden = j.at("hidden").get<std::string>();
      e.cont_index = j.at("cont_index").get<std::size_t>();
      e.prompt = j.at("prompt").get<std::string>();
      e.split = j.value("split", std::string("train"));
    } catch (const json::exception& ex) {
      throw ParseError(std::string("manifest entry: ") + ex.what());
    }
    return e;
  }
};

struct Sample {
  PointCloud cloud;
  HiddenStates hidden;
  std::size_t class_id = 0;
};

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kVocabularyName = "vocabulary.json";

class Dataset {
 public:
  /// Reads `dir/manifest.jsonl` and `dir/vocabulary.json`.
  static Dataset open(const fs::path& dir) {
    Dataset ds;
    ds.root_ = dir;
    ds.vocab_ = Vocabulary::from_json(read_json(dir / kVocabularyName));
    std::ifstream in(dir / kManifestName);
    if (!in) throw IoError("cannot open " + (dir / kManifestName).string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        ds.entries_.push_back(ManifestEntry::from_json(json::parse(line)));
      } catch (const json::parse_error& e) {
        throw ParseError(detail::concat((dir / kManifestName).string(), ":", lineno, ": ", e.what()));
      }
    }
    for (const auto& e : ds.entries_) {
      if (e.affordance_id >= ds.vocab_.affordances.size() || ds.vocab_.affordances[e.affordance_id] != e.affordance_name) {
        throw ParseError("manifest entry '" + e.id + "': affordance_id inconsistent with the vocabulary");
      }
      ds.vocab_.class_index(e.class_name);
    }
    return ds;
  }

  static void write(const fs::path& dir, const Vocabulary& vocab, const std::vector<ManifestEntry>& entries) {
    fs::create_directories(dir);
    write_json(dir / kVocabularyName, vocab.to_json());
    std::string text;
    for (const auto& e : entries) text += e.to_json().dump() + "\n";
    detail::write_bytes(dir / kManifestName,
                        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  const fs::path& root() const { return root_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Entry indices whose split matches (all entries for an empty split).
  std::vector<std::size_t> split_indices(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (split.empty() || split == "all" || entries_[i].split == split) out.push_back(i);
    return out;
  }

  Sample load(std::size_t i) const {
    const auto& e = entries_.at(i);
    Sample s;
    s.cloud.id = e.id;
    s.cloud.class_name = e.class_name;
    s.cloud.affordance_name = e.affordance_name;
    s.cloud.coords = read_points(root_ / e.points);
    s.cloud.labels = read_labels(root_ / e.labels);
    s.cloud.validate();
    s.hidden = read_fixture(root_ / e.hidden);
    if (s.hidden.cont_index != e.cont_index) throw ParseError("sample '" + e.id + "': cont_index disagrees with fixture sidecar");
    if (s.hidden.affordance_id != e.affordance_id) throw ParseError("sample '" + e.id + "': affordance_id disagrees with fixture sidecar");
    s.class_id = vocab_.class_index(e.class_name);
    return s;
  }

  /// Loads every referenced file once; throws on the first invalid sample.
  void validate() const {
    for (std::size_t i = 0; i < entries_.size(); ++i) (void)load(i);
  }

 private:
  fs::path root_;
  Vocabulary vocab_;
  std::vector<ManifestEntry> entries_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline std::string parameter_file_name(const std::string& name) { return "params/" + name + ".htns"; }

struct CheckpointContents {
  json config;
  std::uint64_t step = 0;
  json rng;
  Vocabulary vocabulary;
};

/// dir/manifest.json plus one HTNS file per parameter (and per AdamW moment
/// buffer when an optimizer state is given).
template <class T>
void save_checkpoint(const fs::path& dir, const ParameterSet<T>& params, const json& config, std::uint64_t step,
                     const json& rng, const Vocabulary& vocab, const AdamWState<T>* optim = nullptr) {
  fs::create_directories(dir / "params");
  json files = json::object();
  for (const auto& [name, t] : params.items()) {
    write_tensor(dir / parameter_file_name(name), t);
    files[name] = parameter_file_name(name);
  }
  json manifest{{"format", "hammer-checkpoint-1"}, {"config", config},           {"step", step},
                {"rng", rng},                      {"parameters", files},        {"vocabulary", vocab.to_json()},
                {"dtype", dtype_of<T>() == DType::Float32 ? "float32" : "float64"}};
  if (optim) {
    fs::create_directories(dir / "optim");
    json m = json::object();
    std::size_t i = 0;
    for (const auto& [name, t] : params.items()) {
      const auto mf = "optim/" + name + ".m.htns", vf = "optim/" + name + ".v.htns";
      write_tensor_file(dir / mf, make_tensor_file<T>(t.shape(), optim->first_moment[i]));
      write_tensor_file(dir / vf, make_tensor_file<T>(t.shape(), optim->second_moment[i]));
      m[name] = {{"m", mf}, {"v", vf}};
      ++i;
    }
    manifest["optimizer"] = {{"step", optim->step}, {"moments", m}};
  }
  write_json(dir / "manifest.json", manifest);
}

inline json read_checkpoint_manifest(const fs::path& dir) { return read_json(dir / "manifest.json"); }

/// Loads parameter values into `params` (which fixes names and shapes) and,
/// if requested, restores the optimizer state.
template <class T>
CheckpointContents load_checkpoint(const fs::path& dir, ParameterSet<T>& params, AdamWState<T>* optim = nullptr) {
  const auto manifest = read_checkpoint_manifest(dir);
  CheckpointContents out;
  try {
    out.config = manifest.at("config");
    out.step = manifest.at("step").get<std::uint64_t>();
    out.rng = manifest.value("rng", json::object());
    out.vocabulary = Vocabulary::from_json(manifest.at("vocabulary"));
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  const auto& files = manifest.at("parameters");
  for (const auto& [name, t] : params.items()) {
    if (!files.contains(name)) throw MissingParameterError(name, "checkpoint has no entry for parameter '" + name + "'");
    const fs::path file = dir / files.at(name).template get<std::string>();
    if (!fs::exists(file)) throw MissingParameterError(name, "checkpoint parameter file missing for '" + name + "': " + file.string());
    const auto loaded = read_tensor<T>(file);
    if (loaded.shape() != t.shape()) {
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_str(loaded.shape()) + ", model expects " +
                        shape_str(t.shape()));
    }
    Tensor<T> handle = t;
    auto dst = handle.mutable_data();
    std::copy(loaded.data().begin(), loaded.data().end(), dst.begin());
  }
  if (optim) {
    if (!manifest.contains("optimizer")) throw ParseError("checkpoint has no optimizer state");
    const auto& o = manifest.at("optimizer");
    optim->step = o.at("step").get<std::uint64_t>();
    optim->first_moment.clear();
    optim->second_moment.clear();
    for (const auto& [name, t] : params.items()) {
      const auto& entry = o.at("moments").at(name);
      const auto m = read_tensor<T>(dir / entry.at("m").template get<std::string>());
      const auto v = read_tensor<T>(dir / entry.at("v").template get<std::string>());
      optim->first_moment.push_back(m.to_vector());
      optim->second_moment.push_back(v.to_vector());
    }
  }
  return out;
}

}  // namespace hammer
