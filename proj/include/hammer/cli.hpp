#pragma once

// Command-line front end. Exit codes: 0 success, 1 invalid input (usage,
// config, contract or parse errors), 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hammer/benchmark.hpp"
#include "hammer/config.hpp"
#include "hammer/corruption.hpp"
#include "hammer/dataio.hpp"
#include "hammer/errors.hpp"
#include "hammer/gradcheck_suite.hpp"
#include "hammer/metrics.hpp"
#include "hammer/model.hpp"
#include "hammer/synthetic.hpp"
#include "hammer/trainer.hpp"

namespace hammer {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

namespace detail {

struct ConfigFlags {
  std::string config_path;
  std::string preset = "default";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "base config before --config/--set")->check(CLI::IsMember({"default", "toy"}));
    app->add_option("--set", overrides, "dotted override, e.g. optim.lr=0.001 (repeatable)");
    app->add_option("--seed", seed, "overrides the config seed");
  }

  RunConfig resolve() const {
    RunConfig c = preset == "toy" ? RunConfig::toy() : RunConfig{};
    if (!config_path.empty()) c = load_config(config_path, c);
    for (const auto& o : overrides) c = apply_override(c, o);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

inline std::vector<int> parse_levels(const std::string& text) {
  std::vector<int> levels;
  if (text == "all") {
    for (int l = 0; l < kSeverityLevels; ++l) levels.push_back(l);
    return levels;
  }
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const auto lo = parse_levels(text.substr(0, dots)), hi = parse_levels(text.substr(dots + 2));
    if (lo.size() != 1 || hi.size() != 1 || lo[0] > hi[0]) throw ConfigError("bad corruption level range '" + text + "'");
    for (int l = lo[0]; l <= hi[0]; ++l) levels.push_back(l);
    return levels;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      const int l = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      if (l < 0 || l >= kSeverityLevels) throw ConfigError("corruption level out of range: " + item);
      levels.push_back(l);
    } catch (const std::logic_error&) {
      throw ConfigError("bad corruption level '" + item + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return levels;
}

inline std::vector<CorruptionKind> parse_kinds(const std::string& text) {
  std::vector<CorruptionKind> kinds;
  if (text == "all") return {kAllCorruptions.begin(), kAllCorruptions.end()};
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    kinds.push_back(parse_corruption_kind(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return kinds;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace detail

/// Parses argv and runs one subcommand.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"hammer: intention-driven affordance grounding on point clouds"};
  app.name("hammer");
  app.require_subcommand(1);
  std::function<int()> action;

  // gen-data
  SyntheticOptions syn;
  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "write a procedural dataset with fixtures");
  gen->add_option("--out", data_out, "output directory")->required();
  gen->add_option("--classes", syn.n_classes, "number of object classes");
  gen->add_option("--affordances", syn.n_affordances, "number of affordance labels");
  gen->add_option("--samples", syn.samples, "number of samples");
  gen->add_option("--points", syn.n_points, "points per cloud");
  gen->add_option("--length", syn.hidden_length, "fixture token count L");
  gen->add_option("--width", syn.hidden_width, "fixture width d_h");
  gen->add_option("--seed", syn.seed, "generator seed");
  gen->callback([&] {
    action = [&] {
      const auto ds = gen_synthetic_dataset(data_out, syn);
      out << "wrote " << ds.size() << " samples to " << data_out << "\n";
      return kExitOk;
    };
  });

  // gen-fixtures
  std::string fix_out;
  std::size_t fix_classes = 4, fix_affordances = 2, fix_per_pair = 1, fix_length = 32, fix_width = 2048;
  std::uint64_t fix_seed = 0;
  auto* genfix = app.add_subcommand("gen-fixtures", "write stand-in hidden-state fixtures");
  genfix->add_option("--out", fix_out, "output directory")->required();
  genfix->add_option("--classes", fix_classes, "number of classes");
  genfix->add_option("--affordances", fix_affordances, "number of affordances");
  genfix->add_option("--per-pair", fix_per_pair, "fixtures per (class, affordance)");
  genfix->add_option("--length", fix_length, "token count L");
  genfix->add_option("--width", fix_width, "width d_h");
  genfix->add_option("--seed", fix_seed, "generator seed");
  genfix->callback([&] {
    action = [&] {
      std::size_t written = 0;
      for (std::size_t c = 0; c < fix_classes; ++c)
        for (std::size_t a = 0; a < fix_affordances; ++a)
          for (std::size_t i = 0; i < fix_per_pair; ++i) {
            auto h = synth_fixture(c, a, mix_keys(fix_seed, i), fix_length, fix_width);
            h.class_name = synthetic_class_name(c);
            h.affordance_name = synthetic_affordance_name(a);
            h.prompt = object_centric_prompt(h.class_name);
            write_fixture(fs::path(fix_out) / (h.class_name + "_" + h.affordance_name + "_" + std::to_string(i) + ".htns"), h);
            ++written;
          }
      out << "wrote " << written << " fixtures to " << fix_out << "\n";
      return kExitOk;
    };
  });

  // train
  detail::ConfigFlags train_flags;
  std::string train_data, train_out, train_log, train_resume;
  auto* tr = app.add_subcommand("train", "train a model");
  train_flags.attach(tr);
  tr->add_option("--data", train_data, "dataset directory (overrides data.dataset)");
  tr->add_option("--out", train_out, "run directory (overrides train.out)");
  tr->add_option("--resume", train_resume, "checkpoint directory to continue from");
  tr->add_option("--log", train_log, "JSON-lines log path (default <out>/train_log.jsonl)");
  tr->callback([&] {
    action = [&] {
      auto cfg = train_flags.resolve();
      if (!train_data.empty()) cfg.data.dataset = train_data;
      if (!train_out.empty()) cfg.train.out = train_out;
      if (!train_resume.empty()) cfg.train.resume = train_resume;
      if (cfg.data.dataset.empty()) throw ConfigError("train: no dataset given (--data or data.dataset)");
      const auto data = Dataset::open(cfg.data.dataset);
      const fs::path log_path = train_log.empty() ? fs::path(cfg.train.out) / "train_log.jsonl" : fs::path(train_log);
      if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
      std::ofstream log(log_path, cfg.train.resume.empty() ? std::ios::trunc : std::ios::app);
      if (!log) throw IoError("cannot write " + log_path.string());
      TrainOptions opt;
      opt.log_stream = &log;
      const auto result = train<float>(cfg, data, opt);
      out << "trained " << result.steps << " steps; checkpoint " << result.final_checkpoint.string() << "\n";
      return kExitOk;
    };
  });

  // eval
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--split", eval_split, "split name, or 'all'");
  ev->add_option("--out", eval_out, "directory for report.json and report.txt");
  ev->callback([&] {
    action = [&] {
      Vocabulary vocab;
      const auto model = load_model<float>(eval_ckpt, &vocab);
      const auto data = Dataset::open(eval_data);
      const auto report = evaluate(model, vocab, data, eval_split);
      const auto table = to_table(report);
      out << table;
      if (!eval_out.empty()) {
        auto j = to_json(report);
        j["config"] = to_json(model.config());
        j["checkpoint"] = eval_ckpt;
        j["dataset"] = eval_data;
        j["split"] = eval_split;
        fs::create_directories(eval_out);
        write_json(fs::path(eval_out) / "report.json", j);
        detail::write_text(fs::path(eval_out) / "report.txt", table);
      }
      return kExitOk;
    };
  });

  // corrupt
  std::string cor_data, cor_out, cor_kinds = "all", cor_levels = "all";
  std::uint64_t cor_seed = 0;
  auto* cor = app.add_subcommand("corrupt", "write corrupted copies of a dataset");
  cor->add_option("--data,--in", cor_data, "dataset directory")->required();
  cor->add_option("--out", cor_out, "output directory")->required();
  cor->add_option("--kinds", cor_kinds, "comma list of kinds, or 'all'");
  cor->add_option("--levels", cor_levels, "comma list or range (0..4) of levels, or 'all'");
  cor->add_option("--seed", cor_seed, "corruption seed");
  cor->callback([&] {
    action = [&] {
      const auto kinds = detail::parse_kinds(cor_kinds);
      const auto levels = detail::parse_levels(cor_levels);
      const auto data = Dataset::open(cor_data);
      const auto cells = generate_benchmark(data, cor_out, kinds, levels, cor_seed,
                                            {{"command", "corrupt"}, {"kinds", cor_kinds}, {"levels", cor_levels}});
      out << "wrote " << cells.size() << " corrupted sets to " << cor_out << "\n";
      return kExitOk;
    };
  });

  // pca-viz
  std::string pca_ckpt, pca_data, pca_sample, pca_out;
  auto* pca = app.add_subcommand("pca-viz", "project one sample's fused point features to 3D");
  pca->add_option("--checkpoint", pca_ckpt, "checkpoint directory")->required();
  pca->add_option("--data", pca_data, "dataset directory")->required();
  pca->add_option("--sample", pca_sample, "sample id")->required();
  pca->add_option("--out", pca_out, "output .htns file (N x 3); a .json sidecar is written next to it")->required();
  pca->callback([&] {
    action = [&] {
      Vocabulary vocab;
      const auto model = load_model<float>(pca_ckpt, &vocab);
      const auto data = Dataset::open(pca_data);
      std::optional<std::size_t> index;
      for (std::size_t i = 0; i < data.size(); ++i)
        if (data.entries()[i].id == pca_sample) index = i;
      if (!index) throw ConfigError("pca-viz: no sample with id '" + pca_sample + "'");
      const auto s = data.load(*index);
      NoGradGuard guard;
      const auto f = model.forward(s.cloud.coords, s.hidden);
      const std::vector<double> feats(f.fused.data().begin(), f.fused.data().end());
      const auto proj = pca_project(feats, f.fused.rows(), f.fused.cols(), 3);
      write_tensor_file(pca_out, make_tensor_file<double>({proj.rows, proj.k}, proj.projection));
      write_json(sidecar_path(pca_out), {{"sample", pca_sample},
                                         {"rows", proj.rows},
                                         {"components", proj.k},
                                         {"explained_variance", proj.explained_variance},
                                         {"rank_deficient", proj.rank_deficient},
                                         {"config", to_json(model.config())}});
      out << "wrote " << proj.rows << "x" << proj.k << " projection to " << pca_out << "\n";
      return kExitOk;
    };
  });

  // gradcheck
  double gc_tol = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  gc->add_option("--tolerance", gc_tol, "maximum relative error");
  gc->callback([&] {
    action = [&] {
      const auto report = run_gradcheck_suite(gc_tol);
      for (const auto& r : report.results) {
        out << (r.passed ? "ok   " : "FAIL ") << r.name << "  " << r.error << "\n";
      }
      out << report.results.size() << " checks in " << report.seconds << " s\n";
      return report.passed() ? kExitOk : kExitRuntime;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitInvalid;
  }

  try {
    return action ? action() : kExitInvalid;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const VocabularyMismatch& e) {
    err << "vocabulary mismatch: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const MissingParameterError& e) {
    err << "missing parameter '" << e.name() << "': " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ContractError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const DimensionError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace hammer
