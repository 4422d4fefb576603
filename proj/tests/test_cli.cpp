#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "hammer/cli.hpp"

using namespace hammer;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hammer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

int exit_status(const std::string& command) {
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> tiny_model_flags() {
  return {"--preset", "toy", "--set", "model.n_points=128", "--set", "model.d=16", "--set", "model.hidden_width=32",
          "--set", "model.hidden_length=4", "--set", "model.cont_width=8", "--set", "optim.epochs=1",
          "--set", "optim.batch_size=4"};
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, kExitInvalid);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitInvalid);
  EXPECT_EQ(cli({"gradcheck", "--bogus"}).code, kExitInvalid);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST(Cli, EvalWithoutCheckpointNamesFlag) {
  auto r = cli({"eval", "--data", "somewhere"});
  EXPECT_EQ(r.code, kExitInvalid);
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos);
  // Same contract through the real executable.
  EXPECT_EQ(exit_status(std::string(HAMMER_CLI_PATH) + " eval --data x >/dev/null 2>&1"), 1);
  EXPECT_EQ(exit_status(std::string(HAMMER_CLI_PATH) + " --help >/dev/null 2>&1"), 0);
}

TEST(Cli, GradcheckPassesAndFailsOnTinyTolerance) {
  auto ok = cli({"gradcheck"});
  EXPECT_EQ(ok.code, kExitOk) << ok.out;
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
  auto strict = cli({"gradcheck", "--tolerance", "1e-300"});
  EXPECT_NE(strict.code, kExitOk);
}

TEST(Cli, ConfigErrorsExitOne) {
  TempDir tmp("hammer_test_cli_config");
  auto r = cli({"train", "--data", (tmp.path / "none").string(), "--set", "optim.nope=1"});
  EXPECT_EQ(r.code, kExitInvalid);
  EXPECT_NE(r.err.find("optim.nope"), std::string::npos);
  EXPECT_EQ(cli({"train", "--preset", "toy"}).code, kExitInvalid);  // no dataset
  EXPECT_EQ(cli({"corrupt", "--data", "x", "--out", "y", "--kinds", "melt"}).code, kExitInvalid);
  EXPECT_EQ(cli({"corrupt", "--data", "x", "--out", "y", "--levels", "7"}).code, kExitInvalid);
}

TEST(Cli, EndToEnd) {
  TempDir tmp("hammer_test_cli_e2e");
  const auto data = (tmp.path / "data").string();
  ASSERT_EQ(cli({"gen-data", "--out", data, "--classes", "1", "--samples", "8", "--points", "128", "--length", "4", "--width", "32"}).code,
            kExitOk);

  auto train_args = std::vector<std::string>{"train", "--data", data, "--out", (tmp.path / "run").string(), "--seed", "3"};
  for (const auto& f : tiny_model_flags()) train_args.push_back(f);
  auto tr = cli(train_args);
  ASSERT_EQ(tr.code, kExitOk) << tr.err;
  const auto ckpt = (tmp.path / "run" / "final").string();
  EXPECT_TRUE(fs::exists(tmp.path / "run" / "train_log.jsonl"));
  EXPECT_EQ(read_checkpoint_manifest(ckpt)["config"]["seed"], 3);

  auto ev = cli({"eval", "--checkpoint", ckpt, "--data", data, "--out", (tmp.path / "eval").string()});
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  EXPECT_NE(ev.out.find("overall"), std::string::npos);
  auto report = read_json(tmp.path / "eval" / "report.json");
  EXPECT_TRUE(report.contains("config"));
  EXPECT_TRUE(report.contains("overall"));
  auto again = cli({"eval", "--checkpoint", ckpt, "--data", data});
  EXPECT_EQ(again.out, ev.out);

  const auto proj = tmp.path / "pca" / "s00001.htns";
  auto pv = cli({"pca-viz", "--checkpoint", ckpt, "--data", data, "--sample", "s00001", "--out", proj.string()});
  ASSERT_EQ(pv.code, kExitOk) << pv.err;
  auto f = read_tensor_file(proj);
  EXPECT_EQ(f.dims, (Shape{128, 3}));
  EXPECT_TRUE(fs::exists(sidecar_path(proj)));
  EXPECT_EQ(cli({"pca-viz", "--checkpoint", ckpt, "--data", data, "--sample", "nope", "--out", proj.string()}).code,
            kExitInvalid);

  auto cor = cli({"corrupt", "--in", data, "--out", (tmp.path / "bench").string(), "--kinds", "jitter,rotate",
                  "--levels", "0..4", "--seed", "5"});
  ASSERT_EQ(cor.code, kExitOk) << cor.err;
  for (int l = 0; l < 5; ++l) {
    EXPECT_TRUE(fs::exists(tmp.path / "bench" / "jitter" / ("level" + std::to_string(l)) / "corruption.json"));
    EXPECT_TRUE(fs::exists(tmp.path / "bench" / "rotate" / ("level" + std::to_string(l)) / "manifest.jsonl"));
  }
  auto cev = cli({"eval", "--checkpoint", ckpt, "--data", (tmp.path / "bench" / "jitter" / "level4").string(),
                  "--split", "all"});
  EXPECT_EQ(cev.code, kExitOk) << cev.err;

  // A checkpoint trained on another vocabulary is rejected.
  const auto other = (tmp.path / "other").string();
  ASSERT_EQ(cli({"gen-data", "--out", other, "--samples", "6", "--points", "128", "--length", "4", "--width", "32",
                 "--affordances", "3"})
                .code,
            kExitOk);
  auto mismatch = cli({"eval", "--checkpoint", ckpt, "--data", other});
  EXPECT_EQ(mismatch.code, kExitInvalid);
  EXPECT_NE(mismatch.err.find("vocabulary"), std::string::npos);

  // Resume continues the log and the step count.
  auto resume_args = train_args;
  resume_args[4] = (tmp.path / "run2").string();
  resume_args.push_back("--resume");
  resume_args.push_back(ckpt);
  resume_args.push_back("--set");
  resume_args.push_back("optim.epochs=2");
  auto rr = cli(resume_args);
  ASSERT_EQ(rr.code, kExitOk) << rr.err;
  EXPECT_EQ(read_checkpoint_manifest(tmp.path / "run2" / "final")["step"], 4);
}

TEST(Cli, GenFixtures) {
  TempDir tmp("hammer_test_cli_fixtures");
  auto r = cli({"gen-fixtures", "--out", tmp.path.string(), "--classes", "2", "--affordances", "2", "--length", "3",
                "--width", "8"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto h = read_fixture(tmp.path / "chair_contain_0.htns");
  EXPECT_EQ(h.length, 3u);
  EXPECT_EQ(h.width, 8u);
  EXPECT_EQ(h.cont_index, 2u);
  EXPECT_EQ(h.states, synth_fixture(1, 1, mix_keys(0, 0), 3, 8).states);
}
