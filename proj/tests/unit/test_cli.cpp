#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "m4c/cli/cli.hpp"
#include "m4c/cli/run_config.hpp"
#include "m4c/errors.hpp"
#include "test_support.hpp"

using namespace m4c;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "m4c");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small, fast model for end-to-end runs.
void write_tiny_config(const fs::path& path, std::size_t iters) {
  std::ofstream out(path);
  out << "# tiny model\n"
         "hidden_dim = 16\nnum_layers = 1\nnum_heads = 2\nffn_dim = 32\n"
         "max_question_words = 6\nmax_objects = 2\nmax_ocr_tokens = 6\nmax_decode_steps = 3\n"
         "dropout = 0.1\n"
         "base_lr = 0.001\nwarmup_iters = 2\ndecay_steps = 6\nmax_iters = "
      << iters << "\nbatch_size = 4\neval_interval = 5\n"
      << "min_tokens = 2\nmax_tokens = 5\n";
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"fly"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"predict"}).code, cli::kExitUsage);  // --model required
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

TEST(Cli, Phoc) {
  auto r = run({"phoc", "ab"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "0 37 72 145 180 216 253 289\n");
  EXPECT_EQ(run({"phoc", "AB"}).out, r.out);
  r = run({"phoc", ""});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "\n");
}

TEST(Cli, ValidationErrors) {
  const auto dir = m4c::testing::temp_dir("cli_bad");
  EXPECT_EQ(run({"gen", "--out", (dir / "d").string(), "--set", "bogus=1"}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"gen", "--out", (dir / "d").string(), "--family", "nope"}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"gen"}).code, cli::kExitInvalid);  // no --out
  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "hidden_dim = 8\nthis line has no separator\n";
  }
  const auto r = run({"gen", "--config", (dir / "bad.cfg").string(), "--out", (dir / "d").string()});
  EXPECT_EQ(r.code, cli::kExitInvalid);
  EXPECT_NE(r.err.find("2"), std::string::npos);
  EXPECT_EQ(run({"eval", "--predictions", (dir / "missing.jsonl").string(), "--data",
                 (dir / "nowhere").string()})
                .code,
            cli::kExitRuntime);
  fs::remove_all(dir);
}

TEST(Cli, ConfigPrecedence) {
  const auto dir = m4c::testing::temp_dir("cli_cfg");
  {
    std::ofstream cfg(dir / "a.cfg");
    cfg << "seed = 3\nhidden_dim = 64\nnum_heads = 4\n";
  }
  cli::RunConfig rc;
  cli::load_run_config(dir / "a.cfg", rc);
  EXPECT_EQ(rc.seed, 3u);
  EXPECT_EQ(rc.model.hidden_dim, 64u);
  EXPECT_EQ(rc.model.num_layers, 4u);  // untouched default
  rc.set("decay_steps", "10,20");
  EXPECT_EQ(rc.schedule.decay_steps, (std::vector<std::size_t>{10, 20}));
  EXPECT_THROW(rc.set("hidden_dim", "many"), ValidationError);
  std::ostringstream out;
  cli::write_run_config(out, rc);
  cli::RunConfig back;
  std::istringstream in(out.str());
  cli::read_run_config(in, back);
  std::ostringstream again;
  cli::write_run_config(again, back);
  EXPECT_EQ(out.str(), again.str());
  fs::remove_all(dir);
}

TEST(Cli, TrainWithZeroIterationsWritesInitialCheckpoint) {
  const auto dir = m4c::testing::temp_dir("cli_zero");
  write_tiny_config(dir / "tiny.cfg", 0);
  const auto cfg = (dir / "tiny.cfg").string();
  ASSERT_EQ(run({"gen", "--config", cfg, "--seed", "1", "--n-train", "8", "--n-val", "4", "--out",
                 (dir / "data").string()})
                .code,
            0);
  const auto r = run({"train", "--config", cfg, "--set", "decay_steps=", "--seed", "1", "--data",
                      (dir / "data").string(), "--out", (dir / "run").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "run.cfg"));
  fs::remove_all(dir);
}

TEST(Cli, PipelineIsReproducible) {
  const auto dir = m4c::testing::temp_dir("cli_pipe");
  write_tiny_config(dir / "tiny.cfg", 10);
  const auto cfg = (dir / "tiny.cfg").string();
  auto pipeline = [&](const std::string& tag) {
    const auto root = dir / tag;
    const auto data = (root / "data").string(), model_dir = (root / "run").string();
    EXPECT_EQ(run({"gen", "--config", cfg, "--seed", "4", "--family", "copy-one", "--n-train", "16",
                   "--n-val", "6", "--out", data})
                  .code,
              0);
    auto r = run({"train", "--config", cfg, "--seed", "4", "--data", data, "--out", model_dir});
    EXPECT_EQ(r.code, 0) << r.err;
    r = run({"predict", "--model", model_dir, "--data", data, "--out", (root / "pred.jsonl").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    r = run({"eval", "--predictions", (root / "pred.jsonl").string(), "--data", data, "--metric", "anls",
             "--out", (root / "report.txt").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("anls"), std::string::npos);
    return std::vector<std::string>{slurp(root / "data" / "train.jsonl"), slurp(root / "run" / "model.ckpt"),
                                    slurp(root / "run" / "metrics.log"), slurp(root / "pred.jsonl"),
                                    slurp(root / "report.txt"), r.out};
  };
  const auto a = pipeline("a"), b = pipeline("b");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_FALSE(a[i].empty()) << i;
    EXPECT_EQ(a[i], b[i]) << i;
  }
  EXPECT_NE(a[2].find("iter 10 "), std::string::npos);
  fs::remove_all(dir);
}
