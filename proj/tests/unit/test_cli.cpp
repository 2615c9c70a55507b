#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "atseg/checkpoint.hpp"
#include "atseg/cli.hpp"
#include "atseg/pgm.hpp"

namespace fs = std::filesystem;
using namespace atseg;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::map<std::string, std::string> read_manifest(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::istringstream in(read_text(p));
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

// Every regular file below `dir`, by relative path, with its bytes.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = read_text(e.path());
  }
  return files;
}

std::map<std::string, std::string> stdout_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string key, value; in >> key >> value;) kv[key] = value;
  return kv;
}

const std::vector<std::string> kSmallModel = {"--base-channels", "4", "--depth", "2", "--pooled-size", "4",
                                              "--lr", "1e-3", "--epochs", "3"};

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("atseg_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run_cli({"gen-data", "--out", data().string(), "--n", "20", "--size", "32x32", "--seed", "4"}).code, 0);
    std::vector<std::string> args = {"train", "--data", data().string(), "--out", run().string()};
    args.insert(args.end(), kSmallModel.begin(), kSmallModel.end());
    const Result r = run_cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path data() { return root_ / "data"; }
  static fs::path run() { return root_ / "run"; }
  static fs::path scratch(const std::string& name) { return root_ / name; }

  static inline fs::path root_;
};

}  // namespace

TEST(CliUsage, HelpExitsZeroAndListsFlags) {
  const std::map<std::string, std::vector<std::string>> flags = {
      {"gen-data", {"--out", "--n", "--size", "--seed", "--bias-field", "--noise"}},
      {"train",
       {"--data", "--out", "--epochs", "--lr", "--seed", "--batch", "--lambda-mse", "--fixed-threshold-only",
        "--config", "--tau", "--detach-threshold-input", "--base-channels", "--depth", "--pooled-size"}},
      {"eval", {"--ckpt", "--data", "--split", "--out", "--binarize"}},
      {"predict", {"--ckpt", "--image", "--out"}},
      {"compare", {"--ckpt", "--data", "--split", "--window", "--out"}}};
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  for (const auto& [cmd, names] : flags) {
    const Result r = run_cli({cmd, "--help"});
    EXPECT_EQ(r.code, 0) << cmd;
    for (const std::string& flag : names) EXPECT_NE(r.out.find(flag), std::string::npos) << cmd << " " << flag;
  }
}

TEST(CliUsage, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  for (const char* cmd : {"gen-data", "train", "eval", "predict", "compare"}) {
    EXPECT_EQ(run_cli({cmd, "--no-such-flag"}).code, 2) << cmd;
  }
  EXPECT_EQ(run_cli({"gen-data", "--out", "x", "--n", "notanumber"}).code, 2);
  EXPECT_EQ(run_cli({"eval", "--ckpt", "a", "--data", "b", "--split", "holdout"}).code, 2);
}

TEST(CliUsage, FnvMatchesReferenceVectors) {
  EXPECT_EQ(cli::fnv1a("", 0), 0xcbf29ce484222325ULL);
  EXPECT_EQ(cli::fnv1a("a", 1), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(cli::fnv1a("foobar", 6), 0x85944171f73967e8ULL);
}

TEST_F(Cli, GenDataWritesPairsAndManifest) {
  const auto files = snapshot(data());
  EXPECT_EQ(files.size(), 41u);
  EXPECT_TRUE(files.contains("images/sample_00000.pgm"));
  EXPECT_TRUE(files.contains("masks/sample_00019.pgm"));
  const auto manifest = read_manifest(data() / "manifest.txt");
  EXPECT_EQ(manifest.at("n"), "20");
  EXPECT_EQ(manifest.at("size"), "32x32");
  EXPECT_EQ(manifest.at("seed"), "4");
  EXPECT_EQ(manifest.at("corpus_count"), "20");
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cli::corpus_hash(data())));
  EXPECT_EQ(manifest.at("corpus_hash"), hash);
}

TEST_F(Cli, GenDataIsDeterministic) {
  const fs::path again = scratch("data_again");
  ASSERT_EQ(run_cli({"gen-data", "--out", again.string(), "--n", "20", "--size", "32x32", "--seed", "4"}).code, 0);
  EXPECT_EQ(snapshot(again), snapshot(data()));
  EXPECT_EQ(cli::corpus_hash(again), cli::corpus_hash(data()));
  const fs::path other = scratch("data_other_seed");
  ASSERT_EQ(run_cli({"gen-data", "--out", other.string(), "--n", "20", "--size", "32x32", "--seed", "5"}).code, 0);
  EXPECT_NE(cli::corpus_hash(other), cli::corpus_hash(data()));
}

TEST_F(Cli, GenDataRejectsBadSizesAndPaths) {
  for (const char* size : {"64x63", "64", "64by64", "8x8", "x64"}) {
    EXPECT_EQ(run_cli({"gen-data", "--out", scratch("bad").string(), "--size", size}).code, 2) << size;
  }
  EXPECT_FALSE(fs::exists(scratch("bad")));
  const fs::path blocker = scratch("blocker");
  std::ofstream(blocker) << "file";
  EXPECT_EQ(run_cli({"gen-data", "--out", (blocker / "sub").string(), "--n", "2"}).code, 2);
}

TEST_F(Cli, TrainWritesArtifacts) {
  for (const char* name : {"model_final.ckpt", "model_best.ckpt", "metrics.csv", "manifest.txt"}) {
    EXPECT_TRUE(fs::exists(run() / name)) << name;
  }
  const auto csv = read_csv(run() / "metrics.csv");
  ASSERT_EQ(csv.size(), 4u);
  EXPECT_EQ(csv[0][0], "epoch");
  const Checkpoint best = load_checkpoint(run() / "model_best.ckpt");
  double max_dice = -1;
  for (std::size_t i = 1; i < csv.size(); ++i) max_dice = std::max(max_dice, std::stod(csv[i][4]));
  EXPECT_NEAR(best.val_dice, max_dice, 5e-7);
  EXPECT_EQ(best.seed, 1u);
  EXPECT_EQ(load_checkpoint(run() / "model_final.ckpt").epoch, 3u);

  const auto manifest = read_manifest(run() / "manifest.txt");
  for (const char* key : {"seed", "epochs", "batch", "lr", "lambda-mse", "tau", "base-channels", "depth",
                          "pooled-size", "dropout", "fixed-threshold-only", "detach-threshold-input", "data",
                          "corpus_hash", "corpus_count", "tool_version"}) {
    EXPECT_TRUE(manifest.contains(key)) << key;
  }
  EXPECT_EQ(manifest.at("corpus_hash"), read_manifest(data() / "manifest.txt").at("corpus_hash"));
  EXPECT_EQ(manifest.at("batch"), "4");
  EXPECT_EQ(manifest.at("base-channels"), "4");
  EXPECT_EQ(manifest.at("lr"), "0.001");
}

TEST_F(Cli, ManifestReplaysTheRunBitwise) {
  const fs::path out = scratch("replay");
  const Result r = run_cli({"train", "--config", (run() / "manifest.txt").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto original = snapshot(run()), replay = snapshot(out);
  for (const char* name : {"model_final.ckpt", "model_best.ckpt", "metrics.csv", "manifest.txt"}) {
    EXPECT_TRUE(original.at(name) == replay.at(name)) << name;
  }
}

TEST_F(Cli, TrainWithDefaultFlags) {
  const fs::path out = scratch("defaults");
  const Result r = run_cli({"train", "--data", data().string(), "--out", out.string(), "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "model_final.ckpt"));
  EXPECT_TRUE(fs::exists(out / "model_best.ckpt"));
  EXPECT_TRUE(fs::exists(out / "metrics.csv"));
  EXPECT_EQ(load_checkpoint(out / "model_final.ckpt").model.config().base_channels, 16u);
}

TEST_F(Cli, TrainIsBitwiseReproducible) {
  std::vector<std::string> args = {"train", "--data", data().string(), "--out", scratch("repeat").string()};
  args.insert(args.end(), kSmallModel.begin(), kSmallModel.end());
  ASSERT_EQ(run_cli(args).code, 0);
  const auto first = snapshot(run()), second = snapshot(scratch("repeat"));
  for (const char* name : {"model_final.ckpt", "model_best.ckpt", "metrics.csv"}) {
    EXPECT_TRUE(first.at(name) == second.at(name)) << name;
  }
}

TEST_F(Cli, TrainValidation) {
  const std::string d = data().string(), o = scratch("t").string();
  EXPECT_EQ(run_cli({"train", "--data", d, "--out", o, "--lr", "0"}).code, 2);
  EXPECT_EQ(run_cli({"train", "--data", d, "--out", o, "--lr", "-1"}).code, 2);
  EXPECT_EQ(run_cli({"train", "--data", d, "--out", o, "--batch", "0"}).code, 2);
  EXPECT_EQ(run_cli({"train", "--data", d, "--out", o, "--tau", "0"}).code, 2);
  EXPECT_EQ(run_cli({"train", "--data", d, "--out", o, "--depth", "3", "--pooled-size", "64"}).code, 2);
  EXPECT_EQ(run_cli({"train", "--data", d}).code, 2);

  const fs::path empty = scratch("empty_dataset");
  fs::create_directories(empty / "images");
  fs::create_directories(empty / "masks");
  const Result r = run_cli({"train", "--data", empty.string(), "--out", o});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  EXPECT_EQ(run_cli({"train", "--data", scratch("missing").string(), "--out", o}).code, 1);
}

TEST_F(Cli, FixedThresholdOnlyHasZeroMseColumn) {
  const fs::path out = scratch("fixed");
  std::vector<std::string> args = {"train", "--data", data().string(), "--out", out.string(), "--fixed-threshold-only"};
  args.insert(args.end(), kSmallModel.begin(), kSmallModel.end());
  ASSERT_EQ(run_cli(args).code, 0);
  const auto csv = read_csv(out / "metrics.csv");
  ASSERT_EQ(csv[0][3], "train_mse_loss");
  for (std::size_t i = 1; i < csv.size(); ++i) EXPECT_EQ(std::stod(csv[i][3]), 0.0);
  EXPECT_FALSE(load_checkpoint(out / "model_final.ckpt").model.adaptive_threshold());
  EXPECT_EQ(read_manifest(out / "manifest.txt").at("lambda-mse"), "0");
  EXPECT_EQ(read_manifest(out / "manifest.txt").at("fixed-threshold-only"), "true");
}

TEST_F(Cli, ConfigFileSuppliesDefaultsAndFlagsWin) {
  const fs::path cfg = scratch("train.cfg");
  std::ofstream(cfg) << "# small run\nepochs = 1\nbase-channels = 2\ndepth = 2\npooled-size = 4\nlr = 0.01\n\n";
  const fs::path out = scratch("configured");
  const Result r = run_cli({"train", "--data", data().string(), "--out", out.string(), "--config", cfg.string(),
                            "--lr", "0.002"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto manifest = read_manifest(out / "manifest.txt");
  EXPECT_EQ(manifest.at("epochs"), "1");
  EXPECT_EQ(manifest.at("base-channels"), "2");
  EXPECT_EQ(manifest.at("lr"), "0.002");

  const fs::path bad = scratch("bad.cfg");
  std::ofstream(bad) << "no-such-key = 1\n";
  EXPECT_EQ(run_cli({"train", "--data", data().string(), "--out", out.string(), "--config", bad.string()}).code, 2);
  std::ofstream(bad) << "just words\n";
  EXPECT_EQ(run_cli({"train", "--data", data().string(), "--out", out.string(), "--config", bad.string()}).code, 2);
  EXPECT_EQ(run_cli({"train", "--data", data().string(), "--out", out.string(), "--config",
                     scratch("absent.cfg").string()})
                .code,
            2);
}

TEST_F(Cli, EvalAggregateMatchesPerSampleCsv) {
  const fs::path out = scratch("eval");
  const Result r = run_cli({"eval", "--ckpt", (run() / "model_final.ckpt").string(), "--data", data().string(),
                            "--split", "all", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto values = stdout_values(r.out);
  const double dice = std::stod(values.at("dice"));
  EXPECT_GE(dice, 0.0);
  EXPECT_LE(dice, 1.0);
  for (const char* key : {"iou", "accuracy", "fp", "fn"}) EXPECT_TRUE(values.contains(key)) << key;

  const auto csv = read_csv(out / "eval_all.csv");
  ASSERT_EQ(csv.size(), 21u);
  EXPECT_EQ(csv[0], (std::vector<std::string>{"id", "dice", "iou", "accuracy", "tp", "fp", "fn", "tn"}));
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    tp += std::stoull(csv[i][4]);
    fp += std::stoull(csv[i][5]);
    fn += std::stoull(csv[i][6]);
  }
  EXPECT_EQ(std::to_string(fp), values.at("fp"));
  EXPECT_EQ(std::to_string(fn), values.at("fn"));
  const double recomputed = tp + fp + fn == 0 ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);
  EXPECT_NEAR(recomputed, dice, 5e-7);
}

TEST_F(Cli, EvalSplitsAndErrors) {
  const std::string ckpt = (run() / "model_final.ckpt").string();
  const fs::path out = scratch("eval_splits");
  ASSERT_EQ(run_cli({"eval", "--ckpt", ckpt, "--data", data().string(), "--out", out.string()}).code, 0);
  EXPECT_EQ(read_csv(out / "eval_test.csv").size(), 1u + 2u);
  ASSERT_EQ(run_cli({"eval", "--ckpt", ckpt, "--data", data().string(), "--split", "train", "--out", out.string()})
                .code,
            0);
  EXPECT_EQ(read_csv(out / "eval_train.csv").size(), 1u + 16u);

  const fs::path tiny = scratch("tiny");
  ASSERT_EQ(run_cli({"gen-data", "--out", tiny.string(), "--n", "4", "--size", "32x32"}).code, 0);
  const Result r = run_cli({"eval", "--ckpt", ckpt, "--data", tiny.string(), "--out", out.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(run_cli({"eval", "--ckpt", ckpt, "--data", tiny.string(), "--split", "all", "--out", out.string()}).code,
            0);
  EXPECT_EQ(run_cli({"eval", "--ckpt", scratch("nope.ckpt").string(), "--data", data().string()}).code, 1);

  const fs::path big = scratch("big");
  ASSERT_EQ(run_cli({"gen-data", "--out", big.string(), "--n", "10", "--size", "64x64"}).code, 0);
  EXPECT_EQ(run_cli({"eval", "--ckpt", ckpt, "--data", big.string(), "--out", out.string()}).code, 1);
}

TEST_F(Cli, BestCheckpointScoresAtLeastFinalOnValidation) {
  const fs::path out = scratch("best_vs_final");
  auto val_dice = [&](const char* name) {
    const Result r = run_cli({"eval", "--ckpt", (run() / name).string(), "--data", data().string(), "--split", "val",
                              "--out", out.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return std::stod(stdout_values(r.out).at("dice"));
  };
  EXPECT_GE(val_dice("model_best.ckpt"), val_dice("model_final.ckpt"));
}

TEST_F(Cli, PredictWritesConsistentMaps) {
  const fs::path out = scratch("predict");
  const std::string ckpt = (run() / "model_final.ckpt").string();
  const std::string image = (data() / "images" / "sample_00003.pgm").string();
  ASSERT_EQ(run_cli({"predict", "--ckpt", ckpt, "--image", image, "--out", out.string()}).code, 0);
  const auto first = snapshot(out);
  ASSERT_EQ(first.size(), 3u);

  const auto mask = read_file_bytes(out / "mask.pgm");
  const Tensor prob = load_pgm(out / "prob.pgm"), threshold = load_pgm(out / "threshold.pgm");
  const Tensor decoded = load_pgm(out / "mask.pgm");
  ASSERT_EQ(decoded.numel(), 32u * 32u);
  const std::size_t header = mask.size() - decoded.numel();
  std::size_t compared = 0;
  for (std::size_t i = 0; i < decoded.numel(); ++i) {
    const std::uint8_t byte = mask[header + i];
    ASSERT_TRUE(byte == 0 || byte == 255);
    if (std::abs(prob[i] - threshold[i]) < 1.0f / 255.0f) continue;
    EXPECT_EQ(byte == 255, prob[i] >= threshold[i]) << i;
    ++compared;
  }
  EXPECT_GT(compared, decoded.numel() / 2);

  ASSERT_EQ(run_cli({"predict", "--ckpt", ckpt, "--image", image, "--out", out.string()}).code, 0);
  EXPECT_EQ(snapshot(out), first);
}

TEST_F(Cli, PredictRejectsWrongDimensions) {
  const fs::path img = scratch("wide.pgm");
  save_pgm(Tensor({1, 32, 48}, 0.5f), img);
  const Result r = run_cli({"predict", "--ckpt", (run() / "model_final.ckpt").string(), "--image", img.string(),
                            "--out", scratch("predict_bad").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("32x32"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(scratch("predict_bad")));
}

TEST_F(Cli, CompareHasFiveStrategiesAndMatchesEval) {
  const std::string ckpt = (run() / "model_final.ckpt").string();
  const fs::path out = scratch("compare");
  const Result r = run_cli({"compare", "--ckpt", ckpt, "--data", data().string(), "--split", "all", "--window", "7",
                            "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_csv(out / "compare.csv");
  ASSERT_EQ(csv.size(), 6u);
  EXPECT_EQ(csv[0], (std::vector<std::string>{"strategy", "dice", "iou", "fp", "fn"}));
  std::vector<std::string> names;
  for (std::size_t i = 1; i < csv.size(); ++i) names.push_back(csv[i][0]);
  EXPECT_EQ(names, (std::vector<std::string>{"adaptive", "fixed_0.5", "local_mean", "niblack", "sauvola"}));

  for (const auto& [mode, row] : std::vector<std::pair<std::string, std::size_t>>{{"fixed", 2}, {"adaptive", 1}}) {
    const Result e = run_cli({"eval", "--ckpt", ckpt, "--data", data().string(), "--split", "all", "--binarize", mode,
                              "--out", out.string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto values = stdout_values(e.out);
    EXPECT_EQ(values.at("dice"), csv[row][1]) << mode;
    EXPECT_EQ(values.at("fp"), csv[row][3]) << mode;
    EXPECT_EQ(values.at("fn"), csv[row][4]) << mode;
  }
  EXPECT_EQ(run_cli({"compare", "--ckpt", ckpt, "--data", data().string(), "--window", "8"}).code, 2);
  EXPECT_EQ(run_cli({"compare", "--ckpt", ckpt, "--data", data().string(), "--window", "33"}).code, 2);
}

TEST_F(Cli, OutputsStayInsideOutDirectory) {
  const auto before = snapshot(root_);
  const fs::path out = scratch("confined");
  std::vector<std::string> args = {"train", "--data", data().string(), "--out", out.string(), "--epochs", "1"};
  args.insert(args.end(), kSmallModel.begin(), kSmallModel.end() - 2);
  ASSERT_EQ(run_cli(args).code, 0);
  ASSERT_EQ(run_cli({"compare", "--ckpt", (out / "model_final.ckpt").string(), "--data", data().string(), "--out",
                     out.string()})
                .code,
            0);
  for (const auto& [path, bytes] : snapshot(root_)) {
    if (path.rfind("confined/", 0) == 0) continue;
    ASSERT_TRUE(before.contains(path)) << "unexpected file " << path;
    EXPECT_TRUE(before.at(path) == bytes) << "modified " << path;
  }
}
