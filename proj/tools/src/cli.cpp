#include "atseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>

#include "atseg/baselines.hpp"
#include "atseg/errors.hpp"
#include "atseg/pgm.hpp"
#include "atseg/training.hpp"

namespace atseg::cli {
namespace {

namespace fs = std::filesystem;

/// Thrown for bad flag values that CLI11 validators cannot express.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Size {
  std::size_t h = 64, w = 64;
};

Size parse_size(const std::string& text) {
  static const std::regex pattern(R"((\d{1,6})x(\d{1,6}))");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) throw UsageError("--size must look like HxW, got '" + text + "'");
  return {std::stoul(m[1].str()), std::stoul(m[2].str())};
}

void ensure_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".atseg_write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw UsageError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("failed to write " + path.string());
}

using Manifest = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const fs::path& path, const Manifest& entries) {
  std::string text;
  for (const auto& [key, value] : entries) text += key + " = " + value + "\n";
  write_text(path, text);
}

struct GenDataArgs {
  fs::path out;
  std::size_t n = 200;
  std::string size = "64x64";
  std::uint64_t seed = 1;
  bool bias_field = false;
  double noise = 0.05;
};

struct TrainArgs {
  fs::path data, out;
  TrainConfig train;
  UNetConfig model;
  bool fixed_only = false;
};

struct EvalArgs {
  fs::path ckpt, data, out = ".";
  std::string split = "test";
  std::optional<std::uint64_t> split_seed;
  std::string binarize = "model";
  std::size_t window = 15;
};

struct PredictArgs {
  fs::path ckpt, image, out;
};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

bool informational_key(const std::string& key) {
  static const std::vector<std::string> keys = {"command",  "tool_version", "corpus_count", "corpus_hash",
                                                "image_h",  "image_w",      "split",        "best_epoch",
                                                "best_val_dice"};
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

// Turns `--config FILE` into `--key=value` arguments for every key not already
// given on the command line. Blank lines and lines starting with # are skipped.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::optional<std::string> file;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!file) return args;
  std::ifstream in(*file);
  if (!in) throw UsageError("cannot read config file " + *file);
  std::vector<std::string> expanded(rest.begin(), rest.begin() + 1);
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(*file + ":" + std::to_string(number) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (informational_key(key)) continue;
    if (key.rfind("--", 0) != 0) key = "--" + key;
    if (!has_flag(rest, key)) expanded.push_back(key + "=" + trim(line.substr(eq + 1)));
  }
  expanded.insert(expanded.end(), rest.begin() + 1, rest.end());
  return expanded;
}

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const Size size = parse_size(a.size);
  const std::size_t stride = std::size_t{1} << UNetConfig{}.depth;
  if (size.h < 16 || size.w < 16 || size.h % stride != 0 || size.w % stride != 0) {
    throw UsageError("--size " + a.size + ": both extents must be at least 16 and divisible by " +
                     std::to_string(stride));
  }
  ensure_out_dir(a.out);
  SyntheticOptions options;
  options.bias_field = a.bias_field;
  options.noise_sigma = a.noise;
  const auto samples = gen_synthetic(a.n, size.h, size.w, a.seed, options);
  save_dataset_dir(samples, a.out);
  write_manifest(a.out / "manifest.txt", {{"command", "gen-data"},
                                          {"tool_version", kToolVersion},
                                          {"n", std::to_string(a.n)},
                                          {"size", std::to_string(size.h) + "x" + std::to_string(size.w)},
                                          {"seed", std::to_string(a.seed)},
                                          {"bias_field", a.bias_field ? "true" : "false"},
                                          {"noise", fmt(a.noise)},
                                          {"corpus_count", std::to_string(samples.size())},
                                          {"corpus_hash", hex64(corpus_hash(a.out))}});
  out << "wrote " << samples.size() << " samples to " << a.out.string() << "\n";
  return kExitOk;
}

DatasetSplits split_of(std::vector<Sample> samples, std::uint64_t seed) {
  SplitSpec spec;
  spec.seed = seed;
  return split_dataset(std::move(samples), spec);
}

int cmd_train(TrainArgs a, std::ostream& out) {
  if (a.fixed_only) {
    a.train.adaptive_threshold = false;
    a.train.loss.lambda_mse = 0.0;
  }
  try {
    a.train.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  std::vector<Sample> samples = load_dataset_dir(a.data);
  a.model.image_h = samples.front().image.dim(1);
  a.model.image_w = samples.front().image.dim(2);
  try {
    a.model.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const std::uint64_t hash = corpus_hash(a.data);
  const std::size_t count = samples.size();
  const DatasetSplits splits = split_of(std::move(samples), a.train.seed);
  ensure_out_dir(a.out);

  out << "train " << splits.train.size() << " / val " << splits.val.size() << " / test " << splits.test.size()
      << " samples of " << a.model.image_h << "x" << a.model.image_w << "\n";
  const TrainResult result =
      train(splits.train, splits.val, init_params(a.model, a.train.seed), a.train, [&](const EpochLog& log) {
        out << "epoch " << log.epoch << "/" << a.train.epochs << "  loss " << fmt(log.train_loss) << "  val_dice "
            << fmt(log.val.dice) << std::endl;
      });

  save_checkpoint(result.final_checkpoint, a.out / "model_final.ckpt");
  save_checkpoint(result.best_checkpoint, a.out / "model_best.ckpt");
  write_text(a.out / "metrics.csv", metrics_csv(result.log));
  const TrainConfig& t = a.train;
  const UNetConfig& m = a.model;
  // Keys spelled like train flags can be fed back through --config; the others are
  // informational and skipped on the way back in.
  write_manifest(a.out / "manifest.txt", {{"command", "train"},
                                          {"tool_version", kToolVersion},
                                          {"corpus_count", std::to_string(count)},
                                          {"corpus_hash", hex64(hash)},
                                          {"image_h", std::to_string(m.image_h)},
                                          {"image_w", std::to_string(m.image_w)},
                                          {"split", "0.8/0.1/0.1"},
                                          {"best_epoch", std::to_string(result.best_checkpoint.epoch)},
                                          {"best_val_dice", fmt(result.best_checkpoint.val_dice)},
                                          {"data", a.data.string()},
                                          {"seed", std::to_string(t.seed)},
                                          {"epochs", std::to_string(t.epochs)},
                                          {"batch", std::to_string(t.batch_size)},
                                          {"lr", exact(t.lr)},
                                          {"lambda-mse", exact(t.loss.lambda_mse)},
                                          {"tau", exact(t.loss.tau)},
                                          {"fixed-threshold-only", a.fixed_only ? "true" : "false"},
                                          {"detach-threshold-input", t.detach_threshold_input ? "true" : "false"},
                                          {"base-channels", std::to_string(m.base_channels)},
                                          {"depth", std::to_string(m.depth)},
                                          {"pooled-size", std::to_string(m.pooled_size)},
                                          {"dropout", exact(m.dropout_rate)}});
  out << "best val_dice " << fmt(result.best_checkpoint.val_dice) << " at epoch " << result.best_checkpoint.epoch
      << "\n";
  return kExitOk;
}

std::vector<Sample> select_split(const EvalArgs& a, const Checkpoint& ckpt) {
  std::vector<Sample> samples = load_dataset_dir(a.data);
  if (a.split == "all") return samples;
  DatasetSplits splits = split_of(std::move(samples), a.split_seed.value_or(ckpt.seed));
  if (a.split == "train") return std::move(splits.train);
  if (a.split == "val") return std::move(splits.val);
  return std::move(splits.test);
}

void print_metrics(std::ostream& out, const MetricsRecord& r) {
  out << "dice " << fmt(r.dice) << "\niou " << fmt(r.iou) << "\naccuracy " << fmt(r.pixel_accuracy) << "\nfp "
      << r.fp << "\nfn " << r.fn << "\n";
}

std::string metrics_fields(const MetricsRecord& r) {
  return fmt(r.dice) + "," + fmt(r.iou) + "," + fmt(r.pixel_accuracy) + "," + std::to_string(r.tp) + "," +
         std::to_string(r.fp) + "," + std::to_string(r.fn) + "," + std::to_string(r.tn);
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const std::vector<Sample> samples = select_split(a, ckpt);
  if (samples.empty()) {
    err << "error: split '" << a.split << "' is empty\n";
    return kExitRuntime;
  }
  std::optional<Binarization> mode;
  if (a.binarize == "adaptive") mode = Binarization::Adaptive;
  if (a.binarize == "fixed") mode = Binarization::Fixed;
  if (mode == Binarization::Adaptive && !ckpt.model.adaptive_threshold()) {
    throw UsageError("checkpoint was trained without the threshold branch; use --binarize fixed");
  }
  const EvalResult result = evaluate(ckpt.model, samples, mode);
  ensure_out_dir(a.out);
  std::string csv = "id,dice,iou,accuracy,tp,fp,fn,tn\n";
  for (const SampleMetrics& s : result.per_sample) csv += s.id + "," + metrics_fields(s.metrics) + "\n";
  write_text(a.out / ("eval_" + a.split + ".csv"), csv);
  print_metrics(out, result.aggregate);
  return kExitOk;
}

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Tensor image = load_pgm(a.image);
  const UNetConfig& cfg = ckpt.model.config();
  if (image.dim(1) != cfg.image_h || image.dim(2) != cfg.image_w) {
    err << "error: image " << a.image.string() << " is " << image.dim(1) << "x" << image.dim(2)
        << ", checkpoint expects " << cfg.image_h << "x" << cfg.image_w << "\n";
    return kExitRuntime;
  }
  const Prediction p = predict(ckpt.model, image.reshaped({1, 1, cfg.image_h, cfg.image_w}));
  ensure_out_dir(a.out);
  save_pgm(hard_binarize(p.prob, p.threshold), a.out / "mask.pgm");
  save_pgm(p.prob, a.out / "prob.pgm");
  save_pgm(p.threshold, a.out / "threshold.pgm");
  out << "wrote mask.pgm, prob.pgm, threshold.pgm to " << a.out.string() << "\n";
  return kExitOk;
}

int cmd_compare(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const std::vector<Sample> samples = select_split(a, ckpt);
  if (samples.empty()) {
    err << "error: split '" << a.split << "' is empty\n";
    return kExitRuntime;
  }
  const UNetConfig& cfg = ckpt.model.config();
  if (a.window % 2 == 0 || a.window > std::min(cfg.image_h, cfg.image_w)) {
    throw UsageError("--window must be odd and at most " + std::to_string(std::min(cfg.image_h, cfg.image_w)));
  }
  const std::vector<std::pair<std::string, std::optional<LocalMethod>>> strategies = {
      {"adaptive", std::nullopt},
      {"fixed_0.5", std::nullopt},
      {"local_mean", LocalMethod::Mean},
      {"niblack", LocalMethod::Niblack},
      {"sauvola", LocalMethod::Sauvola}};
  std::vector<std::vector<MetricsRecord>> records(strategies.size());
  for (const Sample& s : samples) {
    if (s.image.dim(1) != cfg.image_h || s.image.dim(2) != cfg.image_w) {
      throw ShapeError("sample '" + s.id + "' is " + shape_str(s.image.shape()) + ", checkpoint expects 1x" +
                       std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w));
    }
    const Prediction p = predict(ckpt.model, s.image.reshaped({1, 1, cfg.image_h, cfg.image_w}));
    const Tensor mask = s.mask.reshaped({1, 1, cfg.image_h, cfg.image_w});
    const Tensor prob = p.prob.reshaped({cfg.image_h, cfg.image_w});
    for (std::size_t k = 0; k < strategies.size(); ++k) {
      Tensor pred;
      if (k == 0) {
        pred = hard_binarize(p.prob, p.threshold);
      } else if (k == 1) {
        pred = fixed_threshold(p.prob);
      } else {
        LocalStatConfig local;
        local.window = a.window;
        local.method = *strategies[k].second;
        pred = local_stat_threshold(prob, local).reshaped(mask.shape());
      }
      records[k].push_back(compute_metrics(pred, mask));
    }
  }
  ensure_out_dir(a.out);
  std::string csv = "strategy,dice,iou,fp,fn\n";
  for (std::size_t k = 0; k < strategies.size(); ++k) {
    const MetricsRecord r = micro_average(records[k]);
    csv += strategies[k].first + "," + fmt(r.dice) + "," + fmt(r.iou) + "," + std::to_string(r.fp) + "," +
           std::to_string(r.fn) + "\n";
  }
  write_text(a.out / "compare.csv", csv);
  out << csv;
  return kExitOk;
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t hash) {
  const auto* bytes = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t corpus_hash(const std::filesystem::path& dir) {
  std::vector<fs::path> files;
  for (const char* sub : {"images", "masks"}) {
    if (!fs::is_directory(dir / sub)) continue;
    for (const auto& entry : fs::directory_iterator(dir / sub)) {
      if (entry.path().extension() == ".pgm") files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const fs::path& f : files) {
    const std::string rel = fs::relative(f, dir).generic_string();
    hash = fnv1a(rel.data(), rel.size(), hash);
    const std::vector<std::uint8_t> bytes = read_file_bytes(f);
    hash = fnv1a(bytes.data(), bytes.size(), hash);
  }
  return hash;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive-threshold U-Net segmentation toolkit", "atseg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic image/mask corpus");
  gen_cmd->add_option("--out", gen.out, "Output dataset directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--size", gen.size, "Image size HxW")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_flag("--bias-field", gen.bias_field, "Add a left-to-right illumination ramp");
  gen_cmd->add_option("--noise", gen.noise, "Gaussian noise sigma")->capture_default_str()->check(CLI::NonNegativeNumber);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  std::string config_file;
  train_cmd->add_option("--config", config_file, "File of key = value lines naming train flags; flags on the command line win");
  train_cmd->add_option("--data", tr.data, "Dataset directory with images/ and masks/")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--epochs", tr.train.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--lr", tr.train.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.train.seed, "Seed for init, shuffling and the split")->capture_default_str();
  train_cmd->add_option("--batch", tr.train.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--lambda-mse", tr.train.loss.lambda_mse, "Weight of the threshold MSE term")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--tau", tr.train.loss.tau, "Soft binarization temperature")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_flag("--fixed-threshold-only", tr.fixed_only, "Train the plain U-Net and binarize at 0.5");
  train_cmd->add_flag("--detach-threshold-input", tr.train.detach_threshold_input,
                      "Keep threshold-branch gradients out of the U-Net");
  train_cmd->add_option("--base-channels", tr.model.base_channels, "Channels at the first level")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--depth", tr.model.depth, "Number of down-sampling levels")
      ->capture_default_str()
      ->check(CLI::Range(1, 8));
  train_cmd->add_option("--pooled-size", tr.model.pooled_size, "Side of the pooled map fed to the threshold branch")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--dropout", tr.model.dropout_rate, "Dropout rate after each encoder level")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 0.99));

  EvalArgs ev;
  auto add_eval_flags = [](CLI::App* cmd, EvalArgs& a) {
    cmd->add_option("--ckpt", a.ckpt, "Checkpoint file")->required();
    cmd->add_option("--data", a.data, "Dataset directory")->required();
    cmd->add_option("--split", a.split, "Which split to score")
        ->capture_default_str()
        ->check(CLI::IsMember({"test", "val", "train", "all"}));
    cmd->add_option("--split-seed", a.split_seed, "Split seed (default: the checkpoint's training seed)");
    cmd->add_option("--out", a.out, "Directory for the CSV output")->capture_default_str();
  };
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on one split");
  add_eval_flags(eval_cmd, ev);
  eval_cmd->add_option("--binarize", ev.binarize, "model: the checkpoint's own mode; adaptive; fixed (0.5)")
      ->capture_default_str()
      ->check(CLI::IsMember({"model", "adaptive", "fixed"}));

  EvalArgs cmp;
  auto* compare_cmd = app.add_subcommand("compare", "Compare adaptive, fixed and classical thresholding");
  add_eval_flags(compare_cmd, cmp);
  compare_cmd->add_option("--window", cmp.window, "Window side for the local-statistics baselines")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Write mask, probability and threshold maps for one image");
  predict_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint file")->required();
  predict_cmd->add_option("--image", pr.image, "Input PGM image")->required();
  predict_cmd->add_option("--out", pr.out, "Output directory")->required();

  std::vector<std::string> argv = args;
  try {
    if (!argv.empty() && argv.front() == "train") argv = expand_config(argv);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::vector<std::string> reversed(argv.rbegin(), argv.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out, err);
    if (compare_cmd->parsed()) return cmd_compare(cmp, out, err);
    if (predict_cmd->parsed()) return cmd_predict(pr, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace atseg::cli
