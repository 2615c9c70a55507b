#include "atseg/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "atseg/baselines.hpp"
#include "atseg/errors.hpp"
#include "atseg/ops.hpp"

namespace atseg {
namespace {

// Dropout draws come from a stream separate from the shuffling seeds.
constexpr std::uint64_t kDropoutStream = 0xd1b54a32d192ed03ULL;

Checkpoint snapshot(const SegModel& model, const AdamState& state, const TrainConfig& cfg, std::size_t epoch,
                    double val_dice) {
  Checkpoint c{model};
  for (Parameter& p : c.model.parameters()) p.grad = Tensor();
  c.optimizer = state;
  c.seed = cfg.seed;
  c.epoch = static_cast<std::uint32_t>(epoch);
  c.val_dice = val_dice;
  return c;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  adam().validate();
  loss.validate();
  if (batch_size == 0) throw ContractError("TrainConfig: batch_size must be positive");
  if (prob_source == ProbSource::Identity && !adaptive_threshold) {
    throw ContractError("TrainConfig: identity probability maps leave nothing to train without the threshold branch");
  }
}

StepLosses train_step(SegModel& model, AdamState& state, const Tensor& images, const Tensor& masks,
                      const TrainConfig& config, Rng* dropout_rng) {
  model.zero_grad();
  Tape tape;
  ForwardOptions options;
  options.training = true;
  options.dropout_rng = dropout_rng;
  Var prob = config.prob_source == ProbSource::Identity ? tape.constant(images)
                                                         : unet_forward(tape, model, tape.constant(images), options);

  StepLosses out;
  Var total;
  if (config.adaptive_threshold) {
    Var threshold_input = config.detach_threshold_input ? detach(prob) : prob;
    Var threshold = threshold_forward(tape, model, threshold_input);
    LossTerms terms = combined_loss(prob, threshold, masks, config.loss);
    total = terms.total;
    out.dice = terms.dice.value().item();
    out.mse = terms.mse ? terms.mse->value().item() : 0.0;
  } else {
    total = dice_loss(prob, masks, config.loss.epsilon);
    out.dice = total.value().item();
  }
  out.total = total.value().item();
  if (!std::isfinite(out.total)) throw TrainingError("non-finite loss " + std::to_string(out.total));
  tape.backward(total);
  adam_step(model.parameters(), state, config.adam());
  return out;
}

TrainResult train(std::span<const Sample> train_set, std::span<const Sample> val_set, SegModel model,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw ContractError("train: training and validation sets must be non-empty");
  model.set_adaptive_threshold(config.adaptive_threshold);

  AdamState state;
  Rng dropout_rng(config.seed ^ kDropoutStream);
  TrainResult result{snapshot(model, state, config, 0, std::nan("")), snapshot(model, state, config, 0, std::nan("")),
                     {}};
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(config.seed + epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);

    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batches) {
      std::vector<Sample> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k) {
        batch.push_back(train_set[order[k]]);
      }
      StepLosses losses;
      try {
        losses = train_step(model, state, batch_images(batch), batch_masks(batch), config, &dropout_rng);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches + 1) + ": " +
                            e.what());
      }
      log.train_loss += losses.total;
      log.train_dice_loss += losses.dice;
      log.train_mse_loss += losses.mse;
    }
    log.train_loss /= static_cast<double>(batches);
    log.train_dice_loss /= static_cast<double>(batches);
    log.train_mse_loss /= static_cast<double>(batches);
    log.val = evaluate(model, val_set, std::nullopt, config.prob_source).aggregate;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (!have_best || log.val.dice > result.best_checkpoint.val_dice) {
      result.best_checkpoint = snapshot(model, state, config, epoch, log.val.dice);
      have_best = true;
    }
    if (epoch == config.epochs) result.final_checkpoint = snapshot(model, state, config, epoch, log.val.dice);
  }
  return result;
}

std::string metrics_csv_header() { return "epoch,train_loss,train_dice_loss,train_mse_loss,val_dice,val_iou,val_fp,val_fn"; }

std::string metrics_csv_row(const EpochLog& log) {
  return std::to_string(log.epoch) + "," + format_double(log.train_loss) + "," + format_double(log.train_dice_loss) +
         "," + format_double(log.train_mse_loss) + "," + format_double(log.val.dice) + "," +
         format_double(log.val.iou) + "," + std::to_string(log.val.fp) + "," + std::to_string(log.val.fn);
}

std::string metrics_csv(std::span<const EpochLog> log) {
  std::string out = metrics_csv_header() + "\n";
  for (const EpochLog& row : log) out += metrics_csv_row(row) + "\n";
  return out;
}

EvalResult evaluate(const SegModel& model, std::span<const Sample> samples, std::optional<Binarization> mode,
                    ProbSource source) {
  const Binarization how = mode.value_or(model.adaptive_threshold() ? Binarization::Adaptive : Binarization::Fixed);
  const UNetConfig& cfg = model.config();
  EvalResult result;
  std::vector<MetricsRecord> records;
  for (const Sample& s : samples) {
    const Shape expected{1, cfg.image_h, cfg.image_w};
    if (s.image.shape() != expected || s.mask.shape() != expected) {
      throw ShapeError("evaluate: sample '" + s.id + "' is " + shape_str(s.image.shape()) + ", model expects " +
                       shape_str(expected));
    }
    Tensor batch = s.image.reshaped({1, 1, cfg.image_h, cfg.image_w});
    Tensor mask = s.mask.reshaped({1, 1, cfg.image_h, cfg.image_w});
    Tape tape(false);
    Var prob = source == ProbSource::Identity ? tape.constant(batch) : unet_forward(tape, model, tape.constant(batch));
    const MetricsRecord record =
        how == Binarization::Adaptive
            ? compute_metrics(hard_binarize(prob.value(), threshold_forward(tape, model, prob).value()), mask)
            : compute_metrics(fixed_threshold(prob.value()), mask);
    result.per_sample.push_back({s.id, record});
    records.push_back(record);
  }
  result.aggregate = micro_average(records);
  return result;
}

}  // namespace atseg
