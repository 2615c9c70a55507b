#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atseg/adam.hpp"
#include "atseg/checkpoint.hpp"
#include "atseg/datasets.hpp"
#include "atseg/losses.hpp"
#include "atseg/metrics.hpp"
#include "atseg/segnet.hpp"

namespace atseg {

/// Where the probability map comes from. Identity treats each sample image as an
/// already computed probability map and bypasses the U-Net, so only the threshold
/// branch receives gradients.
enum class ProbSource { Network, Identity };

struct TrainConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  LossConfig loss;
  /// Stop threshold-branch gradients from reaching the U-Net.
  bool detach_threshold_input = false;
  /// False trains the plain U-Net (Dice only) and binarizes at 0.5.
  bool adaptive_threshold = true;
  ProbSource prob_source = ProbSource::Network;

  AdamConfig adam() const { return {lr, beta1, beta2, adam_eps}; }
  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_dice_loss = 0.0;
  double train_mse_loss = 0.0;
  MetricsRecord val;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  std::vector<EpochLog> log;
};

/// Per-batch loss values of one optimisation step.
struct StepLosses {
  double total = 0.0;
  double dice = 0.0;
  double mse = 0.0;
};

/// Forward, backward and one Adam update on a single (N, 1, H, W) batch.
/// Throws TrainingError if the loss is not finite.
StepLosses train_step(SegModel& model, AdamState& state, const Tensor& images, const Tensor& masks,
                      const TrainConfig& config, Rng* dropout_rng = nullptr);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Epoch e shuffles the training set with seed + e, steps through it in batches,
/// then evaluates on `val_set`. Returns the last epoch and the best-validation-Dice
/// checkpoints. Non-finite losses abort with a TrainingError naming epoch and batch.
TrainResult train(std::span<const Sample> train_set, std::span<const Sample> val_set, SegModel model,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochLog& log);
std::string metrics_csv(std::span<const EpochLog> log);

enum class Binarization { Adaptive, Fixed };

struct SampleMetrics {
  std::string id;
  MetricsRecord metrics;
};

struct EvalResult {
  MetricsRecord aggregate;
  std::vector<SampleMetrics> per_sample;
};

/// Forward pass, hard binarization and micro-averaged metrics. Binarization defaults
/// to the model's own mode (adaptive map, or 0.5 for fixed-threshold models).
EvalResult evaluate(const SegModel& model, std::span<const Sample> samples,
                    std::optional<Binarization> mode = std::nullopt, ProbSource source = ProbSource::Network);

}  // namespace atseg
