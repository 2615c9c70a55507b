#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atseg/autodiff.hpp"
#include "atseg/rng.hpp"

namespace atseg {

/// Shape of the U-Net-lite and its threshold branch.
struct UNetConfig {
  std::size_t base_channels = 16;
  std::size_t depth = 3;
  std::size_t in_channels = 1;
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  double dropout_rate = 0.0;
  /// Side of the adaptive-average-pooled grid fed to the threshold branch.
  std::size_t pooled_size = 8;

  /// Throws ContractError on zero extents, non-unit input channels, image sides not
  /// divisible by 2^depth, a pooled grid larger than the image, or a bad dropout rate.
  void validate() const;

  /// Channel count of encoder level `level` (and of the decoder level that mirrors it).
  std::size_t level_channels(std::size_t level) const { return base_channels << level; }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// One convolution of the network, in parameter-declaration order.
struct ConvLayerSpec {
  std::string name;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel;
};

std::vector<ConvLayerSpec> unet_layers(const UNetConfig& config);

/// U-Net parameters plus the adaptive threshold branch (`threshold.fc.*`).
///
/// Parameters live in one vector in a fixed order: every U-Net convolution
/// (weight, bias), then the threshold branch's fully connected layer.
class SegModel {
 public:
  explicit SegModel(UNetConfig config);

  const UNetConfig& config() const { return config_; }

  /// False for models trained without the threshold branch; those binarize at 0.5.
  bool adaptive_threshold() const { return adaptive_threshold_; }
  void set_adaptive_threshold(bool on) { adaptive_threshold_ = on; }

  std::span<Parameter> parameters() { return params_; }
  std::span<const Parameter> parameters() const { return params_; }

  Parameter& param(std::string_view name);
  const Parameter& param(std::string_view name) const;
  bool has_param(std::string_view name) const;

  /// Index range [begin, end) of the threshold branch inside parameters().
  std::size_t threshold_begin() const { return threshold_begin_; }
  std::span<Parameter> unet_parameters() { return std::span(params_).first(threshold_begin_); }
  std::span<Parameter> threshold_parameters() { return std::span(params_).subspan(threshold_begin_); }

  void zero_grad();
  std::size_t parameter_count() const;

 private:
  UNetConfig config_;
  bool adaptive_threshold_ = true;
  std::vector<Parameter> params_;
  std::size_t threshold_begin_ = 0;
};

inline constexpr const char* kThresholdWeight = "threshold.fc.weight";
inline constexpr const char* kThresholdBias = "threshold.fc.bias";

/// He-uniform weights (limit sqrt(6 / fan_in)), zero biases. Deterministic per seed.
SegModel init_params(const UNetConfig& config, std::uint64_t seed);

/// He-uniform limit for a layer with the given fan-in.
double he_limit(std::size_t fan_in);

struct ForwardOptions {
  bool training = false;
  /// Required when training with a non-zero dropout rate.
  Rng* dropout_rng = nullptr;
};

/// (N, 1, H, W) batch in [0, 1] → (N, 1, H, W) foreground probabilities.
Var unet_forward(Tape& tape, SegModel& model, Var batch, const ForwardOptions& options = {});
Var unet_forward(Tape& tape, const SegModel& model, Var batch, const ForwardOptions& options = {});

/// Probability map → per-pixel thresholds: adaptive average pool to P×P, fully
/// connected P² → H·W, sigmoid, back to (N, 1, H, W).
Var threshold_forward(Tape& tape, SegModel& model, Var prob);
Var threshold_forward(Tape& tape, const SegModel& model, Var prob);

/// sigmoid((prob − t) / tau). Throws ContractError unless tau > 0.
Var soft_binarize(Var prob, Var threshold, float tau);

/// 1 where prob ≥ threshold, else 0.
Tensor hard_binarize(const Tensor& prob, const Tensor& threshold);

/// Gradient-free forward pass producing both maps. For models without the
/// threshold branch the threshold map is the constant 0.5.
struct Prediction {
  Tensor prob;
  Tensor threshold;
};
Prediction predict(const SegModel& model, const Tensor& batch);

}  // namespace atseg
