#include "atseg/segnet.hpp"

#include <cmath>
#include <string>
#include <type_traits>

#include "atseg/errors.hpp"
#include "atseg/ops.hpp"

namespace atseg {

void UNetConfig::validate() const {
  if (base_channels == 0 || depth == 0) throw ContractError("UNetConfig: base_channels and depth must be positive");
  if (depth > 8) throw ContractError("UNetConfig: depth " + std::to_string(depth) + " is unreasonably deep");
  if (in_channels != 1) throw ContractError("UNetConfig: only single-channel input is supported");
  const std::size_t stride = std::size_t{1} << depth;
  if (image_h == 0 || image_w == 0 || image_h % stride != 0 || image_w % stride != 0) {
    throw ContractError("UNetConfig: image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                        " is not divisible by 2^depth = " + std::to_string(stride));
  }
  if (pooled_size == 0 || pooled_size > image_h || pooled_size > image_w) {
    throw ContractError("UNetConfig: pooled_size " + std::to_string(pooled_size) + " does not fit the image");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ContractError("UNetConfig: dropout_rate must be in [0, 1)");
}

std::vector<ConvLayerSpec> unet_layers(const UNetConfig& config) {
  std::vector<ConvLayerSpec> layers;
  std::size_t channels = config.in_channels;
  for (std::size_t level = 0; level < config.depth; ++level) {
    const std::size_t c = config.level_channels(level);
    const std::string prefix = "enc" + std::to_string(level);
    layers.push_back({prefix + ".conv1", channels, c, 3});
    layers.push_back({prefix + ".conv2", c, c, 3});
    channels = c;
  }
  const std::size_t bottom = config.level_channels(config.depth);
  layers.push_back({"bottleneck.conv1", channels, bottom, 3});
  layers.push_back({"bottleneck.conv2", bottom, bottom, 3});
  channels = bottom;
  for (std::size_t level = config.depth; level-- > 0;) {
    const std::size_t c = config.level_channels(level);
    const std::string prefix = "dec" + std::to_string(level);
    layers.push_back({prefix + ".conv1", channels + c, c, 3});
    layers.push_back({prefix + ".conv2", c, c, 3});
    channels = c;
  }
  layers.push_back({"head", channels, 1, 1});
  return layers;
}

SegModel::SegModel(UNetConfig config) : config_(config) {
  config_.validate();
  for (const ConvLayerSpec& layer : unet_layers(config_)) {
    params_.emplace_back(layer.name + ".weight", Tensor({layer.out_channels, layer.in_channels, layer.kernel, layer.kernel}));
    params_.emplace_back(layer.name + ".bias", Tensor({layer.out_channels}));
  }
  threshold_begin_ = params_.size();
  const std::size_t pixels = config_.image_h * config_.image_w;
  params_.emplace_back(kThresholdWeight, Tensor({pixels, config_.pooled_size * config_.pooled_size}));
  params_.emplace_back(kThresholdBias, Tensor({pixels}));
}

Parameter& SegModel::param(std::string_view name) {
  for (Parameter& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("SegModel has no parameter '" + std::string(name) + "'");
}

const Parameter& SegModel::param(std::string_view name) const {
  return const_cast<SegModel*>(this)->param(name);
}

bool SegModel::has_param(std::string_view name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

void SegModel::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

std::size_t SegModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.numel();
  return n;
}

double he_limit(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

SegModel init_params(const UNetConfig& config, std::uint64_t seed) {
  SegModel model(config);
  Rng rng(seed);
  for (Parameter& p : model.parameters()) {
    if (p.value.rank() == 1) continue;  // biases stay zero
    std::size_t fan_in = 1;
    for (std::size_t axis = 1; axis < p.value.rank(); ++axis) fan_in *= p.value.dim(axis);
    const double limit = he_limit(fan_in);
    for (float& w : p.value.data()) w = static_cast<float>((2.0 * rng.uniform() - 1.0) * limit);
  }
  return model;
}

namespace {

template <typename Model>
Var bind_param(Tape& tape, Model& model, const std::string& name) {
  if constexpr (std::is_const_v<Model>) {
    return tape.constant(model.param(name).value);
  } else {
    return tape.grad_enabled() ? tape.param(model.param(name)) : tape.constant(model.param(name).value);
  }
}

template <typename Model>
Var conv_block(Tape& tape, Model& model, const std::string& layer, Var x) {
  Var w = bind_param(tape, model, layer + ".weight");
  Var b = bind_param(tape, model, layer + ".bias");
  const std::size_t pad = w.value().dim(2) / 2;
  return conv2d(x, w, b, 1, pad);
}

void check_map_shape(const UNetConfig& cfg, const Tensor& t, const char* op, const char* what) {
  if (t.rank() != 4 || t.dim(0) == 0 || t.dim(1) != 1 || t.dim(2) != cfg.image_h || t.dim(3) != cfg.image_w) {
    throw ShapeError(std::string(op) + ": " + what + " has shape " + shape_str(t.shape()) + ", model expects [N,1," +
                     std::to_string(cfg.image_h) + "," + std::to_string(cfg.image_w) + "]");
  }
}

template <typename Model>
Var unet_forward_impl(Tape& tape, Model& model, Var batch, const ForwardOptions& options) {
  const UNetConfig& cfg = model.config();
  check_map_shape(cfg, batch.value(), "unet_forward", "batch");
  const bool use_dropout = options.training && cfg.dropout_rate > 0.0;
  if (use_dropout && options.dropout_rng == nullptr) {
    throw ContractError("unet_forward: dropout during training needs a generator");
  }
  auto maybe_dropout = [&](Var v) { return use_dropout ? dropout(v, cfg.dropout_rate, *options.dropout_rng, true) : v; };

  std::vector<Var> skips;
  Var x = batch;
  for (std::size_t level = 0; level < cfg.depth; ++level) {
    const std::string prefix = "enc" + std::to_string(level);
    x = relu(conv_block(tape, model, prefix + ".conv1", x));
    x = relu(conv_block(tape, model, prefix + ".conv2", x));
    x = maybe_dropout(x);
    skips.push_back(x);
    x = max_pool2d(x);
  }
  x = relu(conv_block(tape, model, "bottleneck.conv1", x));
  x = relu(conv_block(tape, model, "bottleneck.conv2", x));
  x = maybe_dropout(x);
  for (std::size_t level = cfg.depth; level-- > 0;) {
    const std::string prefix = "dec" + std::to_string(level);
    x = concat_channels(upsample_nearest2d(x), skips[level]);
    x = relu(conv_block(tape, model, prefix + ".conv1", x));
    x = relu(conv_block(tape, model, prefix + ".conv2", x));
  }
  return sigmoid(conv_block(tape, model, "head", x));
}

template <typename Model>
Var threshold_forward_impl(Tape& tape, Model& model, Var prob) {
  const UNetConfig& cfg = model.config();
  check_map_shape(cfg, prob.value(), "threshold_forward", "probability map");
  const std::size_t n = prob.value().dim(0), p = cfg.pooled_size;
  Var pooled = reshape(adaptive_avg_pool2d(prob, p, p), {n, p * p});
  Var logits = linear(pooled, bind_param(tape, model, kThresholdWeight), bind_param(tape, model, kThresholdBias));
  return reshape(sigmoid(logits), {n, 1, cfg.image_h, cfg.image_w});
}

}  // namespace

Var unet_forward(Tape& tape, SegModel& model, Var batch, const ForwardOptions& options) {
  return unet_forward_impl(tape, model, batch, options);
}

Var unet_forward(Tape& tape, const SegModel& model, Var batch, const ForwardOptions& options) {
  return unet_forward_impl(tape, model, batch, options);
}

Var threshold_forward(Tape& tape, SegModel& model, Var prob) { return threshold_forward_impl(tape, model, prob); }

Var threshold_forward(Tape& tape, const SegModel& model, Var prob) {
  return threshold_forward_impl(tape, model, prob);
}

Var soft_binarize(Var prob, Var threshold, float tau) {
  if (!(tau > 0.0f)) throw ContractError("soft_binarize: tau must be positive, got " + std::to_string(tau));
  return sigmoid(scale(sub(prob, threshold), 1.0f / tau));
}

Tensor hard_binarize(const Tensor& prob, const Tensor& threshold) {
  if (prob.shape() != threshold.shape()) {
    throw ShapeError("hard_binarize: probability map " + shape_str(prob.shape()) + " vs threshold map " +
                     shape_str(threshold.shape()));
  }
  Tensor mask(prob.shape());
  for (std::size_t i = 0; i < prob.numel(); ++i) mask[i] = prob[i] >= threshold[i] ? 1.0f : 0.0f;
  return mask;
}

Prediction predict(const SegModel& model, const Tensor& batch) {
  Tape tape(false);
  Var prob = unet_forward(tape, model, tape.constant(batch));
  Prediction out;
  out.prob = prob.value();
  out.threshold = model.adaptive_threshold() ? threshold_forward(tape, model, prob).value()
                                             : Tensor(out.prob.shape(), 0.5f);
  return out;
}

}  // namespace atseg
