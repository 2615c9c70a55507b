#include "atseg/checkpoint.hpp"

#include <bit>
#include <set>
#include <string>

#include "atseg/errors.hpp"
#include "atseg/pgm.hpp"

namespace atseg {
namespace {

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void uint(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void payload(const Tensor& t) {
    for (float v : t.data()) f32(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw ParseError("checkpoint truncated at byte offset " + std::to_string(pos_) + " while reading " + what);
    }
  }
  template <typename T>
  T uint(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return value;
  }
  float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void payload(Tensor& t, const char* what) {
    need(t.numel() * 4, what);
    for (float& v : t.data()) v = f32(what);
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  const UNetConfig& cfg = ckpt.model.config();
  Writer w;
  w.bytes(kCheckpointMagic, 6);
  w.uint<std::uint32_t>(kCheckpointVersion);
  for (std::size_t v : {cfg.base_channels, cfg.depth, cfg.in_channels, cfg.image_h, cfg.image_w, cfg.pooled_size}) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.f64(cfg.dropout_rate);
  w.uint<std::uint8_t>(ckpt.model.adaptive_threshold() ? 1 : 0);
  w.uint<std::uint64_t>(ckpt.seed);
  w.uint<std::uint32_t>(ckpt.epoch);
  w.f64(ckpt.val_dice);

  const auto params = ckpt.model.parameters();
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const Parameter& p : params) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.uint<std::uint64_t>(d);
    w.payload(p.value);
  }

  const AdamState& opt = ckpt.optimizer;
  const bool has_optimizer = !opt.m.empty();
  if (has_optimizer && (opt.m.size() != params.size() || opt.v.size() != params.size())) {
    throw ShapeError("serialize_checkpoint: optimizer state does not match the parameter list");
  }
  w.uint<std::uint8_t>(has_optimizer ? 1 : 0);
  if (has_optimizer) {
    w.uint<std::uint64_t>(opt.step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (opt.m[i].shape() != params[i].value.shape() || opt.v[i].shape() != params[i].value.shape()) {
        throw ShapeError("serialize_checkpoint: optimizer state for '" + params[i].name + "' is misshapen");
      }
      w.payload(opt.m[i]);
      w.payload(opt.v[i]);
    }
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(6, "magic") != std::string(kCheckpointMagic, 6)) {
    throw ParseError("not a checkpoint: bad magic at byte offset 0");
  }
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  UNetConfig cfg;
  cfg.base_channels = r.uint<std::uint32_t>("config");
  cfg.depth = r.uint<std::uint32_t>("config");
  cfg.in_channels = r.uint<std::uint32_t>("config");
  cfg.image_h = r.uint<std::uint32_t>("config");
  cfg.image_w = r.uint<std::uint32_t>("config");
  cfg.pooled_size = r.uint<std::uint32_t>("config");
  cfg.dropout_rate = r.f64("config");
  const auto adaptive = r.uint<std::uint8_t>("config");
  if (adaptive > 1) throw ParseError("checkpoint: adaptive-threshold flag is not 0 or 1");
  if (cfg.image_h > 8192 || cfg.image_w > 8192 || cfg.base_channels > 4096 || cfg.pooled_size > 1024) {
    throw ParseError("checkpoint: implausible model configuration");
  }
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw ParseError(std::string("checkpoint holds an invalid model configuration: ") + e.what());
  }

  Checkpoint ckpt{SegModel(cfg)};
  ckpt.model.set_adaptive_threshold(adaptive == 1);
  ckpt.seed = r.uint<std::uint64_t>("seed");
  ckpt.epoch = r.uint<std::uint32_t>("epoch");
  ckpt.val_dice = r.f64("val_dice");

  const auto count = r.uint<std::uint32_t>("tensor count");
  const auto params = ckpt.model.parameters();
  if (count != params.size()) {
    throw ParseError("checkpoint lists " + std::to_string(count) + " tensors, model has " +
                     std::to_string(params.size()));
  }
  std::set<std::string> seen;
  std::vector<std::size_t> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    const auto name_len = r.uint<std::uint32_t>("tensor name length");
    if (name_len > 256) throw ParseError("checkpoint: implausible tensor name length at byte offset " + std::to_string(at));
    const std::string name = r.str(name_len, "tensor name");
    if (!ckpt.model.has_param(name)) {
      throw ParseError("checkpoint: unknown tensor '" + name + "' at byte offset " + std::to_string(at));
    }
    if (!seen.insert(name).second) throw ParseError("checkpoint: tensor '" + name + "' appears twice");
    Parameter& p = ckpt.model.param(name);
    const auto rank = r.uint<std::uint32_t>("tensor rank");
    if (rank > 8) throw ParseError("checkpoint: implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.uint<std::uint64_t>("tensor extent"));
    if (shape != p.value.shape()) {
      throw ParseError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                       shape_str(p.value.shape()));
    }
    r.payload(p.value, "tensor payload");
    order.push_back(static_cast<std::size_t>(&p - params.data()));
  }

  const auto has_optimizer = r.uint<std::uint8_t>("optimizer flag");
  if (has_optimizer > 1) throw ParseError("checkpoint: optimizer flag is not 0 or 1");
  if (has_optimizer) {
    ckpt.optimizer.step = r.uint<std::uint64_t>("optimizer step");
    ckpt.optimizer.m.resize(params.size());
    ckpt.optimizer.v.resize(params.size());
    for (std::size_t index : order) {
      ckpt.optimizer.m[index] = Tensor(params[index].value.shape());
      ckpt.optimizer.v[index] = Tensor(params[index].value.shape());
      r.payload(ckpt.optimizer.m[index], "optimizer state");
      r.payload(ckpt.optimizer.v[index], "optimizer state");
    }
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes at offset " + std::to_string(r.pos()));
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return deserialize_checkpoint(bytes);
  } catch (const VersionError& e) {
    throw VersionError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace atseg
