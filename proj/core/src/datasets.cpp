#include "atseg/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "atseg/errors.hpp"
#include "atseg/pgm.hpp"
#include "atseg/rng.hpp"

namespace atseg {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Ellipse {
  double cx, cy, semi_major, semi_minor, cos_t, sin_t, contrast;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = dx * cos_t + dy * sin_t;
    const double v = -dx * sin_t + dy * cos_t;
    return (u * u) / (semi_major * semi_major) + (v * v) / (semi_minor * semi_minor) <= 1.0;
  }
};

Sample make_sample(std::size_t index, std::size_t h, std::size_t w, std::uint64_t seed,
                   const SyntheticOptions& options) {
  Rng rng(splitmix64(seed ^ splitmix64(index + 1)));
  const double side = static_cast<double>(std::min(h, w));
  const double min_axis = std::max(1.5, 0.06 * side);
  const double max_axis = 0.16 * side;

  const double background = rng.uniform(0.05, 0.2);
  const std::size_t count = 1 + rng.index(3);
  std::vector<Ellipse> ellipses;
  for (std::size_t k = 0; k < count; ++k) {
    Ellipse e{};
    const double margin = max_axis + 1.0;
    e.cx = rng.uniform(margin, static_cast<double>(w) - margin);
    e.cy = rng.uniform(margin, static_cast<double>(h) - margin);
    const double a = rng.uniform(min_axis, max_axis);
    const double b = rng.uniform(min_axis, max_axis);
    e.semi_major = std::max(a, b);
    e.semi_minor = std::min(a, b);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    e.cos_t = std::cos(theta);
    e.sin_t = std::sin(theta);
    e.contrast = rng.uniform(0.3, 0.5);
    ellipses.push_back(e);
  }

  Sample s;
  s.image = Tensor({1, h, w});
  s.mask = Tensor({1, h, w});
  char id[32];
  std::snprintf(id, sizeof id, "sample_%05zu", index);
  s.id = id;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double contrast = 0.0;
      for (const Ellipse& e : ellipses) {
        if (e.contains(px, py)) contrast = std::max(contrast, e.contrast);
      }
      double value = background + contrast;
      if (options.bias_field) {
        const double t = px / static_cast<double>(w);
        value += kBiasFieldAmplitude * t * t * (3.0 - 2.0 * t);
      }
      if (options.noise_sigma > 0.0) value += options.noise_sigma * rng.normal();
      s.image[y * w + x] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      s.mask[y * w + x] = contrast > 0.0 ? 1.0f : 0.0f;
    }
  }
  return s;
}

Tensor batch_of(std::span<const Sample> samples, bool masks) {
  std::vector<Tensor> items;
  items.reserve(samples.size());
  for (const Sample& s : samples) items.push_back(masks ? s.mask : s.image);
  Tensor stacked = stack(items);
  return stacked;
}

}  // namespace

std::vector<Sample> gen_synthetic(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed,
                                  const SyntheticOptions& options) {
  if (n == 0) throw ContractError("gen_synthetic: n must be positive");
  if (h < 16 || w < 16) {
    throw ContractError("gen_synthetic: images must be at least 16x16, got " + std::to_string(h) + "x" +
                        std::to_string(w));
  }
  if (!(options.noise_sigma >= 0.0)) throw ContractError("gen_synthetic: noise sigma must be non-negative");
  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) samples.push_back(make_sample(i, h, w, seed, options));
  return samples;
}

std::vector<Sample> gen_synthetic(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed, bool bias_field) {
  SyntheticOptions options;
  options.bias_field = bias_field;
  return gen_synthetic(n, h, w, seed, options);
}

DatasetSplits split_dataset(std::vector<Sample> samples, const SplitSpec& spec) {
  const std::size_t n = samples.size();
  if (n < 10) throw ContractError("split_dataset: need at least 10 samples, got " + std::to_string(n));
  const double total = spec.train_frac + spec.val_frac + spec.test_frac;
  if (spec.train_frac < 0 || spec.val_frac < 0 || spec.test_frac < 0 || std::abs(total - 1.0) > 1e-9) {
    throw ContractError("split_dataset: fractions must be non-negative and sum to 1");
  }
  Rng rng(spec.seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.index(i);
    std::swap(samples[i - 1], samples[j]);
  }
  const double count = static_cast<double>(n);
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train_frac * count + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(spec.val_frac * count + 1e-9));

  DatasetSplits out;
  auto first = std::make_move_iterator(samples.begin());
  out.train.assign(first, first + n_train);
  out.val.assign(first + n_train, first + n_train + n_val);
  out.test.assign(first + n_train + n_val, std::make_move_iterator(samples.end()));
  return out;
}

std::vector<Sample> load_dataset_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path images = dir / "images", masks = dir / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw ParseError("dataset " + dir.string() + " must contain images/ and masks/ directories");
  }
  std::map<std::string, fs::path> image_files, mask_files;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.path().extension() == ".pgm") image_files[entry.path().stem().string()] = entry.path();
  }
  for (const auto& entry : fs::directory_iterator(masks)) {
    if (entry.path().extension() == ".pgm") mask_files[entry.path().stem().string()] = entry.path();
  }
  if (image_files.empty()) throw ParseError("dataset " + dir.string() + " has no images/*.pgm files");
  for (const auto& [id, path] : mask_files) {
    if (!image_files.contains(id)) throw ParseError("mask " + path.string() + " has no matching image");
  }

  std::vector<Sample> samples;
  for (const auto& [id, path] : image_files) {
    auto mask_it = mask_files.find(id);
    if (mask_it == mask_files.end()) throw ParseError("image " + path.string() + " has no matching mask");
    Sample s;
    s.id = id;
    s.image = load_pgm(path);
    s.mask = load_pgm(mask_it->second);
    if (s.image.shape() != s.mask.shape()) {
      throw ParseError("mask " + mask_it->second.string() + " is " + shape_str(s.mask.shape()) + " but image is " +
                       shape_str(s.image.shape()));
    }
    for (std::size_t i = 0; i < s.mask.numel(); ++i) {
      if (s.mask[i] != 0.0f && s.mask[i] != 1.0f) {
        throw ParseError("mask " + mask_it->second.string() + " has a pixel that is neither 0 nor 255 at index " +
                         std::to_string(i));
      }
    }
    if (!samples.empty() && s.image.shape() != samples.front().image.shape()) {
      throw ParseError("image " + path.string() + " is " + shape_str(s.image.shape()) + ", expected " +
                       shape_str(samples.front().image.shape()));
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<std::filesystem::path> save_dataset_dir(std::span<const Sample> samples, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::vector<fs::path> written;
  for (const Sample& s : samples) {
    const fs::path image = dir / "images" / (s.id + ".pgm");
    const fs::path mask = dir / "masks" / (s.id + ".pgm");
    save_pgm(s.image, image);
    save_pgm(s.mask, mask);
    written.push_back(image);
    written.push_back(mask);
  }
  return written;
}

Tensor batch_images(std::span<const Sample> samples) { return batch_of(samples, false); }
Tensor batch_masks(std::span<const Sample> samples) { return batch_of(samples, true); }

}  // namespace atseg
