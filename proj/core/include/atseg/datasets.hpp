#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atseg/tensor.hpp"

namespace atseg {

/// A grayscale image in [0, 1] and its binary mask, both (1, H, W).
struct Sample {
  Tensor image;
  Tensor mask;
  std::string id;
};

struct SyntheticOptions {
  bool bias_field = false;
  /// Standard deviation of the additive Gaussian noise. Zero yields the clean image.
  double noise_sigma = 0.05;
};

/// Amplitude of the left-to-right bias ramp added when SyntheticOptions::bias_field is set.
inline constexpr double kBiasFieldAmplitude = 0.3;

/// Dark background with 1–3 brighter rotated ellipses; the mask is the exact ellipse
/// union sampled at pixel centres. Sample i depends only on (seed, i, h, w, options).
/// Throws ContractError unless n ≥ 1 and h, w ≥ 16.
std::vector<Sample> gen_synthetic(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed,
                                  const SyntheticOptions& options);
std::vector<Sample> gen_synthetic(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed, bool bias_field);

struct SplitSpec {
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
  std::uint64_t seed = 0;
};

struct DatasetSplits {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

/// Seeded shuffle, then a contiguous cut of floor(train·n), floor(val·n) and the
/// remainder. Throws ContractError for fewer than 10 samples or fractions not summing to 1.
DatasetSplits split_dataset(std::vector<Sample> samples, const SplitSpec& spec);

/// Reads `images/<id>.pgm` with `masks/<id>.pgm`, sorted by id. Mask bytes must be 0 or 255.
/// Throws ParseError on any malformed or unmatched file.
std::vector<Sample> load_dataset_dir(const std::filesystem::path& dir);

/// Writes the directory layout read by load_dataset_dir. Returns the files written.
std::vector<std::filesystem::path> save_dataset_dir(std::span<const Sample> samples, const std::filesystem::path& dir);

/// (N, 1, H, W) batches from the samples' images or masks.
Tensor batch_images(std::span<const Sample> samples);
Tensor batch_masks(std::span<const Sample> samples);

}  // namespace atseg
