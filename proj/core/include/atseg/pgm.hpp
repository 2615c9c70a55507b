#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "atseg/tensor.hpp"

namespace atseg {

/// Binary 8-bit PGM ("P5", maxval 255). Header comments are accepted; the payload
/// must be exactly width·height bytes. Pixel p decodes to p / 255 as a (1, H, W) tensor.
/// Throws ParseError naming the byte offset of the first problem.
Tensor decode_pgm(std::span<const std::uint8_t> bytes);

/// Encodes a (H, W), (1, H, W) or (1, 1, H, W) tensor with values in [0, 1],
/// rounding v·255 half-up. Throws std::domain_error on non-finite values.
std::vector<std::uint8_t> encode_pgm(const Tensor& image);

Tensor load_pgm(const std::filesystem::path& path);
void save_pgm(const Tensor& image, const std::filesystem::path& path);

/// floor(v·255 + 0.5), clamped to [0, 255].
std::uint8_t quantize_byte(float v);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace atseg
