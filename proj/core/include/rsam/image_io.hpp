#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rsam {

// Binary PPM ("P6") from a normalized [C=3,H,W] image; pixels are mapped back
// to bytes with denormalize_pixel and interleaved as RGB.
std::vector<std::uint8_t> encode_ppm(std::span<const double> chw, std::size_t height, std::size_t width);

// Binary PGM ("P5") of a mask, min-max scaled to 0..255. A constant mask maps
// to 0 when it is zero and to 255 otherwise.
std::vector<std::uint8_t> encode_mask_pgm(std::span<const double> mask, std::size_t height, std::size_t width);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace rsam
