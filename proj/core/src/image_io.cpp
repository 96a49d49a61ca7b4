#include "rsam/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "rsam/data.hpp"

namespace rsam {

namespace {

std::vector<std::uint8_t> header(const char* magic, std::size_t height, std::size_t width) {
  const std::string h = std::string(magic) + " " + std::to_string(width) + " " + std::to_string(height) + " 255\n";
  return {h.begin(), h.end()};
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(std::span<const double> chw, std::size_t height, std::size_t width) {
  const std::size_t plane = height * width;
  if (chw.size() != 3 * plane) throw DimensionError("encode_ppm: expected a 3-channel image");
  auto out = header("P6", height, width);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) out.push_back(denormalize_pixel(chw[c * plane + p]));
  }
  return out;
}

std::vector<std::uint8_t> encode_mask_pgm(std::span<const double> mask, std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw DimensionError("encode_mask_pgm: mask size mismatch");
  auto out = header("P5", height, width);
  const auto [lo, hi] = std::minmax_element(mask.begin(), mask.end());
  const double range = *hi - *lo;
  for (double v : mask) {
    double scaled;
    if (range > 0.0) {
      scaled = std::round(255.0 * (v - *lo) / range);
    } else {
      scaled = *hi != 0.0 ? 255.0 : 0.0;
    }
    out.push_back(static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0)));
  }
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace rsam
