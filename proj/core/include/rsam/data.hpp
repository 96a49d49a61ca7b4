#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsam/tensor.hpp"

namespace rsam {

// Raised when a dataset file cannot be opened or read.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = kCifarImageBytes + 1;
inline constexpr int kCifarClasses = 10;

// Affine map of a byte onto [-1, 1]: x / 127.5 - 1.
double normalize_pixel(std::uint8_t byte);
std::uint8_t denormalize_pixel(double value);

enum class Split { train, test };

// Images are held as normalized 32-bit reals in [M, C, H, W] order; batches
// are materialized as tensors on demand.
struct Dataset {
  Split split = Split::train;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }
  std::span<const float> image(std::size_t index) const;

  // Gathers the listed examples into a [B, C, H, W] tensor.
  Tensor images(std::span<const std::size_t> indices) const;

  // The first `count` examples (all of them when count >= size()).
  Dataset head(std::size_t count) const;
};

// Parses consecutive 3073-byte records. `origin` names the source in errors.
Dataset parse_cifar10(std::span<const std::uint8_t> bytes, Split split, const std::string& origin = "buffer");

Dataset load_cifar10_bin(std::span<const std::filesystem::path> paths, Split split = Split::train);

// data_batch_1..5.bin or test_batch.bin under `dir`.
Dataset load_cifar10_dir(const std::filesystem::path& dir, Split split);

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

// One epoch's partition of a dataset. Holds a pointer to the dataset, which
// must outlive it.
class BatchSequence {
 public:
  BatchSequence(const Dataset& dataset, std::vector<std::vector<std::size_t>> index_lists)
      : dataset_(&dataset), index_lists_(std::move(index_lists)) {}

  std::size_t size() const { return index_lists_.size(); }
  std::span<const std::size_t> indices(std::size_t batch) const { return index_lists_.at(batch); }
  Batch operator[](std::size_t batch) const;
  std::vector<std::size_t> sizes() const;

 private:
  const Dataset* dataset_;
  std::vector<std::vector<std::size_t>> index_lists_;
};

// Every example exactly once; the permutation is a pure function of the seed.
BatchSequence make_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed, bool shuffle);

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

inline constexpr double kSyntheticNoise = 0.1;
inline constexpr double kSyntheticBackground = 0.0;
inline constexpr double kSyntheticPattern = 0.8;

// Location-coded task: class k draws a bright square centred in quadrant k
// (0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right) over a noisy
// background. Labels cycle 0..K-1 so classes are balanced.
Dataset synthetic_dataset(std::size_t n, std::size_t image_hw, std::size_t n_classes, std::uint64_t seed,
                          Split split = Split::train);

struct SquareRegion {
  std::size_t row = 0, col = 0, side = 0;
};

SquareRegion synthetic_pattern_region(std::size_t image_hw, std::size_t label);

}  // namespace rsam
