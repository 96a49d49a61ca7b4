#include "rsam/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

namespace rsam {

namespace {

double open_unit(std::mt19937_64& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

double gaussian(std::mt19937_64& rng) {
  const double u1 = open_unit(rng), u2 = open_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Uniform integer in [0, bound) by rejection.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace

double normalize_pixel(std::uint8_t byte) { return static_cast<double>(byte) / 127.5 - 1.0; }

std::uint8_t denormalize_pixel(double value) {
  const double scaled = std::round((value + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

std::span<const float> Dataset::image(std::size_t index) const {
  return std::span<const float>(pixels).subspan(index * image_size(), image_size());
}

Tensor Dataset::images(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ArgumentError("cannot gather an empty batch");
  Tensor out = Tensor::zeros({indices.size(), channels, height, width});
  auto v = out.values();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw ArgumentError("example index " + std::to_string(indices[b]) + " out of range");
    const auto src = image(indices[b]);
    std::copy(src.begin(), src.end(), v.begin() + b * image_size());
  }
  return out;
}

Dataset Dataset::head(std::size_t count) const {
  Dataset out = *this;
  if (count >= size()) return out;
  out.labels.resize(count);
  out.pixels.resize(count * image_size());
  return out;
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes, Split split, const std::string& origin) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
    throw FormatError(origin + ": truncated record at byte offset " + std::to_string(offset) + " (length " +
                      std::to_string(bytes.size()) + " is not a multiple of 3073)");
  }
  Dataset ds;
  ds.split = split;
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  ds.labels.reserve(records);
  ds.pixels.reserve(records * kCifarImageBytes);
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t offset = r * kCifarRecordBytes;
    const std::uint8_t label = bytes[offset];
    if (label >= kCifarClasses) {
      throw FormatError(origin + ": label byte " + std::to_string(label) + " > 9 at byte offset " +
                        std::to_string(offset));
    }
    ds.labels.push_back(label);
    for (std::size_t i = 1; i < kCifarRecordBytes; ++i) {
      ds.pixels.push_back(static_cast<float>(normalize_pixel(bytes[offset + i])));
    }
  }
  return ds;
}

Dataset load_cifar10_bin(std::span<const std::filesystem::path> paths, Split split) {
  Dataset all;
  all.split = split;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open CIFAR-10 file " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw DatasetError("failed reading " + path.string());
    Dataset part = parse_cifar10(bytes, split, path.string());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
  }
  return all;
}

Dataset load_cifar10_dir(const std::filesystem::path& dir, Split split) {
  std::vector<std::filesystem::path> files;
  if (split == Split::train) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  return load_cifar10_bin(files, split);
}

Batch BatchSequence::operator[](std::size_t batch) const {
  const auto& idx = index_lists_.at(batch);
  Batch out;
  out.indices = idx;
  out.images = dataset_->images(idx);
  out.labels.reserve(idx.size());
  for (std::size_t i : idx) out.labels.push_back(dataset_->labels[i]);
  return out;
}

std::vector<std::size_t> BatchSequence::sizes() const {
  std::vector<std::size_t> out;
  for (const auto& l : index_lists_) out.push_back(l.size());
  return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[bounded(rng, i)]);
  return order;
}

BatchSequence make_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed, bool shuffle) {
  if (batch_size < 1) throw ArgumentError("batch size must be >= 1");
  if (dataset.size() == 0) throw ArgumentError("cannot batch an empty dataset");
  std::vector<std::size_t> order;
  if (shuffle) {
    order = permutation(dataset.size(), seed);
  } else {
    order.resize(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  }
  std::vector<std::vector<std::size_t>> lists;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    lists.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return BatchSequence(dataset, std::move(lists));
}

SquareRegion synthetic_pattern_region(std::size_t image_hw, std::size_t label) {
  const std::size_t quadrant = image_hw / 2;
  const std::size_t side = std::max<std::size_t>(1, image_hw / 4);
  const std::size_t inset = (quadrant - side) / 2;
  return {(label / 2) * quadrant + inset, (label % 2) * quadrant + inset, side};
}

Dataset synthetic_dataset(std::size_t n, std::size_t image_hw, std::size_t n_classes, std::uint64_t seed,
                          Split split) {
  if (n_classes < 1 || n_classes > 4) throw ArgumentError("synthetic dataset supports 1 to 4 classes");
  if (image_hw < 8) throw ArgumentError("synthetic images must be at least 8x8");
  Dataset ds;
  ds.split = split;
  ds.height = ds.width = image_hw;
  ds.labels.resize(n);
  ds.pixels.resize(n * ds.image_size());
  std::mt19937_64 rng(seed);
  const std::size_t plane = image_hw * image_hw;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % n_classes);
    ds.labels[i] = label;
    const SquareRegion sq = synthetic_pattern_region(image_hw, static_cast<std::size_t>(label));
    float* img = ds.pixels.data() + i * ds.image_size();
    for (std::size_t c = 0; c < ds.channels; ++c) {
      for (std::size_t r = 0; r < image_hw; ++r) {
        for (std::size_t col = 0; col < image_hw; ++col) {
          const bool on = r >= sq.row && r < sq.row + sq.side && col >= sq.col && col < sq.col + sq.side;
          const double base = on ? kSyntheticPattern : kSyntheticBackground;
          img[c * plane + r * image_hw + col] =
              static_cast<float>(std::clamp(base + kSyntheticNoise * gaussian(rng), -1.0, 1.0));
        }
      }
    }
  }
  return ds;
}

}  // namespace rsam
