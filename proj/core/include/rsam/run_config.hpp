#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "rsam/model.hpp"
#include "rsam/optim.hpp"

namespace rsam {

class ConfigError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

inline constexpr std::string_view kSyntheticData = "synthetic";

struct RunConfig {
  RsamConfig model;
  int epochs = 20;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::string data{kSyntheticData};  // CIFAR-10 directory or "synthetic"
  std::size_t synthetic_train = 2000;
  std::size_t synthetic_test = 500;
  std::size_t train_limit = 0;  // 0 keeps the whole split
  std::size_t test_limit = 0;
  std::string out = "rsam_run";
  int checkpoint_every = 0;  // epochs between checkpoints; 0 writes only the final one
  double lr = kInitialLearningRate;
  double lr_decay = kLearningRateDecay;
  double momentum = kMomentum;
  double weight_decay = kWeightDecay;

  bool synthetic() const { return data == kSyntheticData; }
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Line-based `key = value` text; `#` starts a comment line. Keys are always
// rendered in the same order and reals use the shortest round-trip form, so
// parse_config(render_config(c)) == c.
std::string render_config(const RunConfig& config);
RunConfig parse_config(std::string_view text);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

// Shortest decimal text that parses back to the same double.
std::string format_real(double value);

}  // namespace rsam
