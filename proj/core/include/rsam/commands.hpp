#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rsam/grad_check.hpp"
#include "rsam/run_config.hpp"

namespace rsam {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // invalid input, config, checkpoint or a failed check
inline constexpr int kExitData = 2;     // dataset missing or unreadable

// Writes metrics.csv, config.txt and checkpoints under config.out and prints
// the best test top-1 as the final line.
int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::optional<std::string> data;  // overrides the checkpoint's dataset
  std::optional<std::size_t> batch_size;
  bool train_split = false;
};

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);

enum class AblationMode { grid, glimpses, both };

struct AblateOptions {
  AblationMode mode = AblationMode::grid;
  std::vector<std::size_t> glimpse_list{1, 2, 4, 6};
};

struct AblationRow {
  std::string variant;
  bool feedback = true;
  AttentionMode attention = AttentionMode::downsample;
  std::size_t glimpses = 0;
  std::uint64_t seed = 0;
  int epochs = 0;
  double final_test_top1 = 0.0;
  double best_test_top1 = 0.0;
  std::size_t parameters = 0;
};

inline constexpr std::string_view kAblationHeader =
    "variant,feedback,attention,glimpses,seed,epochs,final_test_top1,best_test_top1,parameters";

std::string format_ablation_row(const AblationRow& row);

// The variant configs a sweep trains, all sharing the base seed and epochs.
std::vector<std::pair<std::string, RunConfig>> ablation_variants(const RunConfig& base, const AblateOptions& options);

// Trains each variant into config.out/<variant>/ and writes
// config.out/ablation.csv.
int cmd_ablate(const RunConfig& base, const AblateOptions& options, std::ostream& out, std::ostream& err);

// Micro model used for gradient verification: 3x8x8 images, hidden 8,
// 2 glimpses, batch 2, eval-mode batch norm at identity statistics.
RsamConfig gradcheck_micro_config();

struct GradCheckSuite {
  GradCheckReport model;                                    // one row per trainable tensor
  std::vector<std::pair<std::string, GradCheckReport>> layers;  // isolated ops
  bool passed() const;
};

GradCheckSuite run_gradcheck_suite(std::uint64_t seed, double h = 1e-5, double tol = 1e-4);

int cmd_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err);

struct VisualizeOptions {
  std::filesystem::path checkpoint;
  std::vector<std::size_t> indices;
  std::filesystem::path out_dir;
  std::optional<std::string> data;
};

// For each index of the test split writes img_<index>/glimpse_<t>.ppm and
// img_<index>/mask_<t>.pgm for t = 1..N.
int cmd_visualize(const VisualizeOptions& options, std::ostream& out, std::ostream& err);

}  // namespace rsam
