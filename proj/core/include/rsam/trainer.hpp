#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rsam/data.hpp"
#include "rsam/layers.hpp"
#include "rsam/run_config.hpp"

namespace rsam {

struct MetricsRow {
  int epoch = 0;
  double train_loss = 0.0;  // glimpse-averaged, example-weighted over the epoch
  double train_top1 = 0.0;  // train-mode predictions made during the epoch
  double test_top1 = 0.0;   // eval-mode pass after the epoch
  double lr = 0.0;
  double wall_seconds = 0.0;
};

inline constexpr std::string_view kMetricsHeader = "epoch,train_loss,train_top1,test_top1,lr,wall_seconds";

std::string format_metrics_row(const MetricsRow& row);

// Strict reader: exact header, six unquoted numeric fields per row, epochs
// strictly increasing, top-1 values in [0, 1].
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);

struct DatasetPair {
  Dataset train;
  Dataset test;
};

// Synthetic data is generated from the run seed; otherwise the CIFAR-10
// binaries are read from `config.data`. Limits are applied afterwards.
DatasetPair load_datasets(const RunConfig& config);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.csv, checkpoints, config.txt
  std::ostream* log = nullptr;
  // Checked after every epoch's row is recorded; returning true ends training.
  std::function<bool(const MetricsRow&)> stop_after;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  double best_test_top1 = 0.0;
  int best_epoch = 0;
  LayerParams params;
};

// Epoch e (1-based) trains with lr_schedule(lr, lr_decay, e - 1). Training
// batches of a single example are skipped since batch norm needs two.
TrainResult train_model(const RunConfig& config, const Dataset& train, const Dataset& test,
                        const TrainOptions& options = {});

// Eval-mode top-1 of the glimpse-averaged prediction.
double evaluate_top1(const LayerParams& params, const RsamConfig& config, const Dataset& data,
                     std::size_t batch_size = 128);

// Fraction of rows whose prediction equals the label.
double top1(std::span<const int> predictions, std::span<const int> labels);

}  // namespace rsam
