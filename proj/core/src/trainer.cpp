#include "rsam/trainer.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <ostream>
#include <sstream>

#include "rsam/checkpoint.hpp"
#include "rsam/model.hpp"
#include "rsam/optim.hpp"

namespace rsam {

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1));
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_field(std::string_view text, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("metrics line " + std::to_string(line) + ": bad field '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& row) {
  return std::to_string(row.epoch) + "," + format_real(row.train_loss) + "," + format_real(row.train_top1) + "," +
         format_real(row.test_top1) + "," + format_real(row.lr) + "," + format_real(row.wall_seconds);
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::vector<MetricsRow> rows;
  std::size_t line_no = 0;
  bool header = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!header) {
      if (line != kMetricsHeader) throw FormatError("metrics: unexpected header '" + std::string(line) + "'");
      header = true;
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 6) throw FormatError("metrics line " + std::to_string(line_no) + ": expected 6 fields");
    MetricsRow r;
    const double epoch = parse_field(f[0], line_no);
    r.epoch = static_cast<int>(epoch);
    if (static_cast<double>(r.epoch) != epoch) throw FormatError("metrics line " + std::to_string(line_no) + ": non-integer epoch");
    r.train_loss = parse_field(f[1], line_no);
    r.train_top1 = parse_field(f[2], line_no);
    r.test_top1 = parse_field(f[3], line_no);
    r.lr = parse_field(f[4], line_no);
    r.wall_seconds = parse_field(f[5], line_no);
    if (r.train_top1 < 0.0 || r.train_top1 > 1.0 || r.test_top1 < 0.0 || r.test_top1 > 1.0) {
      throw FormatError("metrics line " + std::to_string(line_no) + ": top-1 outside [0, 1]");
    }
    if (!rows.empty() && r.epoch <= rows.back().epoch) {
      throw FormatError("metrics line " + std::to_string(line_no) + ": epochs not strictly increasing");
    }
    rows.push_back(r);
  }
  if (!header) throw FormatError("metrics: missing header");
  return rows;
}

DatasetPair load_datasets(const RunConfig& config) {
  config.validate();
  DatasetPair pair;
  if (config.synthetic()) {
    pair.train = synthetic_dataset(config.synthetic_train, config.model.height, config.model.n_classes,
                                   config.seed * 2 + 1, Split::train);
    pair.test = synthetic_dataset(config.synthetic_test, config.model.height, config.model.n_classes,
                                  config.seed * 2 + 2, Split::test);
  } else {
    pair.train = load_cifar10_dir(config.data, Split::train);
    pair.test = load_cifar10_dir(config.data, Split::test);
  }
  if (config.train_limit > 0) pair.train = pair.train.head(config.train_limit);
  if (config.test_limit > 0) pair.test = pair.test.head(config.test_limit);
  return pair;
}

double top1(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("top1: prediction/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate_top1(const LayerParams& params, const RsamConfig& config, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  const BatchSequence batches = make_batches(data, batch_size, 0, false);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Batch batch = batches[b];
    Tape tape(false);
    const RsamOutput out = rsam_forward(tape, batch.images, {}, params, config, Mode::eval);
    const auto pred = predict(out.avg_probs);
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainResult train_model(const RunConfig& config, const Dataset& train, const Dataset& test,
                        const TrainOptions& options) {
  config.validate();
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();

  TrainResult result;
  result.params = init_rsam(config.model, config.seed);
  SgdState sgd(result.params, SgdHyper{config.momentum, config.weight_decay});
  std::vector<Tensor> trainable = result.params.trainable_tensors();

  std::filesystem::path metrics_path;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    save_config(config, *options.out_dir / "config.txt");
    metrics_path = *options.out_dir / "metrics.csv";
    std::ofstream(metrics_path, std::ios::trunc) << kMetricsHeader << '\n';
  }

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = lr_schedule(config.lr, config.lr_decay, epoch - 1);
    const BatchSequence batches = make_batches(train, config.batch_size, epoch_seed(config.seed, epoch), true);
    double loss_sum = 0.0;
    std::size_t seen = 0, hits = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      if (batches.indices(b).size() < 2) continue;
      const Batch batch = batches[b];
      zero_grads(trainable);
      Tape tape;
      const RsamOutput out = rsam_forward(tape, batch.images, batch.labels, result.params, config.model, Mode::train);
      backward(out.loss, tape);
      sgd_step(result.params, sgd, lr);

      const auto pred = predict(out.avg_probs);
      for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i] ? 1 : 0;
      loss_sum += out.loss.item() * static_cast<double>(pred.size());
      seen += pred.size();
    }

    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    row.train_top1 = seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
    row.test_top1 = evaluate_top1(result.params, config.model, test, config.batch_size);
    row.lr = lr;
    row.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
    result.rows.push_back(row);
    if (row.test_top1 > result.best_test_top1 || result.best_epoch == 0) {
      result.best_test_top1 = row.test_top1;
      result.best_epoch = epoch;
    }

    if (options.out_dir) {
      std::ofstream(metrics_path, std::ios::app) << format_metrics_row(row) << '\n';
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
        checkpoint_save(result.params, config, *options.out_dir / ("checkpoint_epoch_" + std::to_string(epoch) + ".rsam"));
      }
    }
    if (options.log) {
      *options.log << "epoch " << epoch << " loss " << row.train_loss << " train_top1 " << row.train_top1
                   << " test_top1 " << row.test_top1 << " lr " << row.lr << '\n';
    }
    if (options.stop_after && options.stop_after(row)) break;
  }
  if (options.out_dir) checkpoint_save(result.params, config, *options.out_dir / "final.rsam");
  return result;
}

}  // namespace rsam
