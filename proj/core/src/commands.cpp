#include "rsam/commands.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "rsam/checkpoint.hpp"
#include "rsam/image_io.hpp"
#include "rsam/model.hpp"
#include "rsam/trainer.hpp"

namespace rsam {

namespace {

std::string one_line(std::string msg) {
  for (char& c : msg) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return msg;
}

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const DatasetError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitFailure;
  }
}

DatasetPair load_data_or_fail(const RunConfig& config) {
  config.validate();
  try {
    return load_datasets(config);
  } catch (const FormatError& e) {
    throw DatasetError(e.what());
  }
}

double normal(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = scale * normal(rng);
  return t;
}

// sum(out * weights) with fixed random weights so that no op's gradient is
// trivially constant.
Tensor project(Tape& tape, const Tensor& out, const Tensor& weights) { return sum(tape, mul(tape, out, weights)); }

GradCheckReport check_layer(std::mt19937_64& rng, const std::vector<NamedTensor>& inputs, const Shape& out_shape,
                            const std::function<Tensor(Tape&)>& op, double h, double tol) {
  const Tensor weights = random_tensor(rng, out_shape, false);
  return grad_check([&](Tape& tape) { return project(tape, op(tape), weights); }, inputs, h, tol);
}

}  // namespace

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const DatasetPair data = load_data_or_fail(config);
    TrainOptions options;
    options.out_dir = std::filesystem::path(config.out);
    options.log = &out;
    const TrainResult result = train_model(config, data.train, data.test, options);
    if (result.rows.empty()) {
      out << "best test top-1 n/a (0 epochs)\n";
    } else {
      out << "best test top-1 " << format_real(result.best_test_top1) << " at epoch " << result.best_epoch << '\n';
    }
    return kExitOk;
  });
}

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Checkpoint ck = checkpoint_load(options.checkpoint);
    RunConfig config = ck.config;
    if (options.data) config.data = *options.data;
    if (options.batch_size) config.batch_size = *options.batch_size;
    const DatasetPair data = load_data_or_fail(config);
    const Dataset& split = options.train_split ? data.train : data.test;
    const double acc = evaluate_top1(ck.params, config.model, split, config.batch_size);
    out << "top-1 " << format_real(acc) << " on " << split.size() << " examples\n";
    return kExitOk;
  });
}

std::string format_ablation_row(const AblationRow& row) {
  std::ostringstream os;
  os << row.variant << ',' << (row.feedback ? "true" : "false") << ',' << to_string(row.attention) << ','
     << row.glimpses << ',' << row.seed << ',' << row.epochs << ',' << format_real(row.final_test_top1) << ','
     << format_real(row.best_test_top1) << ',' << row.parameters;
  return os.str();
}

std::vector<std::pair<std::string, RunConfig>> ablation_variants(const RunConfig& base, const AblateOptions& options) {
  std::vector<std::pair<std::string, RunConfig>> variants;
  const std::filesystem::path root(base.out);
  if (options.mode != AblationMode::glimpses) {
    for (bool feedback : {true, false}) {
      for (AttentionMode attention : {AttentionMode::downsample, AttentionMode::fully_connected}) {
        RunConfig c = base;
        c.model.feedback_enabled = feedback;
        c.model.attention_mode = attention;
        const std::string name = std::string(feedback ? "feedback" : "nofeedback") + "_" + std::string(to_string(attention));
        c.out = (root / name).string();
        variants.emplace_back(name, c);
      }
    }
  }
  if (options.mode != AblationMode::grid) {
    for (std::size_t n : options.glimpse_list) {
      RunConfig c = base;
      c.model.n_glimpses = n;
      c.model.feedback_enabled = true;
      c.model.attention_mode = AttentionMode::downsample;
      const std::string name = "glimpses_" + std::to_string(n);
      c.out = (root / name).string();
      variants.emplace_back(name, c);
    }
  }
  return variants;
}

int cmd_ablate(const RunConfig& base, const AblateOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (options.mode != AblationMode::grid && options.glimpse_list.empty()) {
      throw ArgumentError("glimpse sweep needs at least one glimpse count");
    }
    const auto variants = ablation_variants(base, options);
    for (const auto& [name, config] : variants) config.validate();
    const DatasetPair data = load_data_or_fail(base);

    std::filesystem::create_directories(base.out);
    const std::filesystem::path csv = std::filesystem::path(base.out) / "ablation.csv";
    std::ofstream(csv, std::ios::trunc) << kAblationHeader << '\n';
    out << kAblationHeader << '\n';
    for (const auto& [name, config] : variants) {
      TrainOptions topts;
      topts.out_dir = std::filesystem::path(config.out);
      const TrainResult result = train_model(config, data.train, data.test, topts);
      AblationRow row;
      row.variant = name;
      row.feedback = config.model.feedback_enabled;
      row.attention = config.model.attention_mode;
      row.glimpses = config.model.n_glimpses;
      row.seed = config.seed;
      row.epochs = config.epochs;
      row.final_test_top1 = result.rows.empty() ? 0.0 : result.rows.back().test_top1;
      row.best_test_top1 = result.best_test_top1;
      row.parameters = count_parameters(result.params);
      const std::string line = format_ablation_row(row);
      std::ofstream(csv, std::ios::app) << line << '\n';
      out << line << '\n';
    }
    return kExitOk;
  });
}

RsamConfig gradcheck_micro_config() {
  RsamConfig c;
  c.n_glimpses = 2;
  c.channels = 3;
  c.height = 8;
  c.width = 8;
  c.n_classes = 10;
  c.hidden_size = 8;
  c.glimpse_features = 16;
  return c;
}

bool GradCheckSuite::passed() const {
  bool ok = model.passed;
  for (const auto& [name, report] : layers) ok = ok && report.passed;
  return ok;
}

GradCheckSuite run_gradcheck_suite(std::uint64_t seed, double h, double tol) {
  std::mt19937_64 rng(seed);
  GradCheckSuite suite;

  {
    const RsamConfig config = gradcheck_micro_config();
    const LayerParams params = init_rsam(config, seed);
    // Zero biases with identity batch norm put masked-out and dead-ReLU
    // regions exactly on the ReLU kink; move every bias and affine term off it.
    for (const auto& e : params.entries()) {
      if (e.kind != ParamKind::bias && e.kind != ParamKind::bn_affine) continue;
      Tensor t = e.tensor;
      for (double& v : t.values()) v += 0.1 * normal(rng);
    }
    const std::size_t batch = 2;
    const Tensor image = random_tensor(rng, {batch, config.channels, config.height, config.width}, false);
    std::vector<int> labels(batch);
    for (int& l : labels) l = static_cast<int>(rng() % config.n_classes);
    suite.model = grad_check(
        [&](Tape& tape) { return rsam_forward(tape, image, labels, params, config, Mode::eval).loss; },
        params.trainable(), h, tol);
  }

  const auto record = [&](std::string name, GradCheckReport report) { suite.layers.emplace_back(std::move(name), std::move(report)); };
  {
    const Tensor x = random_tensor(rng, {3, 4}, true), w = random_tensor(rng, {4, 5}, true), b = random_tensor(rng, {5}, true);
    record("linear", check_layer(rng, {{"x", x}, {"w", w}, {"b", b}}, {3, 5},
                              [&](Tape& t) { return linear(t, x, w, b); }, h, tol));
  }
  {
    const Tensor x = random_tensor(rng, {2, 2, 5, 5}, true), k = random_tensor(rng, {3, 2, 3, 3}, true),
                 b = random_tensor(rng, {3}, true);
    record("conv2d", check_layer(rng, {{"x", x}, {"k", k}, {"b", b}}, {2, 3, 5, 5},
                              [&](Tape& t) { return conv2d(t, x, k, b, 1, 1); }, h, tol));
    record("conv2d_stride2", check_layer(rng, {{"x", x}, {"k", k}, {"b", b}}, {2, 3, 3, 3},
                                      [&](Tape& t) { return conv2d(t, x, k, b, 2, 1); }, h, tol));
  }
  {
    const Tensor x = random_tensor(rng, {2, 2, 4, 4}, true);
    record("maxpool2d", check_layer(rng, {{"x", x}}, {2, 2, 2, 2}, [&](Tape& t) { return maxpool2d(t, x, 2, 2); }, h, tol));
    record("relu", check_layer(rng, {{"x", x}}, x.shape(), [&](Tape& t) { return relu(t, x); }, h, tol));
    record("sigmoid_tanh", check_layer(rng, {{"x", x}}, x.shape(),
                                    [&](Tape& t) { return mul(t, sigmoid(t, x), tanh_op(t, x)); }, h, tol));
  }
  for (const Shape& shape : {Shape{4, 3}, Shape{3, 2, 3, 3}}) {
    const std::size_t f = shape[1];
    const Tensor x = random_tensor(rng, shape, true);
    const BatchNormParams p{random_tensor(rng, {f}, true), random_tensor(rng, {f}, true), Tensor::zeros({f}),
                            Tensor::full({f}, 1.0)};
    record("batch_norm_train_" + shape_str(shape),
        check_layer(rng, {{"x", x}, {"gamma", p.gamma}, {"beta", p.beta}}, shape,
                    [&](Tape& t) { return batch_norm(t, x, p, Mode::train); }, h, tol));
    record("batch_norm_eval_" + shape_str(shape),
        check_layer(rng, {{"x", x}, {"gamma", p.gamma}, {"beta", p.beta}}, shape,
                    [&](Tape& t) { return batch_norm(t, x, p, Mode::eval); }, h, tol));
  }
  {
    const LstmCellParams p{random_tensor(rng, {3, 16}, true, 0.5), random_tensor(rng, {4, 16}, true, 0.5),
                           random_tensor(rng, {16}, true, 0.5)};
    const Tensor x = random_tensor(rng, {2, 3}, true), h0 = random_tensor(rng, {2, 4}, true),
                 c0 = random_tensor(rng, {2, 4}, true);
    const Tensor wh = random_tensor(rng, {2, 4}, false);
    record("lstm_cell", check_layer(rng,
                                 {{"w_ih", p.w_ih}, {"w_hh", p.w_hh}, {"bias", p.bias}, {"x", x}, {"h", h0}, {"c", c0}},
                                 {2, 4},
                                 [&](Tape& t) {
                                   const LstmState s = lstm_cell_step(t, p, x, h0, c0);
                                   return add(t, mul(t, s.h, wh), s.c);
                                 },
                                 h, tol));
  }
  {
    const Tensor logits = random_tensor(rng, {3, 5}, true);
    const std::vector<int> targets{0, 3, 4};
    record("softmax_cross_entropy",
        grad_check([&](Tape& t) { return cross_entropy(t, softmax(t, logits), targets); }, {{{"logits", logits}}}, h,
                   tol));
  }
  return suite;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (precision() != Precision::f64) throw ArgumentError("gradcheck requires RSAM_PRECISION=f64");
    const GradCheckSuite suite = run_gradcheck_suite(seed);
    out << "tensor,entries,max_rel_error,max_abs_error,worst_index,tape_grad,fd_grad,status\n";
    for (const auto& t : suite.model.tensors) {
      out << t.name << ',' << t.entries << ',' << format_real(t.max_rel_error) << ',' << format_real(t.max_abs_error)
          << ',' << t.worst_index << ',' << format_real(t.tape_grad) << ',' << format_real(t.fd_grad) << ','
          << (t.passed ? "PASS" : "FAIL") << '\n';
    }
    out << "layer,max_rel_error,max_abs_error,status\n";
    for (const auto& [name, report] : suite.layers) {
      out << name << ',' << format_real(report.max_rel_error) << ',' << format_real(report.max_abs_error) << ','
          << (report.passed ? "PASS" : "FAIL") << '\n';
    }
    double worst = suite.model.max_rel_error;
    for (const auto& [name, report] : suite.layers) worst = std::max(worst, report.max_rel_error);
    out << "gradcheck " << (suite.passed() ? "PASS" : "FAIL") << " max_rel_error " << format_real(worst)
        << " tolerance " << format_real(suite.model.tolerance) << '\n';
    if (!suite.passed()) {
      err << "error: gradient check failed for";
      for (const auto& name : suite.model.failures()) err << ' ' << name;
      for (const auto& [layer, report] : suite.layers) {
        for (const auto& name : report.failures()) err << ' ' << layer << '.' << name;
      }
      err << '\n';
      return kExitFailure;
    }
    return kExitOk;
  });
}

int cmd_visualize(const VisualizeOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (options.indices.empty()) throw ArgumentError("visualize needs at least one image index");
    const Checkpoint ck = checkpoint_load(options.checkpoint);
    RunConfig config = ck.config;
    if (options.data) config.data = *options.data;
    const DatasetPair data = load_data_or_fail(config);
    const Dataset& split = data.test;
    for (std::size_t idx : options.indices) {
      if (idx >= split.size()) {
        throw ArgumentError("image index " + std::to_string(idx) + " out of range (test split has " +
                            std::to_string(split.size()) + " images)");
      }
    }
    const RsamConfig& model = config.model;
    if (model.channels != 3) throw ArgumentError("visualize needs 3-channel images");

    const Tensor images = split.images(options.indices);
    Tape tape(false);
    const RsamOutput result = rsam_forward(tape, images, {}, ck.params, model, Mode::eval);
    const std::size_t plane = model.height * model.width;
    const std::size_t image_size = model.channels * plane;
    std::size_t written = 0;
    for (std::size_t b = 0; b < options.indices.size(); ++b) {
      const std::filesystem::path dir = options.out_dir / ("img_" + std::to_string(options.indices[b]));
      std::filesystem::create_directories(dir);
      for (std::size_t t = 0; t < result.traces.size(); ++t) {
        const auto& trace = result.traces[t];
        const auto masked = std::span<const double>(trace.masked_image.values()).subspan(b * image_size, image_size);
        const auto mask = std::span<const double>(trace.mask.values()).subspan(b * plane, plane);
        const std::string step = std::to_string(t + 1);
        write_file(dir / ("glimpse_" + step + ".ppm"), encode_ppm(masked, model.height, model.width));
        write_file(dir / ("mask_" + step + ".pgm"), encode_mask_pgm(mask, model.height, model.width));
        written += 2;
      }
    }
    out << "wrote " << written << " files to " << options.out_dir.string() << '\n';
    return kExitOk;
  });
}

}  // namespace rsam
