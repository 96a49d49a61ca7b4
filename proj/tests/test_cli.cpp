#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rsam/checkpoint.hpp"
#include "rsam/commands.hpp"
#include "rsam/data.hpp"
#include "rsam/image_io.hpp"
#include "rsam/run_config.hpp"
#include "rsam/trainer.hpp"
#include "test_util.hpp"

using namespace rsam;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(const fs::path& out) {
  RunConfig c;
  c.model.n_glimpses = 2;
  c.model.height = c.model.width = 8;
  c.model.n_classes = 4;
  c.model.hidden_size = 8;
  c.model.glimpse_features = 12;
  c.epochs = 2;
  c.batch_size = 16;
  c.synthetic_train = 40;
  c.synthetic_test = 20;
  c.seed = 3;
  c.out = out.string();
  return c;
}

RunConfig random_config(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RunConfig c;
  c.model.n_glimpses = 1 + rng() % 8;
  c.model.height = 8 + 4 * (rng() % 8);
  c.model.width = c.model.height;
  c.model.n_classes = 1 + rng() % 4;
  c.model.hidden_size = 1 + rng() % 300;
  c.model.glimpse_features = 1 + rng() % 300;
  c.model.feedback_enabled = rng() % 2;
  c.model.attention_mode = rng() % 2 ? AttentionMode::downsample : AttentionMode::fully_connected;
  c.model.bn_eps = unit(rng) * 1e-3 + 1e-12;
  c.model.bn_momentum = unit(rng) * 0.9 + 0.05;
  c.epochs = static_cast<int>(rng() % 500);
  c.batch_size = 1 + rng() % 512;
  c.seed = rng();
  c.synthetic_train = 1 + rng() % 100000;
  c.synthetic_test = 1 + rng() % 100000;
  c.train_limit = rng() % 1000;
  c.test_limit = rng() % 1000;
  c.out = "runs/r" + std::to_string(rng() % 1000) + " with space";
  c.checkpoint_every = static_cast<int>(rng() % 10);
  c.lr = unit(rng) * 0.5 + 1e-9;
  c.lr_decay = unit(rng) + 0.01;
  c.momentum = unit(rng) * 0.99;
  c.weight_decay = unit(rng) * 1e-2;
  return c;
}

void write_cifar_dir(const fs::path& dir, std::size_t train, std::size_t test, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto write = [&](const fs::path& p, std::size_t n) {
    std::ofstream f(p, std::ios::binary);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<char> r(kCifarRecordBytes);
      r[0] = static_cast<char>(i % 10);
      for (std::size_t j = 1; j < r.size(); ++j) r[j] = static_cast<char>(rng() & 0xFF);
      f.write(r.data(), static_cast<std::streamsize>(r.size()));
    }
  };
  for (int b = 1; b <= 5; ++b) write(dir / ("data_batch_" + std::to_string(b) + ".bin"), train / 5);
  write(dir / "test_batch.bin", test);
}

}  // namespace

TEST(Config, RenderParseIdentityOnRandomConfigs) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const RunConfig c = random_config(rng);
    const std::string text = render_config(c);
    EXPECT_EQ(parse_config(text), c) << text;
    EXPECT_EQ(render_config(parse_config(text)), text);
  }
}

TEST(Config, CommentsBlankLinesAndPartialFiles) {
  const RunConfig c = parse_config("# header\n\n  glimpses = 6  \n# note\nfeedback=false\nattention = fc\n");
  EXPECT_EQ(c.model.n_glimpses, 6u);
  EXPECT_FALSE(c.model.feedback_enabled);
  EXPECT_EQ(c.model.attention_mode, AttentionMode::fully_connected);
  EXPECT_EQ(c.batch_size, 128u);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("glimpses 4\n"), ConfigError);
  EXPECT_THROW(parse_config("bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("epochs = many\n"), ConfigError);
  EXPECT_THROW(parse_config("feedback = yes\n"), ConfigError);
  EXPECT_THROW(parse_config("lr = 0.1x\n"), ConfigError);
  RunConfig c;
  c.model.n_classes = 10;
  EXPECT_THROW(c.validate(), ConfigError);  // synthetic data caps classes at 4
  c.data = "/some/cifar";
  EXPECT_NO_THROW(c.validate());
  c.model.height = c.model.width = 16;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/rsam.cfg"), ConfigError);
}

TEST(Config, FormatRealIsShortestRoundTrip) {
  EXPECT_EQ(format_real(0.1), "0.1");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = d(rng);
    EXPECT_EQ(std::stod(format_real(v)), v);
  }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const test_util::TempDir dir("ckpt");
  RunConfig cfg = tiny_run(dir.path());
  LayerParams params = init_rsam(cfg.model, 4);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  for (const auto& e : params.entries()) {
    Tensor t = e.tensor;
    for (double& v : t.values()) v += nd(rng);
  }
  const fs::path a = dir.path() / "a.rsam", b = dir.path() / "b.rsam";
  checkpoint_save(params, cfg, a);
  const Checkpoint ck = checkpoint_load(a);
  EXPECT_EQ(ck.config, cfg);
  checkpoint_save(ck.params, ck.config, b);
  EXPECT_EQ(test_util::read_bytes(a), test_util::read_bytes(b));

  ASSERT_EQ(ck.params.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& want = params.entries()[i];
    const auto& got = ck.params.entries()[i];
    EXPECT_EQ(got.name, want.name);
    EXPECT_EQ(got.kind, want.kind);
    for (std::size_t j = 0; j < want.tensor.size(); ++j) {
      ASSERT_EQ(got.tensor.values()[j], static_cast<double>(static_cast<float>(want.tensor.values()[j])));
    }
  }
}

TEST(Checkpoint, LayoutHeader) {
  RunConfig cfg = tiny_run("x");
  const auto bytes = encode_checkpoint(init_rsam(cfg.model, 0), cfg);
  ASSERT_GT(bytes.size(), 10u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RSAM");
  EXPECT_EQ(bytes[4] | bytes[5] << 8, 1);
  const std::string text = render_config(cfg);
  const std::uint32_t len = bytes[6] | bytes[7] << 8 | bytes[8] << 16 | static_cast<std::uint32_t>(bytes[9]) << 24;
  EXPECT_EQ(len, text.size());
  EXPECT_EQ(std::string(bytes.begin() + 10, bytes.begin() + 10 + len), text);
}

TEST(Checkpoint, RejectsTamperingAndReportsTruncationOffset) {
  RunConfig cfg = tiny_run("x");
  const LayerParams params = init_rsam(cfg.model, 0);
  auto bytes = encode_checkpoint(params, cfg);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad_version), FormatError);

  try {
    decode_checkpoint(std::span(bytes).first(5));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 4"), std::string::npos) << e.what();
  }

  // Cut inside the first tensor's values.
  const auto& first = params.entries()[0];
  const std::size_t values_at = 4 + 2 + 4 + render_config(cfg).size() + 4 + first.name.size() + 4 + 4 * first.tensor.rank();
  try {
    decode_checkpoint(std::span(bytes).first(values_at + 7));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset " + std::to_string(values_at)), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, MismatchNamesTheTensor) {
  RunConfig cfg = tiny_run("x");
  LayerParams params = init_rsam(cfg.model, 0);
  RunConfig other = cfg;
  other.model.hidden_size = 9;
  // Config says hidden 9 but the tensors were built with hidden 8.
  const auto bytes = encode_checkpoint(params, other);
  try {
    decode_checkpoint(bytes);
    FAIL() << "expected CheckpointMismatch";
  } catch (const CheckpointMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("context.w_ih"), std::string::npos) << e.what();
  }
}

TEST(ImageIo, PpmHeaderAndPayload) {
  std::vector<double> img(3 * 32 * 32);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = normalize_pixel(static_cast<std::uint8_t>(i % 256));
  const auto ppm = encode_ppm(img, 32, 32);
  const std::string header = "P6 32 32 255\n";
  ASSERT_EQ(ppm.size(), header.size() + 3072);
  EXPECT_EQ(std::string(ppm.begin(), ppm.begin() + header.size()), header);
  // Interleaved RGB: pixel p takes bytes from planes 0, 1, 2.
  EXPECT_EQ(ppm[header.size() + 0], 0);
  EXPECT_EQ(ppm[header.size() + 1], 1024 % 256);
  EXPECT_EQ(ppm[header.size() + 3], 1);
  EXPECT_THROW(encode_ppm(std::vector<double>(10), 2, 2), DimensionError);
}

TEST(ImageIo, MaskScaling) {
  const std::string header = "P5 2 2 255\n";
  const auto scaled = encode_mask_pgm(std::vector<double>{0.0, 0.5, 1.0, 2.0}, 2, 2);
  EXPECT_EQ(std::vector<std::uint8_t>(scaled.begin() + header.size(), scaled.end()),
            (std::vector<std::uint8_t>{0, 64, 128, 255}));
  const auto zero = encode_mask_pgm(std::vector<double>(4, 0.0), 2, 2);
  EXPECT_EQ(std::vector<std::uint8_t>(zero.begin() + header.size(), zero.end()), std::vector<std::uint8_t>(4, 0));
  const auto flat = encode_mask_pgm(std::vector<double>(4, 0.3), 2, 2);
  EXPECT_EQ(std::vector<std::uint8_t>(flat.begin() + header.size(), flat.end()), std::vector<std::uint8_t>(4, 255));
}

TEST(Metrics, FormatAndStrictParse) {
  MetricsRow r{3, 0.25, 0.5, 0.75, 0.009025, 12.5};
  const std::string text = std::string(kMetricsHeader) + "\n" + format_metrics_row(r) + "\n";
  const auto rows = parse_metrics_csv(text);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].epoch, 3);
  EXPECT_EQ(rows[0].lr, 0.009025);
  EXPECT_THROW(parse_metrics_csv("epoch,loss\n"), FormatError);
  EXPECT_THROW(parse_metrics_csv(std::string(kMetricsHeader) + "\n1,0.1,0.5,1.5,0.01,1\n"), FormatError);
  EXPECT_THROW(parse_metrics_csv(std::string(kMetricsHeader) + "\n2,0.1,0.5,0.5,0.01,1\n1,0.1,0.5,0.5,0.01,1\n"),
               FormatError);
  EXPECT_THROW(parse_metrics_csv(std::string(kMetricsHeader) + "\n1,\"0.1\",0.5,0.5,0.01,1\n"), FormatError);
  EXPECT_TRUE(parse_metrics_csv(std::string(kMetricsHeader) + "\n").empty());
}

TEST(Train, ZeroEpochsWritesHeaderOnly) {
  const test_util::TempDir dir("train0");
  RunConfig cfg = tiny_run(dir.path() / "run");
  cfg.epochs = 0;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(cfg, out, err), kExitOk) << err.str();
  const std::string metrics = test_util::read_text(dir.path() / "run" / "metrics.csv");
  EXPECT_EQ(metrics, std::string(kMetricsHeader) + "\n");
  EXPECT_TRUE(parse_metrics_csv(metrics).empty());
}

TEST(Train, WritesRowsCheckpointsAndIsDeterministic) {
  const test_util::TempDir dir("train");
  RunConfig cfg = tiny_run(dir.path() / "a");
  cfg.epochs = 3;
  cfg.checkpoint_every = 2;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(cfg, out, err), kExitOk) << err.str();
  RunConfig again = cfg;
  again.out = (dir.path() / "b").string();
  ASSERT_EQ(cmd_train(again, out, err), kExitOk) << err.str();

  const auto a = parse_metrics_csv(test_util::read_text(dir.path() / "a" / "metrics.csv"));
  const auto b = parse_metrics_csv(test_util::read_text(dir.path() / "b" / "metrics.csv"));
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(b.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].epoch, static_cast<int>(i + 1));
    EXPECT_EQ(a[i].train_loss, b[i].train_loss);
    EXPECT_EQ(a[i].train_top1, b[i].train_top1);
    EXPECT_EQ(a[i].test_top1, b[i].test_top1);
    EXPECT_EQ(a[i].lr, b[i].lr);
  }
  EXPECT_TRUE(fs::exists(dir.path() / "a" / "checkpoint_epoch_2.rsam"));
  EXPECT_FALSE(fs::exists(dir.path() / "a" / "checkpoint_epoch_3.rsam"));
  EXPECT_TRUE(fs::exists(dir.path() / "a" / "final.rsam"));
  EXPECT_EQ(load_config(dir.path() / "a" / "config.txt"), cfg);
  EXPECT_NE(out.str().find("best test top-1"), std::string::npos);
}

TEST(Train, StopHookEndsEarly) {
  RunConfig cfg = tiny_run("unused");
  cfg.epochs = 10;
  const DatasetPair data = load_datasets(cfg);
  TrainOptions opts;
  opts.stop_after = [](const MetricsRow& row) { return row.epoch == 2; };
  EXPECT_EQ(train_model(cfg, data.train, data.test, opts).rows.size(), 2u);
}

TEST(Eval, UntrainedModelIsNearChanceOnBalancedData) {
  const test_util::TempDir dir("eval");
  write_cifar_dir(dir.path(), 10, 2000, 1);
  RunConfig cfg;
  cfg.data = dir.path().string();
  cfg.model.hidden_size = 16;
  cfg.model.glimpse_features = 16;
  cfg.model.n_glimpses = 2;
  const fs::path ck = dir.path() / "untrained.rsam";
  checkpoint_save(init_rsam(cfg.model, 0), cfg, ck);

  std::ostringstream out1, out2, err;
  EvalOptions opts;
  opts.checkpoint = ck;
  ASSERT_EQ(cmd_eval(opts, out1, err), kExitOk) << err.str();
  ASSERT_EQ(cmd_eval(opts, out2, err), kExitOk) << err.str();
  EXPECT_EQ(out1.str(), out2.str());
  const std::string line = out1.str();
  ASSERT_EQ(line.rfind("top-1 ", 0), 0u) << line;
  const double acc = std::stod(line.substr(6));
  EXPECT_NEAR(acc, 0.10, 0.03) << line;
  EXPECT_NE(line.find("2000 examples"), std::string::npos);
}

TEST(Eval, OneHotPredictionsScorePerfectly) {
  const std::vector<int> labels{2, 0, 1};
  EXPECT_EQ(top1(predict(Tensor::from({3, 3}, {0, 0, 1, 1, 0, 0, 0, 1, 0})), labels), 1.0);
}

TEST(Eval, ErrorsAreSingleLineAndTyped) {
  const test_util::TempDir dir("evalerr");
  std::ostringstream out, err;
  EvalOptions opts;
  opts.checkpoint = dir.path() / "missing.rsam";
  EXPECT_EQ(cmd_eval(opts, out, err), kExitFailure);
  const std::string message = err.str();
  EXPECT_EQ(message.rfind("error: ", 0), 0u);
  EXPECT_EQ(std::count(message.begin(), message.end(), '\n'), 1);

  RunConfig cfg;
  cfg.data = (dir.path() / "no_cifar_here").string();
  const fs::path ck = dir.path() / "m.rsam";
  checkpoint_save(init_rsam(cfg.model, 0), cfg, ck);
  std::ostringstream err2;
  opts.checkpoint = ck;
  EXPECT_EQ(cmd_eval(opts, out, err2), kExitData);
  EXPECT_EQ(err2.str().rfind("error: ", 0), 0u);
}

TEST(Ablate, GridAndSweepRows) {
  RunConfig base = tiny_run("root");
  const auto grid = ablation_variants(base, {AblationMode::grid, {}});
  ASSERT_EQ(grid.size(), 4u);
  EXPECT_EQ(grid[0].first, "feedback_downsample");
  EXPECT_EQ(grid[3].first, "nofeedback_fc");
  EXPECT_FALSE(grid[3].second.model.feedback_enabled);
  const auto sweep = ablation_variants(base, {AblationMode::glimpses, {1, 2, 4, 6}});
  ASSERT_EQ(sweep.size(), 4u);
  EXPECT_EQ(sweep[2].second.model.n_glimpses, 4u);
  EXPECT_EQ(ablation_variants(base, {AblationMode::both, {3}}).size(), 5u);
  for (const auto& [name, c] : grid) {
    EXPECT_EQ(c.seed, base.seed);
    EXPECT_EQ(c.epochs, base.epochs);
  }
}

TEST(Ablate, WritesCsvWithControlledColumns) {
  const test_util::TempDir dir("ablate");
  RunConfig base = tiny_run(dir.path());
  base.epochs = 1;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_ablate(base, {AblationMode::glimpses, {1, 2}}, out, err), kExitOk) << err.str();
  std::istringstream csv(test_util::read_text(dir.path() / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, kAblationHeader);
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].rfind("glimpses_1,true,downsample,1,3,1,", 0), 0u) << rows[0];
  EXPECT_EQ(rows[1].rfind("glimpses_2,true,downsample,2,3,1,", 0), 0u) << rows[1];
}

TEST(Visualize, WritesTwoFilesPerGlimpse) {
  const test_util::TempDir dir("vis");
  RunConfig cfg = tiny_run(dir.path());
  cfg.model.n_glimpses = 4;
  const fs::path ck = dir.path() / "m.rsam";
  checkpoint_save(init_rsam(cfg.model, 1), cfg, ck);
  VisualizeOptions opts{ck, {3}, dir.path() / "masks", std::nullopt};
  std::ostringstream out, err;
  ASSERT_EQ(cmd_visualize(opts, out, err), kExitOk) << err.str();
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir.path() / "masks" / "img_3")) {
    (void)entry;
    ++files;
  }
  EXPECT_EQ(files, 8u);
  const auto ppm = test_util::read_bytes(dir.path() / "masks" / "img_3" / "glimpse_4.ppm");
  EXPECT_EQ(ppm.size(), std::string("P6 8 8 255\n").size() + 3 * 64);

  opts.indices = {999};
  std::ostringstream err2;
  EXPECT_EQ(cmd_visualize(opts, out, err2), kExitFailure);
  EXPECT_NE(err2.str().find("out of range"), std::string::npos);
}

TEST(Visualize, IdentityMaskReproducesInput) {
  const test_util::TempDir dir("vis_id");
  RunConfig cfg = tiny_run(dir.path());
  LayerParams p = init_rsam(cfg.model, 2);
  Tensor w = p.get("mask.weight"), b = p.get("mask.bias");
  for (double& v : w.values()) v = 0.0;
  for (double& v : b.values()) v = 1.0;
  const fs::path ck = dir.path() / "m.rsam";
  checkpoint_save(p, cfg, ck);
  std::ostringstream out, err;
  ASSERT_EQ(cmd_visualize({ck, {0}, dir.path() / "v", std::nullopt}, out, err), kExitOk) << err.str();
  const Dataset test = load_datasets(cfg).test;
  std::vector<double> img(test.image(0).begin(), test.image(0).end());
  EXPECT_EQ(test_util::read_bytes(dir.path() / "v" / "img_0" / "glimpse_1.ppm"), encode_ppm(img, 8, 8));
  const auto mask = test_util::read_bytes(dir.path() / "v" / "img_0" / "mask_1.pgm");
  EXPECT_EQ(mask.back(), 255);
}

TEST(Gradcheck, RefusesSinglePrecision) {
  set_precision(Precision::f32);
  std::ostringstream out, err;
  const int code = cmd_gradcheck(7, out, err);
  set_precision(Precision::f64);
  EXPECT_EQ(code, kExitFailure);
  EXPECT_EQ(err.str().rfind("error: ", 0), 0u);
}
