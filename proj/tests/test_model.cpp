#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rsam/layers.hpp"
#include "rsam/model.hpp"

using namespace rsam;

namespace {

RsamConfig small_config() {
  RsamConfig c;
  c.n_glimpses = 3;
  c.height = 8;
  c.width = 8;
  c.hidden_size = 6;
  c.glimpse_features = 10;
  return c;
}

Tensor random_images(std::mt19937_64& rng, const RsamConfig& c, std::size_t batch) {
  const Shape shape{batch, c.channels, c.height, c.width};
  return Tensor::from(shape, oracle::random_vec(rng, shape_size(shape)));
}

void jitter(LayerParams& params, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  for (const auto& e : params.entries()) {
    if (e.kind == ParamKind::running_stat) continue;
    Tensor t = e.tensor;
    for (double& v : t.values()) v += nd(rng);
  }
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Init, SameSeedIsBitwiseIdentical) {
  const LayerParams a = init_rsam(small_config(), 42), b = init_rsam(small_config(), 42);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.entries()[i].name, b.entries()[i].name);
    EXPECT_EQ(vals(a.entries()[i].tensor), vals(b.entries()[i].tensor));
  }
  const LayerParams c = init_rsam(small_config(), 43);
  EXPECT_NE(vals(a.get("mask.weight")), vals(c.get("mask.weight")));
}

TEST(Init, BiasesZeroExceptForgetSlice) {
  const RsamConfig cfg = small_config();
  const LayerParams p = init_rsam(cfg, 5);
  const std::size_t h = cfg.hidden_size;
  for (const auto& e : p.entries()) {
    if (e.kind != ParamKind::bias) continue;
    const bool lstm = e.name == "context.bias" || e.name == "glimpse_lstm.bias";
    for (std::size_t j = 0; j < e.tensor.size(); ++j) {
      const double want = lstm && j >= h && j < 2 * h ? 1.0 : 0.0;
      EXPECT_EQ(e.tensor.values()[j], want) << e.name << "[" << j << "]";
    }
  }
  for (const auto& e : p.entries()) {
    if (e.name.ends_with(".gamma") || e.name.ends_with(".running_var")) {
      for (double v : e.tensor.values()) EXPECT_EQ(v, 1.0) << e.name;
    }
    if (e.name.ends_with(".beta") || e.name.ends_with(".running_mean")) {
      for (double v : e.tensor.values()) EXPECT_EQ(v, 0.0) << e.name;
    }
  }
}

TEST(Init, GlorotBound) {
  EXPECT_DOUBLE_EQ(glorot_limit(3, 3), 1.0);
  const LayerParams p = init_params({{LinearDesc{"l", 3, 3}}}, 9);
  for (double v : p.get("l.weight").values()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
  const LayerParams conv = init_params({{ConvDesc{"c", 16, 32, 3}}}, 9);
  const double s = std::sqrt(6.0 / (16 * 9 + 32 * 9));
  for (double v : conv.get("c.weight").values()) EXPECT_LT(std::abs(v), s);
}

TEST(Registry, UniqueNamesInInsertionOrder) {
  LayerParams p;
  p.add("b", ParamKind::weight, Tensor::zeros({1}));
  p.add("a", ParamKind::bias, Tensor::zeros({1}));
  EXPECT_THROW(p.add("a", ParamKind::bias, Tensor::zeros({1})), ArgumentError);
  EXPECT_EQ(p.entries()[0].name, "b");
  EXPECT_EQ(p.entries()[1].name, "a");
  EXPECT_FALSE(p.contains("c"));
  EXPECT_THROW(p.get("c"), ArgumentError);
}

TEST(CountParameters, Examples) {
  EXPECT_EQ(count_parameters(init_params({{LinearDesc{"l", 3, 2}}}, 0)), 8u);
  EXPECT_EQ(count_parameters(init_params({{LstmDesc{"c", 3, 4}}}, 0)), 128u);
  EXPECT_EQ(count_parameters(init_params({{BatchNormDesc{"bn", 5}}}, 0)), 10u);
}

TEST(CountParameters, AttentionVariantsDifferByLayerArithmetic) {
  RsamConfig ds;
  RsamConfig fc = ds;
  fc.attention_mode = AttentionMode::fully_connected;
  // fc: linear 3072x256 + 256 bias + bn 2x256. downsample: conv 3->16 (3x3),
  // conv 16->32 (3x3), conv 32->4 (1x1), each with bias and a bn pair.
  const std::size_t fc_extra = 3072 * 256 + 256 + 2 * 256;
  const std::size_t ds_extra = (3 * 16 * 9 + 16 + 32) + (16 * 32 * 9 + 32 + 64) + (32 * 4 + 4 + 8);
  EXPECT_EQ(fc_extra, 787200u);
  EXPECT_EQ(ds_extra, 5324u);
  EXPECT_EQ(count_parameters(init_rsam(fc, 0)) - count_parameters(init_rsam(ds, 0)), fc_extra - ds_extra);
}

TEST(Config, ValidationRejectsBadShapes) {
  RsamConfig c;
  c.n_glimpses = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = RsamConfig{};
  c.height = 30;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = RsamConfig{};
  c.downsample_channels = 8;
  EXPECT_THROW(c.validate(), ArgumentError);
  c.attention_mode = AttentionMode::fully_connected;
  EXPECT_NO_THROW(c.validate());
}

TEST(AttentionFeatures, ShapesAndZeroPropagation) {
  const RsamConfig cfg;  // 3x32x32
  const LayerParams p = init_rsam(cfg, 1);
  Tape tape(false);
  std::mt19937_64 rng(2);
  const Tensor img = random_images(rng, cfg, 2);
  const Tensor d = downsample_forward(tape, img, p, cfg, Mode::eval);
  EXPECT_EQ(d.shape(), (Shape{2, 256}));
  for (double v : d.values()) EXPECT_GE(v, 0.0);
  {
    const Tensor r = downsample_forward(tape, Tensor::zeros(img.shape()), p, cfg, Mode::eval);
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
  }

  RsamConfig fc = cfg;
  fc.attention_mode = AttentionMode::fully_connected;
  const LayerParams pf = init_rsam(fc, 1);
  EXPECT_EQ(fc_attention_forward(tape, img, pf, fc, Mode::eval).shape(), (Shape{2, 256}));
  {
    const Tensor r = fc_attention_forward(tape, Tensor::zeros(img.shape()), pf, fc, Mode::eval);
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
  }

  const Tensor g = glimpse_forward(tape, img, p, cfg, Mode::eval);
  EXPECT_EQ(g.shape(), (Shape{2, 256}));
  {
    const Tensor r = glimpse_forward(tape, Tensor::zeros(img.shape()), p, cfg, Mode::eval);
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
  }

  EXPECT_THROW(downsample_forward(tape, Tensor::zeros({2, 3, 16, 16}), p, cfg, Mode::eval), DimensionError);
}

TEST(Mask, DecodeExamples) {
  RsamConfig cfg = small_config();
  LayerParams p = init_rsam(cfg, 3);
  Tape tape(false);
  Tensor w = p.get("mask.weight"), b = p.get("mask.bias");
  for (double& v : w.values()) v = 0.0;
  for (double& v : b.values()) v = 1.0;
  std::mt19937_64 rng(4);
  const Tensor h0 = Tensor::from({2, cfg.hidden_size}, oracle::random_vec(rng, 2 * cfg.hidden_size));
  const Tensor ones = decode_mask(tape, h0, p, cfg);
  EXPECT_EQ(ones.shape(), (Shape{2, 1, 8, 8}));
  const Tensor img = random_images(rng, cfg, 2);
  EXPECT_EQ(vals(apply_mask(tape, img, ones)), vals(img));

  for (double& v : b.values()) v = -1.0;
  {
    const Tensor r = decode_mask(tape, h0, p, cfg);
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Mask, ApplyExamples) {
  Tape tape(false);
  std::mt19937_64 rng(6);
  const Tensor img = Tensor::from({1, 3, 2, 2}, oracle::random_vec(rng, 12));
  {
    const Tensor r = apply_mask(tape, img, Tensor::zeros({1, 1, 2, 2}));
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
  }
  const Tensor half = apply_mask(tape, img, Tensor::from({1, 1, 2, 2}, {1, 0.5, 1, 1}));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(half.values()[c * 4 + 1], 0.5 * img.values()[c * 4 + 1]);
    EXPECT_EQ(half.values()[c * 4 + 0], img.values()[c * 4 + 0]);
  }
  EXPECT_THROW(apply_mask(tape, img, Tensor::zeros({1, 2, 2, 2})), DimensionError);
}

TEST(Forward, SingleGlimpseAveragesToItself) {
  RsamConfig cfg = small_config();
  cfg.n_glimpses = 1;
  const LayerParams p = init_rsam(cfg, 8);
  std::mt19937_64 rng(8);
  Tape tape(false);
  const RsamOutput out = rsam_forward(tape, random_images(rng, cfg, 3), {}, p, cfg, Mode::eval);
  EXPECT_EQ(vals(out.avg_probs), vals(out.traces[0].probs));
  EXPECT_FALSE(out.loss.defined());
}

TEST(Forward, ZeroClassifierGivesLogOfClassCount) {
  for (std::size_t n : {1u, 2u, 4u, 5u}) {
    RsamConfig cfg = small_config();
    cfg.n_glimpses = n;
    LayerParams p = init_rsam(cfg, n);
    for (const char* name : {"classifier.weight", "classifier.bias"}) {
      Tensor t = p.get(name);
      for (double& v : t.values()) v = 0.0;
    }
    std::mt19937_64 rng(n);
    const std::vector<int> labels{0, 9, 3};
    Tape tape;
    const RsamOutput out = rsam_forward(tape, random_images(rng, cfg, 3), labels, p, cfg, Mode::train);
    EXPECT_NEAR(out.loss.item(), std::log(10.0), 1e-9) << "N=" << n;
  }
}

TEST(Forward, LabelErrors) {
  const RsamConfig cfg = small_config();
  const LayerParams p = init_rsam(cfg, 0);
  std::mt19937_64 rng(0);
  const Tensor img = random_images(rng, cfg, 2);
  Tape tape;
  const std::vector<int> out_of_range{0, 10}, too_few{1};
  EXPECT_THROW(rsam_forward(tape, img, out_of_range, p, cfg, Mode::eval), ArgumentError);
  EXPECT_THROW(rsam_forward(tape, img, too_few, p, cfg, Mode::eval), DimensionError);
  const std::vector<int> one{1};
  EXPECT_THROW(rsam_forward(tape, random_images(rng, cfg, 1), one, p, cfg, Mode::train), ArgumentError);
}

TEST(Forward, FeedbackOnlyMattersFromSecondGlimpse) {
  RsamConfig on = small_config();
  RsamConfig off = on;
  off.feedback_enabled = false;
  LayerParams p = init_rsam(on, 10);
  std::mt19937_64 rng(10);
  jitter(p, rng, 0.2);
  const Tensor img = random_images(rng, on, 2);
  Tape tape(false);
  const RsamOutput a = rsam_forward(tape, img, {}, p, on, Mode::eval);
  const RsamOutput b = rsam_forward(tape, img, {}, p, off, Mode::eval);
  EXPECT_EQ(vals(a.traces[0].mask), vals(b.traces[0].mask));
  EXPECT_EQ(vals(a.traces[0].masked_image), vals(b.traces[0].masked_image));
  EXPECT_EQ(vals(a.traces[0].logits), vals(b.traces[0].logits));
  EXPECT_EQ(vals(a.traces[0].probs), vals(b.traces[0].probs));
  EXPECT_NE(vals(a.traces[1].mask), vals(b.traces[1].mask));
  EXPECT_NE(vals(a.traces[1].logits), vals(b.traces[1].logits));
  EXPECT_EQ(count_parameters(init_rsam(on, 0)), count_parameters(init_rsam(off, 0)));
}

TEST(Forward, MaskInvariantsOverRandomDraws) {
  const RsamConfig cfg = small_config();
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    LayerParams p = init_rsam(cfg, draw);
    std::mt19937_64 rng(draw + 1000);
    jitter(p, rng, 0.5);
    const Tensor img = random_images(rng, cfg, 2);
    Tape tape(false);
    const RsamOutput out = rsam_forward(tape, img, {}, p, cfg, Mode::eval);
    const std::size_t plane = cfg.height * cfg.width;
    for (const auto& tr : out.traces) {
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t px = 0; px < plane; ++px) {
          const double m = tr.mask.values()[b * plane + px];
          ASSERT_GE(m, 0.0);
          for (std::size_t c = 0; c < cfg.channels; ++c) {
            const std::size_t i = (b * cfg.channels + c) * plane + px;
            ASSERT_EQ(tr.masked_image.values()[i], img.values()[i] * m);
            if (m == 0.0) {
              ASSERT_EQ(tr.masked_image.values()[i], 0.0);
            }
          }
        }
      for (std::size_t r = 0; r < 2; ++r) {
        double row = 0.0;
        for (std::size_t k = 0; k < cfg.n_classes; ++k) row += tr.probs.values()[r * cfg.n_classes + k];
        ASSERT_NEAR(row, 1.0, 1e-6);
      }
    }
    for (std::size_t r = 0; r < 2; ++r) {
      double row = 0.0;
      for (std::size_t k = 0; k < cfg.n_classes; ++k) {
        double mean = 0.0;
        for (const auto& tr : out.traces) mean += tr.probs.values()[r * cfg.n_classes + k];
        mean /= static_cast<double>(cfg.n_glimpses);
        ASSERT_NEAR(out.avg_probs.values()[r * cfg.n_classes + k], mean, 1e-15);
        row += out.avg_probs.values()[r * cfg.n_classes + k];
      }
      ASSERT_NEAR(row, 1.0, 1e-6);
    }
  }
}

TEST(Forward, LossIsNonNegativeAndMaskReceivesGradient) {
  const RsamConfig cfg = small_config();
  LayerParams p = init_rsam(cfg, 12);
  std::mt19937_64 rng(12);
  jitter(p, rng, 0.1);
  Tape tape;
  const std::vector<int> labels{2, 7};
  const RsamOutput out = rsam_forward(tape, random_images(rng, cfg, 2), labels, p, cfg, Mode::train);
  EXPECT_GE(out.loss.item(), 0.0);
  backward(out.loss, tape);
  double mass = 0.0;
  for (double g : p.get("mask.weight").grad()) mass += std::abs(g);
  EXPECT_GT(mass, 0.0);
}

TEST(Forward, DeterministicAcrossRuns) {
  const RsamConfig cfg = small_config();
  const auto run = [&] {
    LayerParams p = init_rsam(cfg, 77);
    std::mt19937_64 rng(77);
    const Tensor img = random_images(rng, cfg, 4);
    const std::vector<int> labels{1, 2, 3, 4};
    std::vector<double> losses;
    for (int step = 0; step < 6; ++step) {
      Tape tape;
      const RsamOutput out = rsam_forward(tape, img, labels, p, cfg, Mode::train);
      backward(out.loss, tape);
      for (auto& e : p.trainable()) {
        for (std::size_t i = 0; i < e.tensor.size(); ++i) e.tensor.values()[i] -= 0.05 * e.tensor.grad()[i];
        e.tensor.zero_grad();
      }
      losses.push_back(out.loss.item());
    }
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(Predict, ArgmaxWithFirstTie) {
  EXPECT_EQ(predict(Tensor::from({1, 3}, {0.1, 0.7, 0.2})), std::vector<int>{1});
  EXPECT_EQ(predict(Tensor::from({1, 2}, {0.5, 0.5})), std::vector<int>{0});
  EXPECT_THROW(predict(Tensor::zeros({3})), DimensionError);
}

TEST(Predict, MonotoneLogitTransformKeepsSingleGlimpseArgmax) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor z = Tensor::from({4, 6}, oracle::random_vec(rng, 24));
    Tensor t = z.clone();
    for (double& v : t.values()) v = 3.0 * v * v * v + 2.0 * v - 1.0;
    Tape tape(false);
    EXPECT_EQ(predict(softmax(tape, z)), predict(softmax(tape, t)));
  }
}
