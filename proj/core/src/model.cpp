#include "rsam/model.hpp"

namespace rsam {

namespace {

constexpr std::size_t kConv1Channels = 16;
constexpr std::size_t kConv2Channels = 32;

void check_image(const Tensor& image, const RsamConfig& config, const char* op) {
  if (!image.defined() || image.rank() != 4 || image.dim(1) != config.channels || image.dim(2) != config.height ||
      image.dim(3) != config.width) {
    throw DimensionError(std::string(op) + ": expected image [B," + std::to_string(config.channels) + "," +
                         std::to_string(config.height) + "," + std::to_string(config.width) + "], got " +
                         (image.defined() ? shape_str(image.shape()) : std::string("undefined")));
  }
}

Tensor conv_bn_relu(Tape& tape, const Tensor& x, const LayerParams& params, const std::string& conv,
                    const std::string& bn, int pad, const RsamConfig& config, Mode mode) {
  const ConvParams c = conv_params(params, conv);
  const Tensor y = conv2d(tape, x, c.kernel, c.bias, 1, pad);
  return relu(tape, batch_norm(tape, y, batch_norm_params(params, bn), mode, config.bn_eps, config.bn_momentum));
}

Tensor flatten(Tape& tape, const Tensor& x) { return reshape(tape, x, {x.dim(0), x.size() / x.dim(0)}); }

}  // namespace

std::string_view to_string(AttentionMode mode) {
  return mode == AttentionMode::downsample ? "downsample" : "fc";
}

void RsamConfig::validate() const {
  const auto fail = [](const std::string& what) { throw ArgumentError("invalid model config: " + what); };
  if (n_glimpses < 1) fail("glimpses must be >= 1");
  if (channels < 1) fail("channels must be >= 1");
  if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0) {
    fail("image height and width must be positive multiples of 4");
  }
  if (n_classes < 1) fail("classes must be >= 1");
  if (hidden_size < 1) fail("hidden size must be >= 1");
  if (glimpse_features < 1) fail("glimpse features must be >= 1");
  if (attention_mode == AttentionMode::downsample && downsample_channels != 4) {
    fail("the down-sample network reduces to exactly 4 feature maps");
  }
  if (downsample_channels < 1) fail("downsample channels must be >= 1");
  if (!(bn_eps > 0.0)) fail("bn_eps must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must be in (0, 1]");
}

ArchitectureSpec rsam_architecture(const RsamConfig& config) {
  config.validate();
  const std::size_t features = config.attention_features();
  const std::size_t pooled = (config.height / 4) * (config.width / 4);
  ArchitectureSpec spec;
  auto& l = spec.layers;
  if (config.attention_mode == AttentionMode::downsample) {
    l.emplace_back(ConvDesc{"downsample.conv1", config.channels, kConv1Channels, 3});
    l.emplace_back(BatchNormDesc{"downsample.bn1", kConv1Channels});
    l.emplace_back(ConvDesc{"downsample.conv2", kConv1Channels, kConv2Channels, 3});
    l.emplace_back(BatchNormDesc{"downsample.bn2", kConv2Channels});
    l.emplace_back(ConvDesc{"downsample.conv3", kConv2Channels, config.downsample_channels, 1});
    l.emplace_back(BatchNormDesc{"downsample.bn3", config.downsample_channels});
  } else {
    l.emplace_back(LinearDesc{"fc_attention.fc", config.channels * config.height * config.width, features});
    l.emplace_back(BatchNormDesc{"fc_attention.bn", features});
  }
  l.emplace_back(LstmDesc{"context", features + config.hidden_size, config.hidden_size});
  l.emplace_back(LinearDesc{"mask", config.hidden_size, config.height * config.width});
  l.emplace_back(ConvDesc{"glimpse.conv1", config.channels, kConv1Channels, 3});
  l.emplace_back(BatchNormDesc{"glimpse.bn1", kConv1Channels});
  l.emplace_back(ConvDesc{"glimpse.conv2", kConv1Channels, kConv2Channels, 3});
  l.emplace_back(BatchNormDesc{"glimpse.bn2", kConv2Channels});
  l.emplace_back(LinearDesc{"glimpse.fc", kConv2Channels * pooled, config.glimpse_features});
  l.emplace_back(BatchNormDesc{"glimpse.bn3", config.glimpse_features});
  l.emplace_back(LstmDesc{"glimpse_lstm", config.glimpse_features, config.hidden_size});
  l.emplace_back(LinearDesc{"classifier", config.hidden_size, config.n_classes});
  return spec;
}

LayerParams init_rsam(const RsamConfig& config, std::uint64_t seed) {
  return init_params(rsam_architecture(config), seed);
}

Tensor downsample_forward(Tape& tape, const Tensor& image, const LayerParams& params, const RsamConfig& config,
                          Mode mode) {
  check_image(image, config, "downsample_forward");
  Tensor x = conv_bn_relu(tape, image, params, "downsample.conv1", "downsample.bn1", 1, config, mode);
  x = maxpool2d(tape, x, 2, 2);
  x = conv_bn_relu(tape, x, params, "downsample.conv2", "downsample.bn2", 1, config, mode);
  x = maxpool2d(tape, x, 2, 2);
  x = conv_bn_relu(tape, x, params, "downsample.conv3", "downsample.bn3", 0, config, mode);
  return flatten(tape, x);
}

Tensor fc_attention_forward(Tape& tape, const Tensor& image, const LayerParams& params, const RsamConfig& config,
                            Mode mode) {
  check_image(image, config, "fc_attention_forward");
  const LinearParams fc = linear_params(params, "fc_attention.fc");
  const Tensor y = linear(tape, flatten(tape, image), fc.weight, fc.bias);
  return relu(tape, batch_norm(tape, y, batch_norm_params(params, "fc_attention.bn"), mode, config.bn_eps,
                               config.bn_momentum));
}

Tensor decode_mask(Tape& tape, const Tensor& h0, const LayerParams& params, const RsamConfig& config) {
  const LinearParams fc = linear_params(params, "mask");
  const Tensor m = relu(tape, linear(tape, h0, fc.weight, fc.bias));
  return reshape(tape, m, {h0.dim(0), 1, config.height, config.width});
}

Tensor apply_mask(Tape& tape, const Tensor& image, const Tensor& mask) {
  if (!image.defined() || !mask.defined() || image.rank() != 4 || mask.rank() != 4 || mask.dim(1) != 1 ||
      image.dim(0) != mask.dim(0) || image.dim(2) != mask.dim(2) || image.dim(3) != mask.dim(3)) {
    throw DimensionError("apply_mask: image " + (image.defined() ? shape_str(image.shape()) : "undefined") +
                         " and mask " + (mask.defined() ? shape_str(mask.shape()) : "undefined") +
                         " are incompatible");
  }
  return mul(tape, image, mask);
}

Tensor glimpse_forward(Tape& tape, const Tensor& masked_image, const LayerParams& params, const RsamConfig& config,
                       Mode mode) {
  check_image(masked_image, config, "glimpse_forward");
  Tensor x = conv_bn_relu(tape, masked_image, params, "glimpse.conv1", "glimpse.bn1", 1, config, mode);
  x = maxpool2d(tape, x, 2, 2);
  x = conv_bn_relu(tape, x, params, "glimpse.conv2", "glimpse.bn2", 1, config, mode);
  x = maxpool2d(tape, x, 2, 2);
  const LinearParams fc = linear_params(params, "glimpse.fc");
  const Tensor y = linear(tape, flatten(tape, x), fc.weight, fc.bias);
  return relu(tape, batch_norm(tape, y, batch_norm_params(params, "glimpse.bn3"), mode, config.bn_eps,
                               config.bn_momentum));
}

RsamOutput rsam_forward(Tape& tape, const Tensor& image, std::span<const int> labels, const LayerParams& params,
                        const RsamConfig& config, Mode mode) {
  config.validate();
  check_image(image, config, "rsam_forward");
  const std::size_t batch = image.dim(0);
  if (!labels.empty()) {
    if (labels.size() != batch) {
      throw DimensionError("rsam_forward: " + std::to_string(labels.size()) + " labels for batch of " +
                           std::to_string(batch));
    }
    for (int label : labels) {
      if (label < 0 || static_cast<std::size_t>(label) >= config.n_classes) {
        throw ArgumentError("rsam_forward: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(config.n_classes) + ")");
      }
    }
  }

  const Tensor features = config.attention_mode == AttentionMode::downsample
                              ? downsample_forward(tape, image, params, config, mode)
                              : fc_attention_forward(tape, image, params, config, mode);
  const LstmCellParams context = lstm_params(params, "context");
  const LstmCellParams glimpse = lstm_params(params, "glimpse_lstm");
  const LinearParams classifier = linear_params(params, "classifier");

  const Shape state_shape{batch, config.hidden_size};
  LstmState c0{Tensor::zeros(state_shape), Tensor::zeros(state_shape)};
  LstmState c1{Tensor::zeros(state_shape), Tensor::zeros(state_shape)};
  const Tensor no_feedback = Tensor::zeros(state_shape);

  RsamOutput out;
  Tensor loss_sum, prob_sum;
  for (std::size_t t = 0; t < config.n_glimpses; ++t) {
    const Tensor& feedback = config.feedback_enabled ? c1.h : no_feedback;
    c0 = lstm_cell_step(tape, context, concat_cols(tape, features, feedback), c0.h, c0.c);

    GlimpseTrace trace;
    trace.mask = decode_mask(tape, c0.h, params, config);
    trace.masked_image = apply_mask(tape, image, trace.mask);
    const Tensor g = glimpse_forward(tape, trace.masked_image, params, config, mode);
    c1 = lstm_cell_step(tape, glimpse, g, c1.h, c1.c);
    trace.logits = linear(tape, c1.h, classifier.weight, classifier.bias);
    trace.probs = softmax(tape, trace.logits);

    prob_sum = t == 0 ? trace.probs : add(tape, prob_sum, trace.probs);
    if (!labels.empty()) {
      const Tensor ce = cross_entropy(tape, trace.probs, labels);
      loss_sum = t == 0 ? ce : add(tape, loss_sum, ce);
    }
    out.traces.push_back(std::move(trace));
  }
  const double inv_n = 1.0 / static_cast<double>(config.n_glimpses);
  out.avg_probs = scale(tape, prob_sum, inv_n);
  if (!labels.empty()) out.loss = scale(tape, loss_sum, inv_n);
  return out;
}

std::vector<int> predict(const Tensor& avg_probs) {
  if (!avg_probs.defined() || avg_probs.rank() != 2) throw DimensionError("predict: expected [B,K] probabilities");
  const std::size_t rows = avg_probs.dim(0), k = avg_probs.dim(1);
  std::vector<int> classes(rows);
  const auto v = avg_probs.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (v[r * k + j] > v[r * k + best]) best = j;
    }
    classes[r] = static_cast<int>(best);
  }
  return classes;
}

}  // namespace rsam
