#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "rsam/layers.hpp"
#include "rsam/tensor.hpp"

namespace rsam {

enum class AttentionMode { downsample, fully_connected };

std::string_view to_string(AttentionMode mode);

struct RsamConfig {
  std::size_t n_glimpses = 4;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t n_classes = 10;
  std::size_t hidden_size = 256;       // shared by the context and glimpse LSTMs
  std::size_t glimpse_features = 256;  // glimpse network output width
  bool feedback_enabled = true;
  AttentionMode attention_mode = AttentionMode::downsample;
  std::size_t downsample_channels = 4;
  double bn_eps = kBatchNormEps;
  double bn_momentum = kBatchNormMomentum;

  // Throws ArgumentError on an inconsistent configuration.
  void validate() const;

  // Length of the attention feature vector fed to the context LSTM: the
  // flattened 1x1-conv output after two 2x2 poolings. The fully-connected
  // attention variant emits the same length.
  std::size_t attention_features() const { return downsample_channels * (height / 4) * (width / 4); }

  bool operator==(const RsamConfig&) const = default;
};

ArchitectureSpec rsam_architecture(const RsamConfig& config);
LayerParams init_rsam(const RsamConfig& config, std::uint64_t seed);

// conv3x3(C->16) BN ReLU pool2, conv3x3(16->32) BN ReLU pool2, conv1x1(32->4) BN ReLU, flatten.
Tensor downsample_forward(Tape& tape, const Tensor& image, const LayerParams& params, const RsamConfig& config,
                          Mode mode);

// flatten, linear(C*H*W -> attention_features), BN, ReLU.
Tensor fc_attention_forward(Tape& tape, const Tensor& image, const LayerParams& params, const RsamConfig& config,
                            Mode mode);

// linear(hidden -> H*W), ReLU, reshape to [B,1,H,W]. No batch norm, so the
// mask keeps its exact zeros.
Tensor decode_mask(Tape& tape, const Tensor& h0, const LayerParams& params, const RsamConfig& config);

// image[B,C,H,W] * mask[B,1,H,W] broadcast over channels.
Tensor apply_mask(Tape& tape, const Tensor& image, const Tensor& mask);

// Two conv-BN-ReLU-pool blocks, flatten, linear(-> glimpse_features), BN, ReLU.
Tensor glimpse_forward(Tape& tape, const Tensor& masked_image, const LayerParams& params, const RsamConfig& config,
                       Mode mode);

struct GlimpseTrace {
  Tensor mask;          // [B,1,H,W]
  Tensor masked_image;  // [B,C,H,W]
  Tensor logits;        // [B,K]
  Tensor probs;         // [B,K]
};

struct RsamOutput {
  std::vector<GlimpseTrace> traces;
  Tensor avg_probs;  // mean of per-glimpse softmax
  Tensor loss;       // mean of per-glimpse cross-entropy; undefined without labels
};

// Runs N glimpses. Attention features of the original image are computed once
// and fed to the context LSTM (C0) at every step together with the previous
// glimpse-LSTM (C1) hidden state, or zeros when feedback is disabled.
RsamOutput rsam_forward(Tape& tape, const Tensor& image, std::span<const int> labels, const LayerParams& params,
                        const RsamConfig& config, Mode mode);

// Row-wise argmax, first index on ties.
std::vector<int> predict(const Tensor& avg_probs);

}  // namespace rsam
