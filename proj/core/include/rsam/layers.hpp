#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "rsam/grad_check.hpp"
#include "rsam/tensor.hpp"

namespace rsam {

// Tag used by the optimizer: weight decay applies to `weight` only and
// running statistics are never updated by gradient steps.
enum class ParamKind { weight, bias, bn_affine, running_stat };

constexpr bool is_trainable(ParamKind kind) { return kind != ParamKind::running_stat; }

struct ParamEntry {
  std::string name;
  ParamKind kind;
  Tensor tensor;
};

// Named parameter registry, iterated in insertion order.
class LayerParams {
 public:
  Tensor& add(std::string name, ParamKind kind, Tensor tensor);

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  const ParamEntry& entry(std::string_view name) const;

  std::span<const ParamEntry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<NamedTensor> trainable() const;
  std::vector<Tensor> trainable_tensors() const;

  // Deep copy; the result shares no storage with this registry.
  LayerParams clone() const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Element count of trainable tensors (running statistics excluded).
std::size_t count_parameters(const LayerParams& params);

struct LinearDesc {
  std::string name;
  std::size_t in = 0, out = 0;
};

struct ConvDesc {
  std::string name;
  std::size_t channels_in = 0, channels_out = 0, kernel = 0;
};

struct BatchNormDesc {
  std::string name;
  std::size_t features = 0;
};

struct LstmDesc {
  std::string name;
  std::size_t input = 0, hidden = 0;
};

using LayerDesc = std::variant<LinearDesc, ConvDesc, BatchNormDesc, LstmDesc>;

struct ArchitectureSpec {
  std::vector<LayerDesc> layers;
};

double glorot_limit(std::size_t fan_in, std::size_t fan_out);

// Glorot-uniform weights, zero biases, batch-norm gamma 1 / beta 0 / running
// mean 0 / running var 1, and the LSTM forget-gate bias slice set to 1.
// Bitwise deterministic for a fixed seed.
LayerParams init_params(const ArchitectureSpec& spec, std::uint64_t seed);

struct LinearParams {
  Tensor weight, bias;
};

struct ConvParams {
  Tensor kernel, bias;
};

// Gate columns are laid out as (input, forget, candidate, output), H each.
struct LstmCellParams {
  Tensor w_ih;  // [I, 4H]
  Tensor w_hh;  // [H, 4H]
  Tensor bias;  // [4H]

  std::size_t input_size() const { return w_ih.dim(0); }
  std::size_t hidden_size() const { return w_hh.dim(0); }
  void validate() const;
};

LinearParams linear_params(const LayerParams& params, std::string_view layer);
ConvParams conv_params(const LayerParams& params, std::string_view layer);
BatchNormParams batch_norm_params(const LayerParams& params, std::string_view layer);
LstmCellParams lstm_params(const LayerParams& params, std::string_view layer);

struct LstmState {
  Tensor h;
  Tensor c;
};

// i = sig(.), f = sig(.), g = tanh(.), o = sig(.) over x*W_ih + h*W_hh + b;
// c = f*c_prev + i*g, h = o*tanh(c).
LstmState lstm_cell_step(Tape& tape, const LstmCellParams& p, const Tensor& x, const Tensor& h_prev,
                         const Tensor& c_prev);

}  // namespace rsam
