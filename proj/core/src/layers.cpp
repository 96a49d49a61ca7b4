#include "rsam/layers.hpp"

#include <cmath>
#include <random>

namespace rsam {

Tensor& LayerParams::add(std::string name, ParamKind kind, Tensor tensor) {
  if (index_.contains(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(is_trainable(kind));
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry{std::move(name), kind, std::move(tensor)});
  return entries_.back().tensor;
}

bool LayerParams::contains(std::string_view name) const { return index_.contains(std::string(name)); }

const ParamEntry& LayerParams::entry(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ArgumentError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second];
}

const Tensor& LayerParams::get(std::string_view name) const { return entry(name).tensor; }

std::vector<NamedTensor> LayerParams::trainable() const {
  std::vector<NamedTensor> out;
  for (const auto& e : entries_) {
    if (is_trainable(e.kind)) out.push_back({e.name, e.tensor});
  }
  return out;
}

std::vector<Tensor> LayerParams::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) {
    if (is_trainable(e.kind)) out.push_back(e.tensor);
  }
  return out;
}

LayerParams LayerParams::clone() const {
  LayerParams copy;
  for (const auto& e : entries_) copy.add(e.name, e.kind, e.tensor.clone());
  return copy;
}

std::size_t count_parameters(const LayerParams& params) {
  std::size_t total = 0;
  for (const auto& e : params.entries()) {
    if (is_trainable(e.kind)) total += e.tensor.size();
  }
  return total;
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace {

// Open interval (0, 1) from the top 53 bits; independent of the standard
// library's distribution implementations.
double open_unit(std::mt19937_64& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

Tensor glorot(std::mt19937_64& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double s = glorot_limit(fan_in, fan_out);
  for (double& v : t.values()) v = round_to_precision(s * (2.0 * open_unit(rng) - 1.0));
  return t;
}

struct Initializer {
  std::mt19937_64& rng;
  LayerParams& out;

  void operator()(const LinearDesc& d) {
    out.add(d.name + ".weight", ParamKind::weight, glorot(rng, {d.in, d.out}, d.in, d.out));
    out.add(d.name + ".bias", ParamKind::bias, Tensor::zeros({d.out}));
  }

  void operator()(const ConvDesc& d) {
    const std::size_t area = d.kernel * d.kernel;
    out.add(d.name + ".weight", ParamKind::weight,
            glorot(rng, {d.channels_out, d.channels_in, d.kernel, d.kernel}, d.channels_in * area,
                   d.channels_out * area));
    out.add(d.name + ".bias", ParamKind::bias, Tensor::zeros({d.channels_out}));
  }

  void operator()(const BatchNormDesc& d) {
    out.add(d.name + ".gamma", ParamKind::bn_affine, Tensor::full({d.features}, 1.0));
    out.add(d.name + ".beta", ParamKind::bn_affine, Tensor::zeros({d.features}));
    out.add(d.name + ".running_mean", ParamKind::running_stat, Tensor::zeros({d.features}));
    out.add(d.name + ".running_var", ParamKind::running_stat, Tensor::full({d.features}, 1.0));
  }

  void operator()(const LstmDesc& d) {
    const std::size_t gates = 4 * d.hidden;
    out.add(d.name + ".w_ih", ParamKind::weight, glorot(rng, {d.input, gates}, d.input, gates));
    out.add(d.name + ".w_hh", ParamKind::weight, glorot(rng, {d.hidden, gates}, d.hidden, gates));
    Tensor bias = Tensor::zeros({gates});
    for (std::size_t j = d.hidden; j < 2 * d.hidden; ++j) bias.values()[j] = 1.0;
    out.add(d.name + ".bias", ParamKind::bias, std::move(bias));
  }
};

}  // namespace

LayerParams init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LayerParams params;
  Initializer init{rng, params};
  for (const auto& layer : spec.layers) std::visit(init, layer);
  return params;
}

LinearParams linear_params(const LayerParams& params, std::string_view layer) {
  const std::string prefix(layer);
  return {params.get(prefix + ".weight"), params.get(prefix + ".bias")};
}

ConvParams conv_params(const LayerParams& params, std::string_view layer) {
  const std::string prefix(layer);
  return {params.get(prefix + ".weight"), params.get(prefix + ".bias")};
}

BatchNormParams batch_norm_params(const LayerParams& params, std::string_view layer) {
  const std::string prefix(layer);
  return {params.get(prefix + ".gamma"), params.get(prefix + ".beta"), params.get(prefix + ".running_mean"),
          params.get(prefix + ".running_var")};
}

LstmCellParams lstm_params(const LayerParams& params, std::string_view layer) {
  const std::string prefix(layer);
  LstmCellParams p{params.get(prefix + ".w_ih"), params.get(prefix + ".w_hh"), params.get(prefix + ".bias")};
  p.validate();
  return p;
}

void LstmCellParams::validate() const {
  if (w_ih.rank() != 2 || w_hh.rank() != 2 || bias.rank() != 1) {
    throw DimensionError("lstm: parameter ranks must be [I,4H], [H,4H], [4H]");
  }
  const std::size_t hidden = w_hh.dim(0);
  if (w_hh.dim(1) != 4 * hidden || w_ih.dim(1) != 4 * hidden || bias.dim(0) != 4 * hidden) {
    throw DimensionError("lstm: inconsistent gate widths " + shape_str(w_ih.shape()) + ", " +
                         shape_str(w_hh.shape()) + ", " + shape_str(bias.shape()));
  }
}

LstmState lstm_cell_step(Tape& tape, const LstmCellParams& p, const Tensor& x, const Tensor& h_prev,
                         const Tensor& c_prev) {
  p.validate();
  const std::size_t hidden = p.hidden_size();
  if (h_prev.rank() != 2 || c_prev.rank() != 2 || h_prev.dim(1) != hidden || h_prev.shape() != c_prev.shape() ||
      x.rank() != 2 || x.dim(0) != h_prev.dim(0) || x.dim(1) != p.input_size()) {
    throw DimensionError("lstm: input " + shape_str(x.shape()) + " / state " + shape_str(h_prev.shape()) +
                         " inconsistent with weights " + shape_str(p.w_ih.shape()));
  }
  const Tensor no_bias = Tensor::zeros({4 * hidden});
  const Tensor z = add(tape, linear(tape, x, p.w_ih, p.bias), linear(tape, h_prev, p.w_hh, no_bias));
  const Tensor i = sigmoid(tape, slice_cols(tape, z, 0, hidden));
  const Tensor f = sigmoid(tape, slice_cols(tape, z, hidden, hidden));
  const Tensor g = tanh_op(tape, slice_cols(tape, z, 2 * hidden, hidden));
  const Tensor o = sigmoid(tape, slice_cols(tape, z, 3 * hidden, hidden));
  const Tensor c = add(tape, mul(tape, f, c_prev), mul(tape, i, g));
  const Tensor h = mul(tape, o, tanh_op(tape, c));
  return {h, c};
}

}  // namespace rsam
