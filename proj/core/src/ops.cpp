#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "rsam/tensor.hpp"

namespace rsam {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

MatMap as_matrix(std::span<double> v, std::size_t rows, std::size_t cols) {
  return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatMap as_matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         (t.defined() ? ", got " + shape_str(t.shape()) : ", got undefined tensor"));
  }
}

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t out_h, out_w;
  int stride, pad;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_plane() const { return out_h * out_w; }
};

// cols[(c*kh + i)*kw + j, oh*out_w + ow] = x[c, oh*stride - pad + i, ow*stride - pad + j]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(i);
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(j);
            const bool inside = ih >= 0 && ih < static_cast<long>(g.height) && iw >= 0 &&
                                iw < static_cast<long>(g.width);
            row[oh * g.out_w + ow] = inside ? x[(c * g.height + ih) * g.width + iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* dx) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(i);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(j);
            if (iw < 0 || iw >= static_cast<long>(g.width)) continue;
            dx[(c * g.height + ih) * g.width + iw] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

// Resolves the [B,1,...] over axis-1 broadcast. Returns {outer, repeat, inner}
// with b indexed as (outer, inner) and a as (outer, repeat, inner).
struct Broadcast {
  bool same = true;
  std::size_t outer = 1, repeat = 1, inner = 1;
};

Broadcast resolve_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw DimensionError(std::string(op) + ": undefined operand");
  Broadcast bc;
  if (a.shape() == b.shape()) return bc;
  if (a.rank() < 2 || a.rank() != b.rank() || b.dim(1) != 1 || a.dim(0) != b.dim(0)) mismatch(op, a, b);
  for (std::size_t d = 2; d < a.rank(); ++d) {
    if (a.dim(d) != b.dim(d)) mismatch(op, a, b);
  }
  bc.same = false;
  bc.outer = a.dim(0);
  bc.repeat = a.dim(1);
  bc.inner = a.size() / (bc.outer * bc.repeat);
  return bc;
}

}  // namespace

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  require_rank(b, 1, "linear", "bias");
  if (x.dim(1) != w.dim(0)) mismatch("linear", x, w);
  if (b.dim(0) != w.dim(1)) mismatch("linear", w, b);
  const std::size_t batch = x.dim(0), in = x.dim(1), out_f = w.dim(1);

  Tensor out = make_result({batch, out_f}, {&x, &w, &b});
  {
    auto y = as_matrix(out.values(), batch, out_f);
    y.noalias() = as_matrix(x.values(), batch, in) * as_matrix(w.values(), in, out_f);
    y.rowwise() += ConstVecMap(b.values().data(), static_cast<Eigen::Index>(out_f)).transpose();
  }
  tape.record({x, w, b}, out, [x = Tensor(x), w = Tensor(w), b = Tensor(b), out, batch, in, out_f]() mutable {
    auto dy = as_matrix(std::span<const double>(out.grad()), batch, out_f);
    if (x.requires_grad()) as_matrix(x.grad(), batch, in).noalias() += dy * as_matrix(std::span<const double>(w.values()), in, out_f).transpose();
    if (w.requires_grad()) as_matrix(w.grad(), in, out_f).noalias() += as_matrix(std::span<const double>(x.values()), batch, in).transpose() * dy;
    if (b.requires_grad()) VecMap(b.grad().data(), static_cast<Eigen::Index>(out_f)) += dy.colwise().sum().transpose();
  });
  return out;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad) {
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw ArgumentError("conv2d: pad must be >= 0, got " + std::to_string(pad));
  require_rank(x, 4, "conv2d", "input");
  require_rank(k, 4, "conv2d", "kernel");
  require_rank(b, 1, "conv2d", "bias");
  if (k.dim(1) != x.dim(1)) mismatch("conv2d", x, k);
  if (b.dim(0) != k.dim(0)) mismatch("conv2d", k, b);

  ConvGeometry g{};
  g.batch = x.dim(0);
  g.channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.filters = k.dim(0);
  g.kh = k.dim(2);
  g.kw = k.dim(3);
  g.stride = stride;
  g.pad = pad;
  const std::size_t span_h = g.height + 2 * static_cast<std::size_t>(pad);
  const std::size_t span_w = g.width + 2 * static_cast<std::size_t>(pad);
  if (g.kh > span_h || g.kw > span_w || (span_h - g.kh) % stride != 0 || (span_w - g.kw) % stride != 0) {
    throw DimensionError("conv2d: kernel " + shape_str(k.shape()) + " with stride " + std::to_string(stride) +
                         " and pad " + std::to_string(pad) + " does not tile input " + shape_str(x.shape()));
  }
  g.out_h = (span_h - g.kh) / stride + 1;
  g.out_w = (span_w - g.kw) / stride + 1;

  Tensor out = make_result({g.batch, g.filters, g.out_h, g.out_w}, {&x, &k, &b});
  const std::size_t in_plane = g.channels * g.height * g.width;
  const std::size_t out_block = g.filters * g.out_plane();
  {
    std::vector<double> cols(g.patch() * g.out_plane());
    const auto kernel = as_matrix(std::span<const double>(k.values()), g.filters, g.patch());
    const ConstVecMap bias(b.values().data(), static_cast<Eigen::Index>(g.filters));
    for (std::size_t n = 0; n < g.batch; ++n) {
      im2col(g, x.values().data() + n * in_plane, cols.data());
      auto y = as_matrix(out.values().subspan(n * out_block, out_block), g.filters, g.out_plane());
      y.noalias() = kernel * as_matrix(std::span<const double>(cols), g.patch(), g.out_plane());
      y.colwise() += bias;
    }
  }
  tape.record({x, k, b}, out, [x = Tensor(x), k = Tensor(k), b = Tensor(b), out, g, in_plane, out_block]() mutable {
    std::vector<double> cols(g.patch() * g.out_plane());
    std::vector<double> dcols(cols.size());
    const auto kernel = as_matrix(std::span<const double>(k.values()), g.filters, g.patch());
    for (std::size_t n = 0; n < g.batch; ++n) {
      const auto dy = as_matrix(std::span<const double>(out.grad()).subspan(n * out_block, out_block), g.filters,
                                g.out_plane());
      if (k.requires_grad()) {
        im2col(g, x.values().data() + n * in_plane, cols.data());
        as_matrix(k.grad(), g.filters, g.patch()).noalias() +=
            dy * as_matrix(std::span<const double>(cols), g.patch(), g.out_plane()).transpose();
      }
      if (b.requires_grad()) VecMap(b.grad().data(), static_cast<Eigen::Index>(g.filters)) += dy.rowwise().sum();
      if (x.requires_grad()) {
        as_matrix(std::span<double>(dcols), g.patch(), g.out_plane()).noalias() = kernel.transpose() * dy;
        col2im_add(g, dcols.data(), x.grad().data() + n * in_plane);
      }
    }
  });
  return out;
}

Tensor maxpool2d(Tape& tape, const Tensor& x, int window, int stride) {
  if (window < 1 || stride < 1) throw ArgumentError("maxpool2d: window and stride must be >= 1");
  require_rank(x, 4, "maxpool2d", "input");
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto win = static_cast<std::size_t>(window), st = static_cast<std::size_t>(stride);
  if (win > h || win > w || (h - win) % st != 0 || (w - win) % st != 0) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " stride " + std::to_string(stride) +
                         " does not divide input " + shape_str(x.shape()));
  }
  const std::size_t oh = (h - win) / st + 1, ow = (w - win) / st + 1;
  Tensor out = make_result({batch, channels, oh, ow}, {&x});
  std::vector<std::size_t> argmax(out.size());
  const auto xv = x.values();
  auto yv = out.values();
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        std::size_t best = base + (r * st) * w + c * st;
        for (std::size_t i = 0; i < win; ++i) {
          for (std::size_t j = 0; j < win; ++j) {
            const std::size_t idx = base + (r * st + i) * w + (c * st + j);
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + r) * ow + c;
        argmax[o] = best;
        yv[o] = xv[best];
      }
    }
  }
  tape.record({x}, out, [x = Tensor(x), out, argmax = std::move(argmax)]() mutable {
    if (!x.requires_grad()) return;
    auto dx = x.grad();
    const auto dy = out.grad();
    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
  });
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = make_result(x.shape(), {&x});
  const auto xv = x.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  tape.record({x}, out, [x = Tensor(x), out]() mutable {
    if (!x.requires_grad()) return;
    const auto xv = x.values();
    const auto dy = out.grad();
    auto dx = x.grad();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) dx[i] += dy[i];
    }
  });
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = make_result(x.shape(), {&x});
  const auto xv = x.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  tape.record({x}, out, [x = Tensor(x), out]() mutable {
    if (!x.requires_grad()) return;
    const auto yv = out.values();
    const auto dy = out.grad();
    auto dx = x.grad();
    for (std::size_t i = 0; i < yv.size(); ++i) dx[i] += dy[i] * yv[i] * (1.0 - yv[i]);
  });
  return out;
}

Tensor tanh_op(Tape& tape, const Tensor& x) {
  Tensor out = make_result(x.shape(), {&x});
  const auto xv = x.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = std::tanh(xv[i]);
  tape.record({x}, out, [x = Tensor(x), out]() mutable {
    if (!x.requires_grad()) return;
    const auto yv = out.values();
    const auto dy = out.grad();
    auto dx = x.grad();
    for (std::size_t i = 0; i < yv.size(); ++i) dx[i] += dy[i] * (1.0 - yv[i] * yv[i]);
  });
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  const Broadcast bc = resolve_broadcast("mul", a, b);
  Tensor out = make_result(a.shape(), {&a, &b});
  const auto av = a.values(), bv = b.values();
  auto yv = out.values();
  if (bc.same) {
    for (std::size_t i = 0; i < av.size(); ++i) yv[i] = av[i] * bv[i];
  } else {
    for (std::size_t n = 0; n < bc.outer; ++n)
      for (std::size_t r = 0; r < bc.repeat; ++r)
        for (std::size_t i = 0; i < bc.inner; ++i) {
          const std::size_t ia = (n * bc.repeat + r) * bc.inner + i;
          yv[ia] = av[ia] * bv[n * bc.inner + i];
        }
  }
  tape.record({a, b}, out, [a = Tensor(a), b = Tensor(b), out, bc]() mutable {
    const auto dy = out.grad();
    const auto av = a.values(), bv = b.values();
    if (bc.same) {
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
      }
      return;
    }
    for (std::size_t n = 0; n < bc.outer; ++n)
      for (std::size_t r = 0; r < bc.repeat; ++r)
        for (std::size_t i = 0; i < bc.inner; ++i) {
          const std::size_t ia = (n * bc.repeat + r) * bc.inner + i;
          const std::size_t ib = n * bc.inner + i;
          if (a.requires_grad()) a.grad()[ia] += dy[ia] * bv[ib];
          if (b.requires_grad()) b.grad()[ib] += dy[ia] * av[ia];
        }
  });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const Broadcast bc = resolve_broadcast("add", a, b);
  Tensor out = make_result(a.shape(), {&a, &b});
  const auto av = a.values(), bv = b.values();
  auto yv = out.values();
  if (bc.same) {
    for (std::size_t i = 0; i < av.size(); ++i) yv[i] = av[i] + bv[i];
  } else {
    for (std::size_t n = 0; n < bc.outer; ++n)
      for (std::size_t r = 0; r < bc.repeat; ++r)
        for (std::size_t i = 0; i < bc.inner; ++i) {
          const std::size_t ia = (n * bc.repeat + r) * bc.inner + i;
          yv[ia] = av[ia] + bv[n * bc.inner + i];
        }
  }
  tape.record({a, b}, out, [a = Tensor(a), b = Tensor(b), out, bc]() mutable {
    const auto dy = out.grad();
    if (a.requires_grad()) {
      auto da = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (!b.requires_grad()) return;
    auto db = b.grad();
    if (bc.same) {
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
      return;
    }
    for (std::size_t n = 0; n < bc.outer; ++n)
      for (std::size_t r = 0; r < bc.repeat; ++r)
        for (std::size_t i = 0; i < bc.inner; ++i) db[n * bc.inner + i] += dy[(n * bc.repeat + r) * bc.inner + i];
  });
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Tensor out = make_result(x.shape(), {&x});
  const auto xv = x.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] * factor;
  tape.record({x}, out, [x = Tensor(x), out, factor]() mutable {
    if (!x.requires_grad()) return;
    const auto dy = out.grad();
    auto dx = x.grad();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
  });
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  Tensor out = make_result({1}, {&x});
  double s = 0.0;
  for (double v : x.values()) s += v;
  out.values()[0] = s;
  tape.record({x}, out, [x = Tensor(x), out]() mutable {
    if (!x.requires_grad()) return;
    const double g = out.grad()[0];
    for (double& d : x.grad()) d += g;
  });
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = make_result(std::move(shape), {&x});
  std::copy(x.values().begin(), x.values().end(), out.values().begin());
  tape.record({x}, out, [x = Tensor(x), out]() mutable {
    if (!x.requires_grad()) return;
    const auto dy = out.grad();
    auto dx = x.grad();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
  return out;
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols", "left operand");
  require_rank(b, 2, "concat_cols", "right operand");
  if (a.dim(0) != b.dim(0)) mismatch("concat_cols", a, b);
  const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor out = make_result({rows, ca + cb}, {&a, &b});
  auto yv = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().begin() + r * ca, ca, yv.begin() + r * (ca + cb));
    std::copy_n(b.values().begin() + r * cb, cb, yv.begin() + r * (ca + cb) + ca);
  }
  tape.record({a, b}, out, [a = Tensor(a), b = Tensor(b), out, rows, ca, cb]() mutable {
    const auto dy = out.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      if (a.requires_grad())
        for (std::size_t j = 0; j < ca; ++j) a.grad()[r * ca + j] += dy[r * (ca + cb) + j];
      if (b.requires_grad())
        for (std::size_t j = 0; j < cb; ++j) b.grad()[r * cb + j] += dy[r * (ca + cb) + ca + j];
    }
  });
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols", "input");
  if (count == 0 || begin + count > x.dim(1)) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = make_result({rows, count}, {&x});
  auto yv = out.values();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.values().begin() + r * cols + begin, count, yv.begin() + r * count);
  tape.record({x}, out, [x = Tensor(x), out, rows, cols, begin, count]() mutable {
    if (!x.requires_grad()) return;
    const auto dy = out.grad();
    auto dx = x.grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < count; ++j) dx[r * cols + begin + j] += dy[r * count + j];
  });
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x) {
  require_rank(x, 2, "softmax", "input");
  const std::size_t rows = x.dim(0), k = x.dim(1);
  Tensor out = make_result(x.shape(), {&x});
  const auto xv = x.values();
  auto yv = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * k;
    double* y = yv.data() + r * k;
    const double peak = *std::max_element(in, in + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += (y[j] = std::exp(in[j] - peak));
    for (std::size_t j = 0; j < k; ++j) y[j] /= total;
  }
  tape.record({x}, out, [x = Tensor(x), out, rows, k]() mutable {
    if (!x.requires_grad()) return;
    const auto yv = out.values();
    const auto dy = out.grad();
    auto dx = x.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += dy[r * k + j] * yv[r * k + j];
      for (std::size_t j = 0; j < k; ++j) dx[r * k + j] += yv[r * k + j] * (dy[r * k + j] - dot);
    }
  });
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& probs, std::span<const int> targets) {
  require_rank(probs, 2, "cross_entropy", "probabilities");
  const std::size_t rows = probs.dim(0), k = probs.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for probabilities " +
                         shape_str(probs.shape()));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw ArgumentError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  Tensor out = make_result({1}, {&probs});
  const auto pv = probs.values();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) total -= std::log(std::max(pv[r * k + targets[r]], kProbabilityFloor));
  out.values()[0] = total / static_cast<double>(rows);
  std::vector<int> labels(targets.begin(), targets.end());
  tape.record({probs}, out, [probs = Tensor(probs), out, rows, k, labels = std::move(labels)]() mutable {
    if (!probs.requires_grad()) return;
    const double g = out.grad()[0] / static_cast<double>(rows);
    const auto pv = probs.values();
    auto dp = probs.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t idx = r * k + labels[r];
      if (pv[idx] > kProbabilityFloor) dp[idx] -= g / pv[idx];
    }
  });
  return out;
}

Tensor batch_norm(Tape& tape, const Tensor& x, const BatchNormParams& p, Mode mode, double eps, double momentum) {
  if (!x.defined() || (x.rank() != 2 && x.rank() != 4)) {
    throw DimensionError("batch_norm: input must be [B,F] or [B,C,H,W]" +
                         (x.defined() ? ", got " + shape_str(x.shape()) : std::string()));
  }
  const std::size_t batch = x.dim(0), features = x.dim(1);
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  for (const Tensor* t : {&p.gamma, &p.beta, &p.running_mean, &p.running_var}) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != features) mismatch("batch_norm", x, *t);
  }
  if (mode == Mode::train && batch < 2) {
    throw ArgumentError("batch_norm: train mode needs a batch of at least 2, got " + std::to_string(batch));
  }
  const double count = static_cast<double>(batch * spatial);
  const auto at = [features, spatial](std::size_t n, std::size_t f, std::size_t s) {
    return (n * features + f) * spatial + s;
  };

  std::vector<double> mean(features), inv_std(features);
  const auto xv = x.values();
  if (mode == Mode::train) {
    Tensor running_mean = p.running_mean, running_var = p.running_var;
    auto rm = running_mean.values();
    auto rv = running_var.values();
    for (std::size_t f = 0; f < features; ++f) {
      double m = 0.0;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t s = 0; s < spatial; ++s) m += xv[at(n, f, s)];
      m /= count;
      double v = 0.0;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t s = 0; s < spatial; ++s) {
          const double d = xv[at(n, f, s)] - m;
          v += d * d;
        }
      v /= count;
      mean[f] = m;
      inv_std[f] = 1.0 / std::sqrt(v + eps);
      rm[f] = round_to_precision((1.0 - momentum) * rm[f] + momentum * m);
      rv[f] = round_to_precision((1.0 - momentum) * rv[f] + momentum * v * count / (count - 1.0));
    }
  } else {
    for (std::size_t f = 0; f < features; ++f) {
      mean[f] = p.running_mean.values()[f];
      inv_std[f] = 1.0 / std::sqrt(p.running_var.values()[f] + eps);
    }
  }

  Tensor out = make_result(x.shape(), {&x, &p.gamma, &p.beta});
  std::vector<double> xhat(x.size());
  auto yv = out.values();
  const auto gv = p.gamma.values(), bv = p.beta.values();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t f = 0; f < features; ++f)
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = at(n, f, s);
        xhat[i] = (xv[i] - mean[f]) * inv_std[f];
        yv[i] = gv[f] * xhat[i] + bv[f];
      }

  Tensor gamma = p.gamma, beta = p.beta;
  tape.record({x, gamma, beta}, out,
              [x = Tensor(x), gamma, beta, out, mode, batch, features, spatial, count, at, inv_std = std::move(inv_std), xhat = std::move(xhat)]() mutable {
                const auto dy = out.grad();
                const auto gv = gamma.values();
                for (std::size_t f = 0; f < features; ++f) {
                  double sum_dy = 0.0, sum_dy_xhat = 0.0;
                  for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t s = 0; s < spatial; ++s) {
                      const std::size_t i = at(n, f, s);
                      sum_dy += dy[i];
                      sum_dy_xhat += dy[i] * xhat[i];
                    }
                  if (gamma.requires_grad()) gamma.grad()[f] += sum_dy_xhat;
                  if (beta.requires_grad()) beta.grad()[f] += sum_dy;
                  if (!x.requires_grad()) continue;
                  auto dx = x.grad();
                  const double k = gv[f] * inv_std[f];
                  for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t s = 0; s < spatial; ++s) {
                      const std::size_t i = at(n, f, s);
                      if (mode == Mode::train) {
                        dx[i] += k * (dy[i] - sum_dy / count - xhat[i] * sum_dy_xhat / count);
                      } else {
                        dx[i] += k * dy[i];
                      }
                    }
                }
              });
  return out;
}

}  // namespace rsam
