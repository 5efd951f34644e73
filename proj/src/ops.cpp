#include "difrank/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

namespace difrank::ops {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;
using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

Tape* recording(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

Tensor make(Shape shape, std::vector<double> values) {
  return Tensor::constant(std::move(shape), std::move(values));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape() || b.size() == 1) return;
  throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) +
                   " and " + shape_string(b.shape()) + " are incompatible");
}

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  check_broadcast(a, b, name);
  const auto av = a.values();
  const auto bv = b.values();
  const bool bcast = b.size() == 1 && a.shape() != b.shape();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double y = bcast ? bv[0] : bv[i];
    switch (kind) {
      case Binary::add: out[i] = av[i] + y; break;
      case Binary::sub: out[i] = av[i] - y; break;
      case Binary::mul: out[i] = av[i] * y; break;
    }
  }
  Tensor result = make(a.shape(), std::move(out));
  if (Tape* tape = recording({&a, &b})) {
    NodePtr an = a.node(), bn = b.node(), on = result.node();
    tape->record({an, bn}, on, [an, bn, on, kind, bcast] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = bcast ? bn->value[0] : bn->value[i];
          ga[i] += kind == Binary::mul ? g[i] * y : g[i];
        }
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          double contrib = g[i];
          if (kind == Binary::sub) contrib = -g[i];
          if (kind == Binary::mul) contrib = g[i] * an->value[i];
          gb[bcast ? 0 : i] += contrib;
        }
      }
    });
  }
  return result;
}

// Elementwise unary op given value and derivative as functions of (x, y).
template <class Forward, class Derivative>
Tensor unary(const Tensor& x, Forward fwd, Derivative deriv) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor result = make(x.shape(), std::move(out));
  if (Tape* tape = recording({&x})) {
    NodePtr xn = x.node(), on = result.node();
    tape->record({xn}, on, [xn, on, deriv] {
      auto gx = xn->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += on->grad[i] * deriv(xn->value[i], on->value[i]);
      }
    });
  }
  return result;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, Binary::add, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, Binary::sub, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, Binary::mul, "mul");
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return sigmoid_value(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor affine(const Tensor& x, const Tensor& weight) {
  return affine(x, weight, Tensor::zeros({0}));
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) {
    throw ShapeError("affine: weight must be 2-D, got " +
                     shape_string(weight.shape()));
  }
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError("affine: input must be 1-D or 2-D, got " +
                     shape_string(x.shape()));
  }
  const std::size_t m = weight.dim(0);
  const std::size_t n = weight.dim(1);
  const std::size_t in = x.shape().back();
  const std::size_t batch = x.rank() == 2 ? x.dim(0) : 1;
  if (in != n) {
    throw ShapeError("affine: input " + shape_string(x.shape()) +
                     " does not match weight " + shape_string(weight.shape()));
  }
  const bool has_bias = bias.size() != 0;
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != m)) {
    throw ShapeError("affine: bias " + shape_string(bias.shape()) +
                     " does not match weight " + shape_string(weight.shape()));
  }

  std::vector<double> out(batch * m);
  {
    ConstMatMap X(x.values().data(), batch, n);
    ConstMatMap W(weight.values().data(), m, n);
    MatMap Y(out.data(), batch, m);
    Y.noalias() = X * W.transpose();
    if (has_bias) {
      Eigen::Map<const Eigen::RowVectorXd> b(bias.values().data(), m);
      Y.rowwise() += b;
    }
  }
  Shape shape = x.rank() == 2 ? Shape{batch, m} : Shape{m};
  Tensor result = make(std::move(shape), std::move(out));
  if (Tape* tape = recording({&x, &weight, &bias})) {
    NodePtr xn = x.node(), wn = weight.node(), bn = bias.node(),
            on = result.node();
    tape->record({xn, wn, bn}, on, [xn, wn, bn, on, batch, m, n, has_bias] {
      ConstMatMap dY(on->grad.data(), batch, m);
      if (xn->requires_grad) {
        MatMap dX(xn->grad_buffer().data(), batch, n);
        ConstMatMap W(wn->value.data(), m, n);
        dX.noalias() += dY * W;
      }
      if (wn->requires_grad) {
        MatMap dW(wn->grad_buffer().data(), m, n);
        ConstMatMap X(xn->value.data(), batch, n);
        dW.noalias() += dY.transpose() * X;
      }
      if (has_bias && bn->requires_grad) {
        // Plain loops: Eigen's vectorized sums peel to the buffer's alignment,
        // which makes the rounding depend on where malloc put it.
        std::span<double> db = bn->grad_buffer();
        for (std::size_t r = 0; r < batch; ++r) {
          for (std::size_t j = 0; j < m; ++j) db[j] += dY(r, j);
        }
      }
    });
  }
  return result;
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::size_t padding) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw ShapeError("conv1d: input must be [c x L] or [B x c x L], got " +
                     shape_string(x.shape()));
  }
  if (kernels.rank() != 3) {
    throw ShapeError("conv1d: kernels must be [c_out x c_in x k], got " +
                     shape_string(kernels.shape()));
  }
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t c_in = x.dim(batched ? 1 : 0);
  const std::size_t length = x.dim(batched ? 2 : 1);
  const std::size_t c_out = kernels.dim(0);
  const std::size_t width = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw ShapeError("conv1d: kernels " + shape_string(kernels.shape()) +
                     " expect " + std::to_string(kernels.dim(1)) +
                     " input channels, input has " + std::to_string(c_in));
  }
  if (bias.rank() != 1 || bias.dim(0) != c_out) {
    throw ShapeError("conv1d: bias " + shape_string(bias.shape()) +
                     " does not match " + std::to_string(c_out) +
                     " output channels");
  }
  if (width == 0 || width > length + 2 * padding) {
    throw ShapeError("conv1d: kernel width " + std::to_string(width) +
                     " exceeds padded input length " +
                     std::to_string(length + 2 * padding));
  }
  const std::size_t out_len = length + 2 * padding - width + 1;
  const std::size_t patch = c_in * width;

  // cols[(ci * width + k), t] = x[ci, t + k - padding], zero outside.
  auto im2col = [=](const double* xs, double* cols) {
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      for (std::size_t k = 0; k < width; ++k) {
        double* row = cols + (ci * width + k) * out_len;
        for (std::size_t t = 0; t < out_len; ++t) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                     static_cast<std::ptrdiff_t>(padding);
          row[t] = (src >= 0 && src < static_cast<std::ptrdiff_t>(length))
                       ? xs[ci * length + static_cast<std::size_t>(src)]
                       : 0.0;
        }
      }
    }
  };

  std::vector<double> out(batch * c_out * out_len);
  std::vector<double> cols(patch * out_len);
  ConstMatMap K(kernels.values().data(), c_out, patch);
  Eigen::Map<const Eigen::VectorXd> b(bias.values().data(), c_out);
  for (std::size_t s = 0; s < batch; ++s) {
    im2col(x.values().data() + s * c_in * length, cols.data());
    ConstMatMap C(cols.data(), patch, out_len);
    MatMap Y(out.data() + s * c_out * out_len, c_out, out_len);
    Y.noalias() = K * C;
    Y.colwise() += b;
  }
  Shape shape = batched ? Shape{batch, c_out, out_len} : Shape{c_out, out_len};
  Tensor result = make(std::move(shape), std::move(out));
  if (Tape* tape = recording({&x, &kernels, &bias})) {
    NodePtr xn = x.node(), kn = kernels.node(), bn = bias.node(),
            on = result.node();
    tape->record({xn, kn, bn}, on, [=] {
      std::vector<double> cols(patch * out_len);
      std::vector<double> dcols(patch * out_len);
      ConstMatMap K(kn->value.data(), c_out, patch);
      for (std::size_t s = 0; s < batch; ++s) {
        ConstMatMap dY(on->grad.data() + s * c_out * out_len, c_out, out_len);
        if (kn->requires_grad) {
          im2col(xn->value.data() + s * c_in * length, cols.data());
          ConstMatMap C(cols.data(), patch, out_len);
          MatMap dK(kn->grad_buffer().data(), c_out, patch);
          dK.noalias() += dY * C.transpose();
        }
        if (bn->requires_grad) {
          std::span<double> db = bn->grad_buffer();
          for (std::size_t co = 0; co < c_out; ++co) {
            double acc = 0.0;
            for (std::size_t t = 0; t < out_len; ++t) acc += dY(co, t);
            db[co] += acc;
          }
        }
        if (xn->requires_grad) {
          MatMap dC(dcols.data(), patch, out_len);
          dC.noalias() = K.transpose() * dY;
          double* dx = xn->grad_buffer().data() + s * c_in * length;
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            for (std::size_t k = 0; k < width; ++k) {
              const double* row = dcols.data() + (ci * width + k) * out_len;
              for (std::size_t t = 0; t < out_len; ++t) {
                const std::ptrdiff_t src =
                    static_cast<std::ptrdiff_t>(t + k) -
                    static_cast<std::ptrdiff_t>(padding);
                if (src >= 0 && src < static_cast<std::ptrdiff_t>(length)) {
                  dx[ci * length + static_cast<std::size_t>(src)] += row[t];
                }
              }
            }
          }
        }
      }
    });
  }
  return result;
}

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, NormMode mode, double eps,
                   double momentum) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw ShapeError("batchnorm1d: input must be [c x L] or [B x c x L], got " +
                     shape_string(x.shape()));
  }
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t channels = x.dim(batched ? 1 : 0);
  const std::size_t length = x.dim(batched ? 2 : 1);
  if (state.channels() != channels || gamma.size() != channels ||
      beta.size() != channels) {
    throw ShapeError("batchnorm1d: parameters for " +
                     std::to_string(state.channels()) +
                     " channels, input has " + std::to_string(channels));
  }
  if (mode == NormMode::eval && !state.has_statistics) {
    throw std::logic_error(
        "batchnorm1d: eval mode before any train step or loaded statistics");
  }
  const std::size_t count = batch * length;
  const auto xv = x.values();
  auto at = [=](std::size_t s, std::size_t c, std::size_t t) {
    return (s * channels + c) * length + t;
  };

  std::vector<double> mu(channels), inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    if (mode == NormMode::train) {
      double m = 0.0;
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t t = 0; t < length; ++t) m += xv[at(s, c, t)];
      m /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t t = 0; t < length; ++t) {
          const double dv = xv[at(s, c, t)] - m;
          var += dv * dv;
        }
      var /= static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased =
          count > 1 ? var * static_cast<double>(count) /
                          static_cast<double>(count - 1)
                    : var;
      state.running_mean[c] =
          (1.0 - momentum) * state.running_mean[c] + momentum * m;
      state.running_var[c] =
          (1.0 - momentum) * state.running_var[c] + momentum * unbiased;
    } else {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }
  if (mode == NormMode::train) state.has_statistics = true;

  std::vector<double> xhat(xv.size()), out(xv.size());
  const auto g = gamma.values();
  const auto bt = beta.values();
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < length; ++t) {
        const std::size_t i = at(s, c, t);
        xhat[i] = (xv[i] - mu[c]) * inv_std[c];
        out[i] = g[c] * xhat[i] + bt[c];
      }

  Tensor result = make(x.shape(), std::move(out));
  if (Tape* tape = recording({&x, &gamma, &beta})) {
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(),
            on = result.node();
    tape->record({xn, gn, bn}, on,
                 [=, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const auto& dy = on->grad;
      const double n = static_cast<double>(count);
      for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t s = 0; s < batch; ++s)
          for (std::size_t t = 0; t < length; ++t) {
            const std::size_t i = at(s, c, t);
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * xhat[i];
          }
        if (gn->requires_grad) gn->grad_buffer()[c] += sum_dy_xhat;
        if (bn->requires_grad) bn->grad_buffer()[c] += sum_dy;
        if (!xn->requires_grad) continue;
        auto dx = xn->grad_buffer();
        const double gc = gn->value[c];
        for (std::size_t s = 0; s < batch; ++s)
          for (std::size_t t = 0; t < length; ++t) {
            const std::size_t i = at(s, c, t);
            if (mode == NormMode::train) {
              dx[i] += gc * inv_std[c] / n *
                       (n * dy[i] - sum_dy - xhat[i] * sum_dy_xhat);
            } else {
              dx[i] += gc * inv_std[c] * dy[i];
            }
          }
      }
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("sum of an empty tensor");
  const auto xv = x.values();
  Tensor result = make({}, {std::accumulate(xv.begin(), xv.end(), 0.0)});
  if (Tape* tape = recording({&x})) {
    NodePtr xn = x.node(), on = result.node();
    tape->record({xn}, on, [xn, on] {
      for (double& g : xn->grad_buffer()) g += on->grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor max(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("max of an empty tensor");
  const auto xv = x.values();
  // max_element returns the first maximal element.
  const std::size_t arg = static_cast<std::size_t>(
      std::max_element(xv.begin(), xv.end()) - xv.begin());
  Tensor result = make({}, {xv[arg]});
  if (Tape* tape = recording({&x})) {
    NodePtr xn = x.node(), on = result.node();
    tape->record({xn}, on,
                 [xn, on, arg] { xn->grad_buffer()[arg] += on->grad[0]; });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) +
                     " as " + shape_string(shape));
  }
  Tensor result = make(std::move(shape),
                       std::vector<double>(x.values().begin(), x.values().end()));
  if (Tape* tape = recording({&x})) {
    NodePtr xn = x.node(), on = result.node();
    tape->record({xn}, on, [xn, on] {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  const AxisSplit s = split_axis(x.shape(), axis);
  if (begin > end || end > s.extent) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + shape_string(x.shape()));
  }
  const std::size_t width = end - begin;
  std::vector<double> out(s.outer * width * s.inner);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.extent + begin) * s.inner, width * s.inner,
                out.data() + o * width * s.inner);
  }
  Shape shape = x.shape();
  shape[axis] = width;
  Tensor result = make(std::move(shape), std::move(out));
  if (Tape* tape = recording({&x})) {
    NodePtr xn = x.node(), on = result.node();
    tape->record({xn}, on, [xn, on, s, begin, width] {
      auto g = xn->grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = on->grad.data() + o * width * s.inner;
        double* dst = g.data() + (o * s.extent + begin) * s.inner;
        for (std::size_t i = 0; i < width * s.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const AxisSplit base = split_axis(first, axis);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) {
      throw ShapeError("concat: rank mismatch between " +
                       shape_string(first) + " and " + shape_string(probe));
    }
    probe[axis] = first[axis];
    if (probe != first) {
      throw ShapeError("concat: shapes " + shape_string(first) + " and " +
                       shape_string(p.shape()) + " differ off axis " +
                       std::to_string(axis));
    }
    total += p.shape()[axis];
  }
  std::vector<double> out(base.outer * total * base.inner);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape()[axis];
    offsets.push_back(offset);
    for (std::size_t o = 0; o < base.outer; ++o) {
      std::copy_n(p.values().data() + o * w * base.inner, w * base.inner,
                  out.data() + (o * total + offset) * base.inner);
    }
    offset += w;
  }
  Shape shape = first;
  shape[axis] = total;
  Tensor result = make(std::move(shape), std::move(out));

  Tape* tape = Tape::active();
  const bool any = std::any_of(parts.begin(), parts.end(),
                               [](const Tensor& p) { return p.requires_grad(); });
  if (tape != nullptr && any) {
    std::vector<NodePtr> inputs;
    for (const Tensor& p : parts) inputs.push_back(p.node());
    NodePtr on = result.node();
    tape->record(inputs, on, [inputs, on, offsets, base, total, axis] {
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const NodePtr& in = inputs[k];
        if (!in->requires_grad) continue;
        const std::size_t w = in->shape[axis];
        auto g = in->grad_buffer();
        for (std::size_t o = 0; o < base.outer; ++o) {
          const double* src =
              on->grad.data() + (o * total + offsets[k]) * base.inner;
          double* dst = g.data() + o * w * base.inner;
          for (std::size_t i = 0; i < w * base.inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return result;
}

Tensor reverse(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  auto flat = [s](std::size_t o, std::size_t e, std::size_t i) {
    return (o * s.extent + e) * s.inner + i;
  };
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[flat(o, s.extent - 1 - e, i)] = xv[flat(o, e, i)];
  Tensor result = make(x.shape(), std::move(out));
  if (Tape* tape = recording({&x})) {
    NodePtr xn = x.node(), on = result.node();
    tape->record({xn}, on, [xn, on, s, flat] {
      auto g = xn->grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i)
            g[flat(o, e, i)] += on->grad[flat(o, s.extent - 1 - e, i)];
    });
  }
  return result;
}

Tensor gather(const Tensor& x, std::span<const std::size_t> indices) {
  std::vector<double> out(indices.size());
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= x.size()) {
      throw ShapeError("gather index " + std::to_string(idx[k]) +
                       " out of bounds for " + shape_string(x.shape()));
    }
    out[k] = x.values()[idx[k]];
  }
  Tensor result = make({idx.size()}, std::move(out));
  if (Tape* tape = recording({&x})) {
    NodePtr xn = x.node(), on = result.node();
    tape->record({xn}, on, [xn, on, idx = std::move(idx)] {
      auto g = xn->grad_buffer();
      for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += on->grad[k];
    });
  }
  return result;
}

Tensor l2_normalize(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError("l2_normalize: input must be 1-D or 2-D, got " +
                     shape_string(x.shape()));
  }
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t cols = x.shape().back();
  const auto xv = x.values();
  std::vector<double> out(xv.size()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += xv[r * cols + c] * xv[r * cols + c];
    norms[r] = std::max(std::sqrt(sq), 1e-12);
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = xv[r * cols + c] / norms[r];
  }
  Tensor result = make(x.shape(), std::move(out));
  if (Tape* tape = recording({&x})) {
    NodePtr xn = x.node(), on = result.node();
    tape->record({xn}, on, [xn, on, rows, cols, norms = std::move(norms)] {
      auto g = xn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
          dot += on->value[r * cols + c] * on->grad[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          g[i] += (on->grad[i] - on->value[i] * dot) / norms[r];
        }
      }
    });
  }
  return result;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: logits " + shape_string(logits.shape()) +
                     " vs targets " + shape_string(targets.shape()));
  }
  if (logits.size() == 0) throw ShapeError("bce_with_logits: empty input");
  const auto z = logits.values();
  const auto y = targets.values();
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += std::max(z[i], 0.0) - z[i] * y[i] +
             std::log1p(std::exp(-std::abs(z[i])));
  }
  const double n = static_cast<double>(z.size());
  Tensor result = make({}, {total / n});
  if (Tape* tape = recording({&logits})) {
    NodePtr zn = logits.node(), yn = targets.node(), on = result.node();
    tape->record({zn}, on, [zn, yn, on, n] {
      auto g = zn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += on->grad[0] * (sigmoid_value(zn->value[i]) - yn->value[i]) / n;
      }
    });
  }
  return result;
}

Tensor soft_rank(const Tensor& y, double lambda, bool normalize) {
  if (y.rank() != 1 && y.rank() != 2) {
    throw ShapeError("soft_rank: input must be [n] or [B x n], got " +
                     shape_string(y.shape()));
  }
  const std::size_t rows = y.rank() == 2 ? y.dim(0) : 1;
  const std::size_t n = y.shape().back();
  const double norm = normalize && n > 1 ? 1.0 / static_cast<double>(n - 1) : 1.0;
  const auto yv = y.values();
  std::vector<double> out(yv.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = yv.data() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) acc += sigmoid_value(lambda * (row[j] - row[i]));
      }
      out[r * n + i] = acc * norm;
    }
  }
  Tensor result = make(y.shape(), std::move(out));
  if (Tape* tape = recording({&y})) {
    NodePtr yn = y.node(), on = result.node();
    tape->record({yn}, on, [yn, on, rows, n, lambda, norm] {
      auto g = yn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = yn->value.data() + r * n;
        const double* go = on->grad.data() + r * n;
        double* gy = g.data() + r * n;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double s = sigmoid_value(lambda * (row[j] - row[i]));
            const double w = go[i] * norm * lambda * s * (1.0 - s);
            gy[j] += w;
            gy[i] -= w;
          }
        }
      }
    });
  }
  return result;
}

}  // namespace difrank::ops

namespace difrank {

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  std::span<const double> x, const Shape& shape, double step,
                  std::span<const std::size_t> skip) {
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor input = Tensor::parameter(shape, {x.begin(), x.end()});
    Tensor out = f(input);
    tape.backward(out);
    analytic = input.grad_or_zeros();
  }
  auto eval = [&](std::vector<double> values) {
    NoGradScope no_grad;
    return f(Tensor::constant(shape, std::move(values))).item();
  };
  double worst = 0.0;
  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    if (std::find(skip.begin(), skip.end(), i) != skip.end()) continue;
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = eval(probe);
    probe[i] = saved - step;
    const double down = eval(probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace difrank
