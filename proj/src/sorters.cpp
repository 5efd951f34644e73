#include "difrank/sorters.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "difrank/rng.hpp"

namespace difrank {

std::string_view to_string(SorterKind kind) {
  switch (kind) {
    case SorterKind::handcrafted: return "handcrafted";
    case SorterKind::cnn: return "cnn";
    case SorterKind::lstm: return "lstm";
  }
  return "unknown";
}

SorterKind parse_sorter_kind(std::string_view name) {
  for (SorterKind k :
       {SorterKind::handcrafted, SorterKind::cnn, SorterKind::lstm}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown sorter kind '" + std::string(name) + "'");
}

std::vector<Tensor> Sorter::parameter_tensors() {
  std::vector<Tensor> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

std::size_t Sorter::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.tensor.size();
  return n;
}

namespace {

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor init_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(shape), std::move(values));
}

// Normalized ranks of any vector average exactly 0.5, so the output layer
// starts at that mean instead of spending early steps walking there.
constexpr double kOutputBiasInit = 0.5;

Tensor filled(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, value));
}

// Views [d] as [1 x d]; returns whether the input was a single vector.
std::pair<Tensor, bool> as_batch(const Tensor& scores) {
  if (scores.rank() == 1) return {ops::reshape(scores, {1, scores.dim(0)}), true};
  if (scores.rank() == 2) return {scores, false};
  throw ShapeError("sorter input must be [d] or [B x d], got " +
                   shape_string(scores.shape()));
}

// Rows shifted to zero mean and scaled to unit RMS. Ranks are invariant to
// both, so the learned sorters only ever see one scale.
Tensor standardize(const Tensor& x) {
  const std::size_t d = x.dim(1);
  std::vector<double> centering(d * d, -1.0 / static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i) centering[i * d + i] += 1.0;
  const Tensor centered = ops::affine(x, Tensor::constant({d, d}, std::move(centering)));
  return ops::scale(ops::l2_normalize(centered), std::sqrt(static_cast<double>(d)));
}

Tensor restore_shape(const Tensor& out, bool single) {
  return single ? ops::reshape(out, {out.dim(1)}) : out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------- handcrafted

HandcraftedSorter::HandcraftedSorter(double lambda, bool normalize)
    : lambda_(lambda), normalize_(normalize) {
  if (!(lambda > 0.0)) {
    throw std::invalid_argument("handcrafted sorter needs lambda > 0");
  }
}

Tensor HandcraftedSorter::forward(const Tensor& scores, Mode) {
  return ops::soft_rank(scores, lambda_, normalize_);
}

std::map<std::string, std::string> HandcraftedSorter::hyperparameters() const {
  return {{"lambda", format_double(lambda_)},
          {"normalize", normalize_ ? "1" : "0"}};
}

std::vector<double> handcrafted_forward(std::span<const double> scores,
                                        double lambda, bool normalize) {
  NoGradScope no_grad;
  HandcraftedSorter sorter(lambda, normalize);
  Tensor out = sorter.forward(
      Tensor::constant({scores.size()}, {scores.begin(), scores.end()}),
      Mode::eval);
  return {out.values().begin(), out.values().end()};
}

// ------------------------------------------------------------------------ cnn

std::vector<std::size_t> cnn_channel_schedule(std::size_t d, std::size_t depth) {
  static constexpr std::size_t kWarmup[] = {8, 16, 32, 64};
  std::vector<std::size_t> channels;
  for (std::size_t b = 0; b < depth; ++b) {
    channels.push_back(b < std::size(kWarmup) ? kWarmup[b] : d);
  }
  return channels;
}

CnnSorter::CnnSorter(std::size_t d, CnnOptions options, std::uint64_t seed)
    : d_(d), options_(options) {
  if (d < 2) throw std::invalid_argument("cnn sorter needs d >= 2");
  if (options.depth < 1) throw std::invalid_argument("cnn sorter needs depth >= 1");
  if (options.kernel_width % 2 == 0) {
    throw std::invalid_argument("cnn sorter kernel width must be odd");
  }
  Rng rng(seed);
  std::size_t c_in = 1;
  const std::size_t k = options.kernel_width;
  for (std::size_t c_out : cnn_channel_schedule(d, options.depth)) {
    Block block{init_uniform(rng, {c_out, c_in, k}, c_in * k),
                init_uniform(rng, {c_out}, c_in * k), filled({c_out}, 1.0),
                filled({c_out}, 0.0), ops::BatchNormState(c_out)};
    blocks_.push_back(std::move(block));
    c_in = c_out;
  }
  out_weight_ = init_uniform(rng, {d, c_in * d}, c_in * d);
  out_bias_ = filled({d}, kOutputBiasInit);
}

Tensor CnnSorter::forward(const Tensor& scores, Mode mode) {
  auto [x, single] = as_batch(scores);
  if (x.dim(1) != d_) {
    throw ShapeError("cnn sorter built for d = " + std::to_string(d_) +
                     ", got input " + shape_string(scores.shape()));
  }
  const std::size_t batch = x.dim(0);
  x = ops::reshape(standardize(x), {batch, 1, d_});
  const std::size_t padding = (options_.kernel_width - 1) / 2;
  for (Block& b : blocks_) {
    x = ops::conv1d(x, b.kernels, b.bias, padding);
    x = ops::batchnorm1d(x, b.gamma, b.beta, b.stats, mode);
    x = ops::relu(x);
  }
  x = ops::reshape(x, {batch, x.dim(1) * d_});
  return restore_shape(ops::affine(x, out_weight_, out_bias_), single);
}

std::vector<NamedTensor> CnnSorter::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".";
    out.push_back({prefix + "conv.kernels", blocks_[i].kernels});
    out.push_back({prefix + "conv.bias", blocks_[i].bias});
    out.push_back({prefix + "bn.gamma", blocks_[i].gamma});
    out.push_back({prefix + "bn.beta", blocks_[i].beta});
  }
  out.push_back({"out.weight", out_weight_});
  out.push_back({"out.bias", out_bias_});
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> CnnSorter::buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".bn.";
    out.emplace_back(prefix + "running_mean", &blocks_[i].stats.running_mean);
    out.emplace_back(prefix + "running_var", &blocks_[i].stats.running_var);
  }
  return out;
}

std::map<std::string, std::string> CnnSorter::hyperparameters() const {
  return {{"depth", std::to_string(options_.depth)},
          {"kernel_width", std::to_string(options_.kernel_width)}};
}

void CnnSorter::mark_statistics_loaded() {
  for (Block& b : blocks_) b.stats.has_statistics = true;
}

// ----------------------------------------------------------------------- lstm

LstmState lstm_cell_step(const LstmCellParams& params, const Tensor& x_t,
                         const LstmState& prev) {
  const std::size_t hidden = params.hidden_size();
  const Tensor gates = ops::add(ops::affine(x_t, params.w_input, params.bias),
                                ops::affine(prev.h, params.w_hidden));
  const Tensor in = ops::sigmoid(ops::slice(gates, 1, 0, hidden));
  const Tensor forget = ops::sigmoid(ops::slice(gates, 1, hidden, 2 * hidden));
  const Tensor cand = ops::tanh(ops::slice(gates, 1, 2 * hidden, 3 * hidden));
  const Tensor out = ops::sigmoid(ops::slice(gates, 1, 3 * hidden, 4 * hidden));
  LstmState next;
  next.c = ops::add(ops::mul(forget, prev.c), ops::mul(in, cand));
  next.h = ops::mul(out, ops::tanh(next.c));
  return next;
}

namespace {

LstmCellParams make_cell(Rng& rng, std::size_t hidden, double forget_bias) {
  LstmCellParams cell;
  cell.w_input = init_uniform(rng, {4 * hidden, 1}, 1);
  cell.w_hidden = init_uniform(rng, {4 * hidden, hidden}, hidden);
  cell.bias = init_uniform(rng, {4 * hidden}, hidden);
  auto b = cell.bias.mutable_values();
  for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] += forget_bias;
  return cell;
}

}  // namespace

LstmSorter::LstmSorter(std::size_t d, LstmOptions options, std::uint64_t seed)
    : d_(d), options_(options) {
  if (d < 2) throw std::invalid_argument("lstm sorter needs d >= 2");
  if (options.hidden_size < 1) {
    throw std::invalid_argument("lstm sorter needs hidden_size >= 1");
  }
  Rng rng(seed);
  const std::size_t h = options.hidden_size;
  fwd_ = make_cell(rng, h, options.forget_bias);
  bwd_ = make_cell(rng, h, options.forget_bias);
  out_weight_ = init_uniform(rng, {1, 2 * h}, 2 * h);
  out_bias_ = filled({1}, kOutputBiasInit);
}

std::vector<Tensor> LstmSorter::run_direction(const LstmCellParams& cell,
                                              const Tensor& sequence) const {
  const std::size_t batch = sequence.dim(0);
  const std::size_t steps = sequence.dim(1);
  LstmState state{Tensor::zeros({batch, options_.hidden_size}),
                  Tensor::zeros({batch, options_.hidden_size})};
  std::vector<Tensor> hidden;
  hidden.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    state = lstm_cell_step(cell, ops::slice(sequence, 1, t, t + 1), state);
    hidden.push_back(state.h);
  }
  return hidden;
}

Tensor LstmSorter::forward(const Tensor& scores, Mode) {
  auto [raw, single] = as_batch(scores);
  const Tensor x = standardize(raw);
  const std::size_t steps = x.dim(1);
  const std::vector<Tensor> forward_h = run_direction(fwd_, x);
  const std::vector<Tensor> backward_h = run_direction(bwd_, ops::reverse(x, 1));
  std::vector<Tensor> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor both[] = {forward_h[t], backward_h[steps - 1 - t]};
    outputs.push_back(
        ops::affine(ops::concat(both, 1), out_weight_, out_bias_));
  }
  return restore_shape(ops::concat(outputs, 1), single);
}

std::vector<NamedTensor> LstmSorter::parameters() {
  return {{"fwd.w_input", fwd_.w_input}, {"fwd.w_hidden", fwd_.w_hidden},
          {"fwd.bias", fwd_.bias},       {"bwd.w_input", bwd_.w_input},
          {"bwd.w_hidden", bwd_.w_hidden}, {"bwd.bias", bwd_.bias},
          {"out.weight", out_weight_},   {"out.bias", out_bias_}};
}

std::map<std::string, std::string> LstmSorter::hyperparameters() const {
  char bias[32];
  std::snprintf(bias, sizeof bias, "%.17g", options_.forget_bias);
  return {{"hidden_size", std::to_string(options_.hidden_size)},
          {"forget_bias", bias}};
}

// ------------------------------------------------------------------- dispatch

Tensor predict_rank(Sorter& sorter, const Tensor& scores) {
  const std::size_t d = sorter.input_dim();
  if (d != 0 && (scores.rank() == 0 || scores.shape().back() != d)) {
    throw ShapeError(std::string(to_string(sorter.kind())) +
                     " sorter trained for d = " + std::to_string(d) +
                     ", got input " + shape_string(scores.shape()));
  }
  return sorter.forward(scores, Mode::eval);
}

std::vector<double> predict_rank(Sorter& sorter,
                                 std::span<const double> scores) {
  NoGradScope no_grad;
  Tensor out = predict_rank(
      sorter, Tensor::constant({scores.size()}, {scores.begin(), scores.end()}));
  return {out.values().begin(), out.values().end()};
}

std::vector<std::vector<double>> snapshot_parameters(Sorter& sorter) {
  std::vector<std::vector<double>> out;
  for (auto& p : sorter.parameters()) {
    out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  }
  return out;
}

void set_trainable(Sorter& sorter, bool trainable) {
  for (auto& p : sorter.parameters()) p.tensor.node()->requires_grad = trainable;
}

}  // namespace difrank
