#include "difrank/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "difrank/ops.hpp"
#include "json.hpp"

namespace difrank {

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.learning_rate > 0.0)) {
    throw std::invalid_argument("Adam: learning rate must be positive");
  }
  if (options_.beta1 < 0.0 || options_.beta1 >= 1.0 || options_.beta2 < 0.0 ||
      options_.beta2 >= 1.0) {
    throw std::invalid_argument("Adam: betas must lie in [0, 1)");
  }
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto g = params_[k].grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw TrainingDivergedError(
            "Adam: non-finite gradient in parameter " + std::to_string(k) +
            " element " + std::to_string(i) + " at step " +
            std::to_string(t_ + 1));
      }
    }
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto g = params_[k].grad();
    if (g.empty()) continue;  // zero gradient leaves m = v = 0 and no update
    auto w = params_[k].mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double lr_schedule(std::size_t epoch, double base_lr, std::size_t period) {
  if (period == 0) return base_lr;
  return base_lr * std::ldexp(1.0, -static_cast<int>(epoch / period));
}

void TrainConfig::validate() const {
  if (epochs == 0 || pairs_per_epoch == 0 || batch_size == 0 ||
      halving_period == 0 || patience == 0 || heldout_size == 0) {
    throw std::invalid_argument("TrainConfig: all counts must be positive");
  }
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rate must be positive");
  }
  if (!(aux_weight >= 0.0)) {
    throw std::invalid_argument("TrainConfig: aux weight must be >= 0");
  }
}

namespace {

std::string real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> TrainConfig::echo() const {
  return {{"epochs", std::to_string(epochs)},
          {"pairs_per_epoch", std::to_string(pairs_per_epoch)},
          {"batch_size", std::to_string(batch_size)},
          {"learning_rate", real(learning_rate)},
          {"halving_period", std::to_string(halving_period)},
          {"seed", std::to_string(seed)},
          {"patience", std::to_string(patience)},
          {"heldout_size", std::to_string(heldout_size)},
          {"freeze_sorter", freeze_sorter ? "1" : "0"},
          {"aux_weight", real(aux_weight)},
          {"aux_kind", aux_kind == AuxKind::l1 ? "l1" : "l2"},
          {"aux_schedule", aux_schedule == AuxSchedule::always
                               ? "always"
                               : "first_epoch_only"}};
}

TrainConfig full_scale_config() {
  TrainConfig cfg;
  cfg.epochs = 1000;
  cfg.pairs_per_epoch = 100000;
  cfg.batch_size = 512;
  cfg.learning_rate = 1e-3;
  cfg.halving_period = 100;
  cfg.patience = 20;
  cfg.heldout_size = 10000;
  return cfg;
}

TrainConfig desk_scale_config() {
  TrainConfig cfg = full_scale_config();
  cfg.epochs = 10;
  cfg.pairs_per_epoch = 10000;
  return cfg;
}

SorterArchitecture desk_scale_architecture() {
  SorterArchitecture arch;
  arch.lstm.hidden_size = 256;
  return arch;
}

std::string TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = kFormat;
  j["task"] = task;
  j["epochs_completed"] = epochs_completed();
  j["early_stopped"] = early_stopped;
  j["train_loss"] = train_loss;
  j["heldout_loss"] = heldout_loss;
  j["metrics"] = metrics;
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["checkpoint_path"] = checkpoint_path;
  j["config"] = config;
  return j.dump(2);
}

void TrainReport::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json() << '\n';
}

std::unique_ptr<Sorter> make_learned_sorter(SorterKind kind, std::size_t d,
                                            const SorterArchitecture& arch,
                                            std::uint64_t seed) {
  switch (kind) {
    case SorterKind::cnn: return std::make_unique<CnnSorter>(d, arch.cnn, seed);
    case SorterKind::lstm: return std::make_unique<LstmSorter>(d, arch.lstm, seed);
    case SorterKind::handcrafted: break;
  }
  throw std::invalid_argument("the handcrafted sorter has nothing to train");
}

double evaluate_sorter_l1(Sorter& sorter, const ScoreBatch& data,
                          std::size_t chunk) {
  NoGradScope no_grad;
  const std::size_t n = data.scores.rows();
  const std::size_t d = data.scores.cols();
  if (n == 0) throw std::invalid_argument("evaluate_sorter_l1: empty data");
  double total = 0.0;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t rows = std::min(chunk, n - begin);
    const auto first = data.scores.data().begin() +
                       static_cast<std::ptrdiff_t>(begin * d);
    Tensor x = Tensor::constant(
        {rows, d}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(rows * d)));
    Tensor out = predict_rank(sorter, x);
    const auto pv = out.values();
    for (std::size_t i = 0; i < rows * d; ++i) {
      total += std::abs(pv[i] - data.normalized.data()[begin * d + i]);
    }
  }
  return total / static_cast<double>(n * d);
}

SorterTrainingResult train_sorter(SorterKind kind, const GenConfig& gen,
                                  const TrainConfig& train,
                                  const SorterArchitecture& arch,
                                  const EpochCallback& on_epoch) {
  gen.validate();
  train.validate();
  const auto started = std::chrono::steady_clock::now();

  GenConfig stream_cfg = gen;
  stream_cfg.seed = train.seed;
  SorterTrainingResult result;
  result.sorter = make_learned_sorter(kind, gen.d, arch,
                                      Rng(train.seed).split(1).next());
  Sorter& sorter = *result.sorter;
  BatchStream stream(stream_cfg, train.batch_size);
  const ScoreBatch heldout = make_heldout(stream_cfg, train.heldout_size);
  Adam adam(sorter.parameter_tensors(), {train.learning_rate});

  TrainReport& report = result.report;
  report.task = "train-sorter-" + std::string(to_string(kind));
  report.config = train.echo();
  report.config["kind"] = to_string(kind);
  report.config["d"] = std::to_string(gen.d);
  report.config["distribution"] = to_string(gen.distribution);
  for (const auto& [k, v] : sorter.hyperparameters()) report.config["hp." + k] = v;

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    adam.set_learning_rate(
        lr_schedule(epoch, train.learning_rate, train.halving_period));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    while (seen < train.pairs_per_epoch) {
      const std::size_t rows =
          std::min(train.batch_size, train.pairs_per_epoch - seen);
      ScoreBatch batch = stream.next(rows);
      const std::size_t d = gen.d;
      Tape tape;
      TapeScope scope(tape);
      adam.zero_grad();
      Tensor x = Tensor::constant({rows, d}, std::move(batch.scores.data()));
      Tensor target = Tensor::constant({rows, d}, std::move(batch.normalized.data()));
      Tensor loss = sorter_l1_loss(sorter.forward(x, Mode::train), target);
      if (!std::isfinite(loss.item())) {
        throw TrainingDivergedError("sorter training loss became non-finite in epoch " +
                                    std::to_string(epoch + 1));
      }
      tape.backward(loss);
      adam.step();
      loss_sum += loss.item() * static_cast<double>(rows);
      seen += rows;
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(seen));
    const double held = evaluate_sorter_l1(sorter, heldout);
    report.heldout_loss.push_back(held);
    if (on_epoch) on_epoch(report);
    if (held < best) {
      best = held;
      best_epoch = epoch;
    } else if (epoch - best_epoch >= train.patience) {
      report.early_stopped = true;
      break;
    }
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return result;
}

}  // namespace difrank
