#ifndef DIFRANK_TRAINER_HPP_
#define DIFRANK_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "difrank/rank_losses.hpp"
#include "difrank/sorters.hpp"
#include "difrank/synth_data.hpp"
#include "difrank/tensor.hpp"

namespace difrank {

/// Thrown when a loss or gradient turns non-finite.
class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameter tensors.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions options = {});

  /// Applies one update from the accumulated gradients. Parameters that
  /// never received a gradient are treated as having a zero gradient.
  void step();
  void zero_grad();

  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  double learning_rate() const { return options_.learning_rate; }
  std::size_t step_count() const { return t_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

/// base_lr * 0.5^floor(epoch / period); epoch is 0-based.
double lr_schedule(std::size_t epoch, double base_lr, std::size_t period);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t pairs_per_epoch = 100000;
  std::size_t batch_size = 512;
  double learning_rate = 1e-3;
  std::size_t halving_period = 100;
  std::uint64_t seed = 0;
  /// Stop after this many epochs without a new best held-out loss.
  std::size_t patience = 20;
  std::size_t heldout_size = 10000;
  bool freeze_sorter = true;
  double aux_weight = 0.0;
  AuxKind aux_kind = AuxKind::l1;
  AuxSchedule aux_schedule = AuxSchedule::first_epoch_only;

  void validate() const;
  std::map<std::string, std::string> echo() const;
};

/// Full-scale sorter pretraining: d = 100, 100 000 pairs per epoch.
TrainConfig full_scale_config();
/// Workstation-sized sorter pretraining: 10 000 pairs per epoch.
TrainConfig desk_scale_config();

struct TrainReport {
  static constexpr const char* kFormat = "difrank-train-report/1";

  std::string task;
  std::vector<double> train_loss;    // one entry per completed epoch
  std::vector<double> heldout_loss;  // one entry per completed epoch
  /// Exact metrics per epoch (e.g. "spearman", "map", "recall@1").
  std::map<std::string, std::vector<double>> metrics;
  double wall_clock_seconds = 0.0;
  std::string checkpoint_path;
  std::map<std::string, std::string> config;
  bool early_stopped = false;

  std::size_t epochs_completed() const { return train_loss.size(); }
  std::string to_json() const;
  void write(const std::filesystem::path& path) const;
};

struct SorterArchitecture {
  CnnOptions cnn;
  LstmOptions lstm;
};

/// Widths for desk-scale pretraining. With only ~200 optimizer steps the
/// LSTM needs 256 units per direction to get below the handcrafted sorter.
SorterArchitecture desk_scale_architecture();

std::unique_ptr<Sorter> make_learned_sorter(SorterKind kind, std::size_t d,
                                            const SorterArchitecture& arch,
                                            std::uint64_t seed);

struct SorterTrainingResult {
  std::unique_ptr<Sorter> sorter;
  TrainReport report;
};

using EpochCallback = std::function<void(const TrainReport&)>;

/// Fits a learned sorter to exact normalized ranks with the L1 loss on a
/// synthetic stream, evaluating on a held-out set after every epoch.
SorterTrainingResult train_sorter(SorterKind kind, const GenConfig& gen,
                                  const TrainConfig& train,
                                  const SorterArchitecture& arch = {},
                                  const EpochCallback& on_epoch = {});

/// Mean L1 between eval-mode sorter output and exact normalized ranks,
/// computed without a tape.
double evaluate_sorter_l1(Sorter& sorter, const ScoreBatch& data,
                          std::size_t chunk = 1000);

}  // namespace difrank

#endif  // DIFRANK_TRAINER_HPP_
