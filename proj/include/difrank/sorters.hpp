#ifndef DIFRANK_SORTERS_HPP_
#define DIFRANK_SORTERS_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "difrank/ops.hpp"
#include "difrank/tensor.hpp"

namespace difrank {

enum class SorterKind { handcrafted, cnn, lstm };

std::string_view to_string(SorterKind kind);
SorterKind parse_sorter_kind(std::string_view name);

using Mode = ops::NormMode;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Differentiable approximation of the rank function. Input is a score
/// vector [d] or a batch of them [B x d]; output has the same shape and holds
/// predicted ranks (normalized to [0, 1] for learned sorters).
class Sorter {
 public:
  virtual ~Sorter() = default;

  virtual SorterKind kind() const = 0;
  /// Length the sorter was built for; 0 when any length is accepted.
  virtual std::size_t input_dim() const = 0;
  virtual Tensor forward(const Tensor& scores, Mode mode) = 0;

  /// Learnable parameters in a stable order with stable names.
  virtual std::vector<NamedTensor> parameters() { return {}; }
  /// Non-learned arrays saved with a checkpoint (batch-norm statistics).
  virtual std::vector<std::pair<std::string, std::vector<double>*>> buffers() {
    return {};
  }
  /// Hyperparameters recorded in a checkpoint header.
  virtual std::map<std::string, std::string> hyperparameters() const = 0;
  /// Called after buffers were overwritten from a checkpoint.
  virtual void mark_statistics_loaded() {}

  std::vector<Tensor> parameter_tensors();
  std::size_t parameter_count();
};

/// Sum of sigmoid comparisons against every other element. Its lambda ->
/// infinity limit is the exact rank.
class HandcraftedSorter final : public Sorter {
 public:
  explicit HandcraftedSorter(double lambda = 10.0, bool normalize = true);

  SorterKind kind() const override { return SorterKind::handcrafted; }
  std::size_t input_dim() const override { return 0; }
  Tensor forward(const Tensor& scores, Mode mode) override;
  std::map<std::string, std::string> hyperparameters() const override;

  double lambda() const { return lambda_; }
  bool normalize() const { return normalize_; }

 private:
  double lambda_;
  bool normalize_;
};

std::vector<double> handcrafted_forward(std::span<const double> scores,
                                        double lambda, bool normalize);

struct CnnOptions {
  std::size_t depth = 8;
  std::size_t kernel_width = 3;
};

/// Channel count after each block: 8, 16, 32, 64, then d for the rest.
std::vector<std::size_t> cnn_channel_schedule(std::size_t d, std::size_t depth);

/// Stack of (conv1d, batchnorm, relu) blocks over the score vector viewed as
/// a one-channel signal, flattened into an affine map to d outputs.
class CnnSorter final : public Sorter {
 public:
  CnnSorter(std::size_t d, CnnOptions options, std::uint64_t seed);

  SorterKind kind() const override { return SorterKind::cnn; }
  std::size_t input_dim() const override { return d_; }
  Tensor forward(const Tensor& scores, Mode mode) override;
  std::vector<NamedTensor> parameters() override;
  std::vector<std::pair<std::string, std::vector<double>*>> buffers() override;
  std::map<std::string, std::string> hyperparameters() const override;
  void mark_statistics_loaded() override;

  const CnnOptions& options() const { return options_; }
  /// Final affine layer, exposed for tests that pin the output.
  Tensor& output_weight() { return out_weight_; }
  Tensor& output_bias() { return out_bias_; }

 private:
  struct Block {
    Tensor kernels;
    Tensor bias;
    Tensor gamma;
    Tensor beta;
    ops::BatchNormState stats;
  };

  std::size_t d_;
  CnnOptions options_;
  std::vector<Block> blocks_;
  Tensor out_weight_;
  Tensor out_bias_;
};

/// Gate order along the 4H axis: input, forget, candidate, output.
struct LstmCellParams {
  Tensor w_input;   // [4H x 1]
  Tensor w_hidden;  // [4H x H]
  Tensor bias;      // [4H]

  std::size_t hidden_size() const { return w_hidden.dim(1); }
};

struct LstmState {
  Tensor h;  // [B x H]
  Tensor c;  // [B x H]
};

/// One recurrence step for a batch of scalar inputs x_t: [B x 1].
LstmState lstm_cell_step(const LstmCellParams& params, const Tensor& x_t,
                         const LstmState& prev);

struct LstmOptions {
  std::size_t hidden_size = 128;
  /// Added to the forget-gate slice of both cells' bias at initialization.
  double forget_bias = 1.0;
};

/// Bidirectional LSTM over the score sequence with a per-step linear read-out
/// of the concatenated hidden states.
class LstmSorter final : public Sorter {
 public:
  LstmSorter(std::size_t d, LstmOptions options, std::uint64_t seed);

  SorterKind kind() const override { return SorterKind::lstm; }
  std::size_t input_dim() const override { return d_; }
  /// Accepts any sequence length; lengths other than input_dim() are out of
  /// the training distribution.
  Tensor forward(const Tensor& scores, Mode mode) override;
  std::vector<NamedTensor> parameters() override;
  std::map<std::string, std::string> hyperparameters() const override;

  const LstmOptions& options() const { return options_; }
  const LstmCellParams& forward_cell() const { return fwd_; }

 private:
  std::vector<Tensor> run_direction(const LstmCellParams& cell,
                                    const Tensor& sequence) const;

  std::size_t d_;
  LstmOptions options_;
  LstmCellParams fwd_;
  LstmCellParams bwd_;
  Tensor out_weight_;  // [1 x 2H]
  Tensor out_bias_;    // [1]
};

/// Dispatches to the sorter's forward pass in eval mode after checking that a
/// learned sorter is applied at its training length.
Tensor predict_rank(Sorter& sorter, const Tensor& scores);
std::vector<double> predict_rank(Sorter& sorter, std::span<const double> scores);

/// Snapshot of every parameter value, in parameters() order.
std::vector<std::vector<double>> snapshot_parameters(Sorter& sorter);

/// Freezes or unfreezes every parameter of a sorter.
void set_trainable(Sorter& sorter, bool trainable);

}  // namespace difrank

#endif  // DIFRANK_SORTERS_HPP_
