#ifndef DIFRANK_OPS_HPP_
#define DIFRANK_OPS_HPP_

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "difrank/tensor.hpp"

// Differentiable primitives. Every op records itself on the active tape when
// at least one input requires a gradient; otherwise it is a plain forward
// computation.

namespace difrank::ops {

// Elementwise. The second operand must have the same shape or be a
// one-element tensor, which is broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

/// x: [n] or [B x n], weight: [m x n], bias: [m] or empty tensor.
/// Returns x W^T + b with shape [m] or [B x m].
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor affine(const Tensor& x, const Tensor& weight);

/// x: [c_in x L] or [B x c_in x L], kernels: [c_out x c_in x k],
/// bias: [c_out]. Stride 1, zero padding on both ends.
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::size_t padding);

enum class NormMode { train, eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  /// False until a train step ran or statistics were loaded.
  bool has_statistics = false;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
  std::size_t channels() const { return running_mean.size(); }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization of x: [c x L] or [B x c x L]. Train mode uses
/// the statistics over batch and length axes and updates the running
/// estimates; eval mode uses the running estimates.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, NormMode mode,
                   double eps = kBatchNormEps,
                   double momentum = kBatchNormMomentum);

// Reductions to a scalar (shape {}).
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Gradient goes to the first maximal element.
Tensor max(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor reverse(const Tensor& x, std::size_t axis);
/// 1-D tensor of x.flat[indices[i]]; indices may repeat.
Tensor gather(const Tensor& x, std::span<const std::size_t> indices);

/// Rows of x ([n] or [B x n]) scaled to unit Euclidean norm.
Tensor l2_normalize(const Tensor& x);

/// Mean over elements of log(1 + e^z) - y z, the logistic loss on logits z
/// with binary targets y (a constant of the same shape).
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Pairwise sigmoid-comparator rank of each element along the last axis:
/// out_i = sum_{j != i} 1 / (1 + exp(-lambda (y_j - y_i))), divided by
/// (n - 1) when `normalize` is set. y: [n] or [B x n].
Tensor soft_rank(const Tensor& y, double lambda, bool normalize);

}  // namespace difrank::ops

namespace difrank {

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar function f at x. Coordinates listed in `skip` (for example a
/// relu kink sitting exactly on x) are left out.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  std::span<const double> x, const Shape& shape,
                  double step = 1e-5,
                  std::span<const std::size_t> skip = {});

}  // namespace difrank

#endif  // DIFRANK_OPS_HPP_
