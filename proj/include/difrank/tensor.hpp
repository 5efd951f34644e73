#ifndef DIFRANK_TENSOR_HPP_
#define DIFRANK_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace difrank {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised for any incompatible shape handed to a tensor primitive.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Backing storage of a tensor. Shared between a tensor handle and the tape
/// records that read or write its gradient.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  std::int64_t tape_id = -1;  // -1: not produced by a recorded op

  /// Lazily allocates and returns the gradient buffer.
  std::span<double> grad_buffer();
};

/// Dense row-major tensor of 64-bit reals participating in reverse-mode
/// differentiation. Copies are shallow: they alias the same node.
class Tensor {
 public:
  Tensor();

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Mutable access for optimizers and initializers. Never call while a tape
  /// that read this tensor is still going to be replayed.
  std::span<double> mutable_values() { return node_->value; }
  /// Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double> grad_or_zeros() const;

  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  std::int64_t tape_id() const { return node_->tape_id; }

  void zero_grad();
  /// Copy of the values as a fresh constant, cut from any tape.
  Tensor detach() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> node);

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Define-by-run record of the operations applied to gradient-carrying
/// tensors. Records are appended in execution order, so inputs always
/// precede the node that consumes them.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<std::shared_ptr<TensorNode>> inputs,
              const std::shared_ptr<TensorNode>& output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every record in reverse. Leaf
  /// gradients accumulate across calls; intermediate gradients are reset
  /// first so repeated calls add exactly one more pass.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  void clear();

  /// Tape ops record onto, or nullptr when none is active on this thread.
  static Tape* active();

 private:
  struct Record {
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
};

/// Makes a tape the active one on this thread for the guard's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on this thread; ops run as plain forward passes.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Convenience wrapper: loss.backward on the active tape.
void backward(const Tensor& loss);

}  // namespace difrank

#endif  // DIFRANK_TENSOR_HPP_
