#include "difrank/rank_losses.hpp"

#include <algorithm>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

#include "difrank/ops.hpp"
#include "difrank/rank_metrics.hpp"

namespace difrank {

void LossConfig::validate() const {
  if (!(margin >= 0.0)) throw std::invalid_argument("loss margin must be >= 0");
  if (!(aux_weight >= 0.0)) {
    throw std::invalid_argument("auxiliary loss weight must be >= 0");
  }
}

Tensor sorter_l1_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape()) {
    throw ShapeError("sorter L1 loss: prediction " +
                     shape_string(predicted.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  return ops::mean(ops::abs(ops::sub(predicted, target)));
}

namespace {

void append_target_ranks(std::span<const double> row, std::vector<double>& out) {
  if (std::adjacent_find(row.begin(), row.end(), std::not_equal_to<>()) ==
      row.end()) {
    std::clog << "warning: spearman loss target is constant; ranks follow "
                 "index order\n";
  }
  const RankVector rk = exact_rank(row);
  out.insert(out.end(), rk.normalized.begin(), rk.normalized.end());
}

}  // namespace

Tensor spearman_loss(const Tensor& scores, const Matrix& targets,
                     Sorter& sorter, Mode mode) {
  const bool single = scores.rank() == 1;
  const std::size_t groups = single ? 1 : scores.dim(0);
  const std::size_t d = scores.shape().back();
  if (scores.rank() > 2 || targets.rows() != groups || targets.cols() != d) {
    throw ShapeError("spearman loss: scores " + shape_string(scores.shape()) +
                     " vs targets [" + std::to_string(targets.rows()) + "x" +
                     std::to_string(targets.cols()) + "]");
  }
  std::vector<double> ranks;
  ranks.reserve(groups * d);
  for (std::size_t g = 0; g < groups; ++g) append_target_ranks(targets.row(g), ranks);
  const Tensor target = Tensor::constant(scores.shape(), std::move(ranks));
  const Tensor predicted = sorter.forward(scores, mode);
  return ops::mean(ops::square(ops::sub(predicted, target)));
}

Tensor spearman_loss(const Tensor& scores, std::span<const double> targets,
                     Sorter& sorter, Mode mode) {
  return spearman_loss(scores,
                       Matrix(1, targets.size(), {targets.begin(), targets.end()}),
                       sorter, mode);
}

Tensor map_loss(const Tensor& class_scores, const LabelMatrix& labels,
                Sorter& sorter, Mode mode) {
  if (class_scores.rank() != 2 || class_scores.dim(0) != labels.rows() ||
      class_scores.dim(1) != labels.cols()) {
    throw ShapeError("map loss: scores " + shape_string(class_scores.shape()) +
                     " vs labels [" + std::to_string(labels.rows()) + "x" +
                     std::to_string(labels.cols()) + "]");
  }
  const std::size_t classes = labels.rows();
  const std::size_t d = labels.cols();
  std::vector<double> weights(classes * d, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    const auto row = labels.row(c);
    const auto rel = static_cast<std::size_t>(
        std::count_if(row.begin(), row.end(), [](auto l) { return l != 0; }));
    if (rel == 0) {
      throw std::invalid_argument("map loss: class " + std::to_string(c) +
                                  " has no positive item");
    }
    for (std::size_t j = 0; j < d; ++j) {
      if (row[j] != 0) {
        weights[c * d + j] = 1.0 / static_cast<double>(classes * rel);
      }
    }
  }
  const Tensor ranks = sorter.forward(class_scores, mode);
  return ops::sum(
      ops::mul(ranks, Tensor::constant(ranks.shape(), std::move(weights))));
}

Tensor triplet_rank_loss(const Tensor& column, std::size_t positive,
                         std::size_t negative, double margin, Sorter& sorter,
                         Mode mode) {
  if (column.rank() != 1) {
    throw ShapeError("triplet loss expects one column, got " +
                     shape_string(column.shape()));
  }
  if (positive == negative) {
    throw std::invalid_argument("triplet loss: positive and negative coincide");
  }
  if (positive >= column.size() || negative >= column.size()) {
    throw std::invalid_argument("triplet loss: index out of range");
  }
  const Tensor ranks = sorter.forward(column, mode);
  const std::size_t p[] = {positive};
  const std::size_t c[] = {negative};
  const Tensor gap = ops::sub(ops::gather(ranks, p), ops::gather(ranks, c));
  return ops::reshape(ops::relu(ops::add_scalar(gap, margin)), {});
}

Tensor recall_loss(const Tensor& columns, std::span<const std::size_t> positives,
                   double margin, Sorter& sorter, Mode mode) {
  if (columns.rank() != 2 || columns.dim(0) != columns.dim(1)) {
    throw ShapeError("recall loss expects a square d x d group, got " +
                     shape_string(columns.shape()));
  }
  const std::size_t d = columns.dim(0);
  if (d < 3) throw std::invalid_argument("recall loss needs d >= 3");
  if (positives.size() != d) {
    throw std::invalid_argument("recall loss needs one positive per query");
  }
  std::vector<std::size_t> pos_index, neg_index, offsets;
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t p = positives[i];
    if (p >= d) throw std::invalid_argument("recall loss: positive out of range");
    offsets.push_back(neg_index.size());
    for (std::size_t c = 0; c < d; ++c) {
      if (c == p || c == i) continue;
      pos_index.push_back(i * d + p);
      neg_index.push_back(i * d + c);
    }
  }
  offsets.push_back(neg_index.size());

  const Tensor ranks = sorter.forward(columns, mode);
  const Tensor hinges = ops::relu(ops::add_scalar(
      ops::sub(ops::gather(ranks, pos_index), ops::gather(ranks, neg_index)),
      margin));
  std::vector<Tensor> hardest;
  hardest.reserve(d);
  for (std::size_t i = 0; i < d; ++i) {
    hardest.push_back(ops::reshape(
        ops::max(ops::slice(hinges, 0, offsets[i], offsets[i + 1])), {1}));
  }
  return ops::mean(ops::concat(hardest, 0));
}

Tensor aux_loss(const Tensor& scores, const Tensor& targets, AuxKind kind) {
  if (scores.shape() != targets.shape()) {
    throw ShapeError("aux loss: scores " + shape_string(scores.shape()) +
                     " vs targets " + shape_string(targets.shape()));
  }
  const Tensor diff = ops::sub(scores, targets);
  return ops::mean(kind == AuxKind::l1 ? ops::abs(diff) : ops::square(diff));
}

Tensor aligned_loss(const Tensor& main, const Tensor& aux, double weight,
                    AuxSchedule schedule, std::size_t epoch) {
  if (!(weight >= 0.0)) {
    throw std::invalid_argument("aligned loss weight must be >= 0");
  }
  if (weight == 0.0 || (schedule == AuxSchedule::first_epoch_only && epoch > 0)) {
    return main;
  }
  return ops::add(main, ops::scale(aux, weight));
}

}  // namespace difrank
