#ifndef DIFRANK_RANK_LOSSES_HPP_
#define DIFRANK_RANK_LOSSES_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "difrank/matrix.hpp"
#include "difrank/sorters.hpp"
#include "difrank/tensor.hpp"

// Trainable losses that route raw scores through a sorter. Ground-truth
// ranks are always exact normalized ranks and enter as constants.

namespace difrank {

inline constexpr double kDefaultMargin = 0.2;

enum class AuxKind { l1, l2 };
enum class AuxSchedule { first_epoch_only, always };

struct LossConfig {
  /// Triplet margin, in normalized-rank units.
  double margin = kDefaultMargin;
  double aux_weight = 0.0;
  AuxKind aux_kind = AuxKind::l1;
  AuxSchedule aux_schedule = AuxSchedule::first_epoch_only;

  void validate() const;
};

/// Mean absolute error between predicted and target ranks.
Tensor sorter_l1_loss(const Tensor& predicted, const Tensor& target);

/// Mean over groups of the mean squared difference between the sorter's
/// ranks of `scores` ([d] or [N x d]) and the exact normalized ranks of the
/// matching rows of `targets`.
Tensor spearman_loss(const Tensor& scores, const Matrix& targets,
                     Sorter& sorter, Mode mode = Mode::eval);
Tensor spearman_loss(const Tensor& scores, std::span<const double> targets,
                     Sorter& sorter, Mode mode = Mode::eval);

/// Mean predicted rank of the positives, averaged per class and then over
/// classes: sum_c sum_{j in pos(c)} r_cj / (C * rel_c).
Tensor map_loss(const Tensor& class_scores, const LabelMatrix& labels,
                Sorter& sorter, Mode mode = Mode::eval);

/// max{0, margin + r_p - r_c} on the sorter ranks of one column.
Tensor triplet_rank_loss(const Tensor& column, std::size_t positive,
                         std::size_t negative, double margin, Sorter& sorter,
                         Mode mode = Mode::eval);

/// Hard-negative recall surrogate over a d x d group. Row i of `columns`
/// holds query i's scores; for each query the worst negative c outside
/// {positives[i], i} is taken, and the hinges are averaged over queries.
Tensor recall_loss(const Tensor& columns,
                   std::span<const std::size_t> positives, double margin,
                   Sorter& sorter, Mode mode = Mode::eval);

/// Plain regression loss on raw scores used for domain alignment.
Tensor aux_loss(const Tensor& scores, const Tensor& targets, AuxKind kind);

/// main + weight * aux; the aux term is dropped from the second epoch on
/// under AuxSchedule::first_epoch_only. `epoch` is 0-based.
Tensor aligned_loss(const Tensor& main, const Tensor& aux, double weight,
                    AuxSchedule schedule, std::size_t epoch);

}  // namespace difrank

#endif  // DIFRANK_RANK_LOSSES_HPP_
