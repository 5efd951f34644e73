#ifndef DIFRANK_RANK_METRICS_HPP_
#define DIFRANK_RANK_METRICS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "difrank/matrix.hpp"

// Exact, non-differentiable ranking and the metrics built on it.
//
// Rank convention everywhere: 0-based and descending, so rank 0 is the
// largest score. Equal scores are ordered by position (earlier index gets the
// smaller rank). Normalized rank = rank / (d - 1), in [0, 1].

namespace difrank {

struct RankVector {
  std::vector<std::size_t> ranks;
  std::vector<double> normalized;
};

/// Throws std::invalid_argument unless scores has d >= 2 finite entries.
void validate_scores(std::span<const double> scores);

RankVector exact_rank(std::span<const double> scores);
std::vector<double> normalized_rank(std::span<const double> scores);

double spearman(std::span<const double> a, std::span<const double> b);

/// labels: 1 marks a relevant item. Requires at least one.
double average_precision(std::span<const double> scores,
                         std::span<const std::uint8_t> labels);

/// Same contract as average_precision, by explicit pairwise counting.
double brute_force_ap(std::span<const double> scores,
                      std::span<const std::uint8_t> labels);

/// Mean of per-row AP. scores and labels are C x d.
double mean_average_precision(const Matrix& scores, const LabelMatrix& labels);

/// d x d retrieval group. Row i of `columns` holds the relevance of every
/// group item with respect to query i; positives[i] indexes its single
/// relevant item.
struct GroupBatch {
  Matrix columns;
  std::vector<std::size_t> positives;

  std::size_t size() const { return columns.rows(); }
  void validate() const;
};

/// Fraction of queries whose positive is ranked within the top k.
double recall_at_k(const GroupBatch& batch, std::size_t k);

}  // namespace difrank

#endif  // DIFRANK_RANK_METRICS_HPP_
