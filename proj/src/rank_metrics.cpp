#include "difrank/rank_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace difrank {

void validate_scores(std::span<const double> scores) {
  if (scores.size() < 2) {
    throw std::invalid_argument("score vector needs at least 2 entries, got " +
                                std::to_string(scores.size()));
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw std::invalid_argument("score vector entry " + std::to_string(i) +
                                  " is not finite");
    }
  }
}

RankVector exact_rank(std::span<const double> scores) {
  validate_scores(scores);
  const std::size_t d = scores.size();
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  RankVector out;
  out.ranks.resize(d);
  out.normalized.resize(d);
  for (std::size_t r = 0; r < d; ++r) {
    out.ranks[order[r]] = r;
    out.normalized[order[r]] =
        static_cast<double>(r) / static_cast<double>(d - 1);
  }
  return out;
}

std::vector<double> normalized_rank(std::span<const double> scores) {
  return exact_rank(scores).normalized;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("spearman: lengths " + std::to_string(a.size()) +
                                " and " + std::to_string(b.size()) + " differ");
  }
  const RankVector ra = exact_rank(a);
  const RankVector rb = exact_rank(b);
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff =
        static_cast<double>(ra.ranks[i]) - static_cast<double>(rb.ranks[i]);
    sq += diff * diff;
  }
  const double d = static_cast<double>(a.size());
  return 1.0 - 6.0 * sq / (d * (d * d - 1.0));
}

namespace {

std::size_t count_positives(std::span<const double> scores,
                            std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("average precision: " +
                                std::to_string(scores.size()) + " scores but " +
                                std::to_string(labels.size()) + " labels");
  }
  const auto rel = static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  if (rel == 0) {
    throw std::invalid_argument("average precision needs at least one positive");
  }
  return rel;
}

}  // namespace

double average_precision(std::span<const double> scores,
                         std::span<const std::uint8_t> labels) {
  const std::size_t rel = count_positives(scores, labels);
  const RankVector rk = exact_rank(scores);
  // Walk the ranking top-down; each positive contributes hits / (rank + 1).
  std::vector<std::size_t> by_rank(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) by_rank[rk.ranks[i]] = i;
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < by_rank.size(); ++r) {
    if (labels[by_rank[r]] == 0) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return total / static_cast<double>(rel);
}

double brute_force_ap(std::span<const double> scores,
                      std::span<const std::uint8_t> labels) {
  const std::size_t rel = count_positives(scores, labels);
  validate_scores(scores);
  const std::size_t d = scores.size();
  // s outranks j when it has a larger score, or an equal score and a smaller
  // index.
  auto outranks = [&](std::size_t s, std::size_t j) {
    return scores[s] > scores[j] || (scores[s] == scores[j] && s < j);
  };
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    if (labels[j] == 0) continue;
    std::size_t above = 0;
    std::size_t positives_at_or_above = 1;
    for (std::size_t s = 0; s < d; ++s) {
      if (s == j || !outranks(s, j)) continue;
      ++above;
      if (labels[s] != 0) ++positives_at_or_above;
    }
    total += static_cast<double>(positives_at_or_above) /
             static_cast<double>(above + 1);
  }
  return total / static_cast<double>(rel);
}

double mean_average_precision(const Matrix& scores, const LabelMatrix& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw std::invalid_argument("mean average precision: score and label "
                                "matrices differ in shape");
  }
  if (scores.rows() == 0) {
    throw std::invalid_argument("mean average precision over zero classes");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < scores.rows(); ++c) {
    total += average_precision(scores.row(c), labels.row(c));
  }
  return total / static_cast<double>(scores.rows());
}

void GroupBatch::validate() const {
  if (columns.rows() != columns.cols()) {
    throw std::invalid_argument("group batch prediction matrix must be square");
  }
  if (positives.size() != columns.rows()) {
    throw std::invalid_argument("group batch needs one positive per query");
  }
  for (std::size_t p : positives) {
    if (p >= columns.cols()) {
      throw std::invalid_argument("group batch positive index out of range");
    }
  }
}

double recall_at_k(const GroupBatch& batch, std::size_t k) {
  batch.validate();
  const std::size_t d = batch.size();
  if (k < 1 || k > d) {
    throw std::invalid_argument("recall@K needs 1 <= K <= " + std::to_string(d) +
                                ", got " + std::to_string(k));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const RankVector rk = exact_rank(batch.columns.row(i));
    if (rk.ranks[batch.positives[i]] < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(d);
}

}  // namespace difrank
