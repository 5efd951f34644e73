#ifndef DIFRANK_DOWNSTREAM_HPP_
#define DIFRANK_DOWNSTREAM_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "difrank/matrix.hpp"
#include "difrank/rank_metrics.hpp"
#include "difrank/sorters.hpp"
#include "difrank/trainer.hpp"

// Small synthetic tasks that train a scorer through a frozen sorter and
// score it with exact metrics.

namespace difrank {

enum class ToyTask { spearman, map, retrieval };

std::string_view to_string(ToyTask task);
ToyTask parse_toy_task(std::string_view name);

/// What the scorer is optimized for. `cross_entropy` exists only for the
/// multi-label task, as the reference the rank loss is compared against.
enum class ToyObjective { rank, cross_entropy };

struct ToyOptions {
  std::size_t group_size = 20;  // d; must match the sorter
  std::size_t features = 8;
  std::size_t train_items = 4000;
  std::size_t test_items = 2000;
  std::size_t groups_per_step = 8;
  std::uint64_t data_seed = 1;
  double noise = 0.05;
  std::size_t hidden = 32;        // spearman: width of the 2-layer scorer
  std::size_t classes = 5;        // map
  std::size_t latent_dim = 6;     // retrieval: cluster-center dimension
  std::size_t embedding_dim = 12; // retrieval
  double margin = kDefaultMargin; // retrieval

  void validate() const;
  std::map<std::string, std::string> echo() const;
};

ToyOptions toy_default_options(ToyTask task);
/// Downstream optimizer settings: learning rate halved every 3 epochs.
TrainConfig toy_default_train_config(ToyTask task);

/// Items with features and a latent score that is a monotone function of a
/// hidden direction plus noise.
struct RegressionToyData {
  Matrix x_train;
  std::vector<double> y_train;
  Matrix x_test;
  std::vector<double> y_test;
};
RegressionToyData make_spearman_toy(const ToyOptions& options);

/// Multi-label items; class c is positive where a fixed affine function of
/// the features is positive, so every class is linearly separable.
struct MultiLabelToyData {
  Matrix x_train;
  LabelMatrix y_train;  // items x classes
  Matrix x_test;
  LabelMatrix y_test;
};
MultiLabelToyData make_map_toy(const ToyOptions& options);

/// Paired views of the same objects: row i of `a` and row i of `b` are two
/// noisy linear observations of object i's center.
struct RetrievalToyData {
  Matrix a_train;
  Matrix b_train;
  Matrix a_test;
  Matrix b_test;
};
RetrievalToyData make_retrieval_toy(const ToyOptions& options);

/// {"spearman"} over the whole set.
std::map<std::string, double> evaluate_ranking(std::span<const double> predicted,
                                               std::span<const double> truth);
/// {"map"} over classes x items; classes without a positive are skipped.
std::map<std::string, double> evaluate_multilabel(const Matrix& scores,
                                                  const LabelMatrix& labels);
/// {"recall@1", "recall@5"} averaged over groups (K clipped to d).
std::map<std::string, double> evaluate_retrieval(std::span<const GroupBatch> groups);

/// Trains a fresh scorer for `task` through `sorter` and records exact
/// held-out metrics after every epoch. With `train.freeze_sorter` set the
/// sorter's parameters are left untouched.
TrainReport train_downstream(ToyTask task, Sorter& sorter, const ToyOptions& options,
                             const TrainConfig& train,
                             ToyObjective objective = ToyObjective::rank,
                             const EpochCallback& on_epoch = {});

}  // namespace difrank

#endif  // DIFRANK_DOWNSTREAM_HPP_
