#include "difrank/downstream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "difrank/ops.hpp"
#include "difrank/rank_losses.hpp"
#include "difrank/rng.hpp"

namespace difrank {

std::string_view to_string(ToyTask task) {
  switch (task) {
    case ToyTask::spearman: return "spearman";
    case ToyTask::map: return "map";
    case ToyTask::retrieval: return "retrieval";
  }
  return "?";
}

ToyTask parse_toy_task(std::string_view name) {
  for (ToyTask t : {ToyTask::spearman, ToyTask::map, ToyTask::retrieval}) {
    if (name == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown toy task '" + std::string(name) + "'");
}

void ToyOptions::validate() const {
  if (group_size < 3) throw std::invalid_argument("toy group size must be >= 3");
  if (features == 0 || hidden == 0 || classes == 0 || latent_dim == 0 ||
      embedding_dim == 0 || groups_per_step == 0) {
    throw std::invalid_argument("toy sizes must be positive");
  }
  if (train_items < group_size || test_items < group_size) {
    throw std::invalid_argument("toy data must hold at least one group");
  }
  if (!(noise >= 0.0) || !(margin >= 0.0)) {
    throw std::invalid_argument("toy noise and margin must be >= 0");
  }
}

namespace {

std::string real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> ToyOptions::echo() const {
  return {{"group_size", std::to_string(group_size)},
          {"features", std::to_string(features)},
          {"train_items", std::to_string(train_items)},
          {"test_items", std::to_string(test_items)},
          {"groups_per_step", std::to_string(groups_per_step)},
          {"data_seed", std::to_string(data_seed)},
          {"noise", real(noise)},
          {"hidden", std::to_string(hidden)},
          {"classes", std::to_string(classes)},
          {"latent_dim", std::to_string(latent_dim)},
          {"embedding_dim", std::to_string(embedding_dim)},
          {"margin", real(margin)}};
}

ToyOptions toy_default_options(ToyTask task) {
  ToyOptions o;
  switch (task) {
    case ToyTask::spearman:
      o.features = 8;
      o.noise = 0.05;
      break;
    case ToyTask::map:
      o.features = 10;
      o.classes = 5;
      break;
    case ToyTask::retrieval:
      o.features = 16;
      o.noise = 0.1;
      break;
  }
  return o;
}

TrainConfig toy_default_train_config(ToyTask task) {
  TrainConfig t;
  t.epochs = 15;
  t.learning_rate = 1e-2;
  t.halving_period = 3;
  t.patience = t.epochs;
  t.seed = 1;
  (void)task;
  return t;
}

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, bool gaussian,
                     double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * (gaussian ? rng.normal() : rng.uniform(-1.0, 1.0));
  return m;
}

std::vector<double> unit_vector(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  double norm = 0.0;
  for (double& v : w) {
    v = rng.normal();
    norm += v * v;
  }
  for (double& v : w) v /= std::sqrt(norm);
  return w;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

RegressionToyData make_spearman_toy(const ToyOptions& options) {
  options.validate();
  Rng rng = Rng(options.data_seed).split(static_cast<std::uint64_t>(ToyTask::spearman));
  const auto w = unit_vector(rng, options.features);
  auto label = [&](const Matrix& x) {
    std::vector<double> y(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double u = dot(x.row(i), w);
      y[i] = u + 0.5 * u * u * u + options.noise * rng.normal();
    }
    return y;
  };
  RegressionToyData data;
  data.x_train = random_matrix(rng, options.train_items, options.features, false);
  data.y_train = label(data.x_train);
  data.x_test = random_matrix(rng, options.test_items, options.features, false);
  data.y_test = label(data.x_test);
  return data;
}

MultiLabelToyData make_map_toy(const ToyOptions& options) {
  options.validate();
  Rng rng = Rng(options.data_seed).split(static_cast<std::uint64_t>(ToyTask::map));
  std::vector<std::vector<double>> planes;
  for (std::size_t c = 0; c < options.classes; ++c) planes.push_back(unit_vector(rng, options.features));
  // threshold 0.5 on a unit direction of a standard normal: ~31% positives
  constexpr double kThreshold = 0.5;
  auto label = [&](const Matrix& x) {
    LabelMatrix y(x.rows(), options.classes);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t c = 0; c < options.classes; ++c) {
        y(i, c) = dot(x.row(i), planes[c]) > kThreshold ? 1 : 0;
      }
    }
    return y;
  };
  MultiLabelToyData data;
  data.x_train = random_matrix(rng, options.train_items, options.features, true);
  data.y_train = label(data.x_train);
  data.x_test = random_matrix(rng, options.test_items, options.features, true);
  data.y_test = label(data.x_test);
  return data;
}

RetrievalToyData make_retrieval_toy(const ToyOptions& options) {
  options.validate();
  Rng rng = Rng(options.data_seed).split(static_cast<std::uint64_t>(ToyTask::retrieval));
  const double mix_scale = 1.0 / std::sqrt(static_cast<double>(options.latent_dim));
  const Matrix view_a = random_matrix(rng, options.features, options.latent_dim, true, mix_scale);
  const Matrix view_b = random_matrix(rng, options.features, options.latent_dim, true, mix_scale);
  auto observe = [&](const Matrix& centers, const Matrix& view) {
    Matrix out(centers.rows(), options.features);
    for (std::size_t i = 0; i < centers.rows(); ++i) {
      for (std::size_t f = 0; f < options.features; ++f) {
        out(i, f) = dot(view.row(f), centers.row(i)) + options.noise * rng.normal();
      }
    }
    return out;
  };
  RetrievalToyData data;
  const Matrix train = random_matrix(rng, options.train_items, options.latent_dim, true);
  const Matrix test = random_matrix(rng, options.test_items, options.latent_dim, true);
  data.a_train = observe(train, view_a);
  data.b_train = observe(train, view_b);
  data.a_test = observe(test, view_a);
  data.b_test = observe(test, view_b);
  return data;
}

std::map<std::string, double> evaluate_ranking(std::span<const double> predicted,
                                               std::span<const double> truth) {
  return {{"spearman", spearman(predicted, truth)}};
}

std::map<std::string, double> evaluate_multilabel(const Matrix& scores,
                                                  const LabelMatrix& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw std::invalid_argument("evaluate_multilabel: shape mismatch");
  }
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < labels.rows(); ++c) {
    const auto row = labels.row(c);
    if (std::none_of(row.begin(), row.end(), [](auto l) { return l != 0; })) continue;
    total += average_precision(scores.row(c), row);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("evaluate_multilabel: no class has a positive");
  return {{"map", total / static_cast<double>(used)}};
}

std::map<std::string, double> evaluate_retrieval(std::span<const GroupBatch> groups) {
  if (groups.empty()) throw std::invalid_argument("evaluate_retrieval: no groups");
  double r1 = 0.0, r5 = 0.0;
  for (const GroupBatch& g : groups) {
    r1 += recall_at_k(g, 1);
    r5 += recall_at_k(g, std::min<std::size_t>(5, g.size()));
  }
  const auto n = static_cast<double>(groups.size());
  return {{"recall@1", r1 / n}, {"recall@5", r5 / n}};
}

namespace {

Tensor init_param(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor select_rows(const Matrix& m, std::span<const std::size_t> rows, bool append_one = false) {
  const std::size_t cols = m.cols() + (append_one ? 1 : 0);
  std::vector<double> out;
  out.reserve(rows.size() * cols);
  for (std::size_t r : rows) {
    const auto row = m.row(r);
    out.insert(out.end(), row.begin(), row.end());
    if (append_one) out.push_back(1.0);
  }
  return Tensor::constant({rows.size(), cols}, std::move(out));
}

// A task couples a scorer with its data. `items` lists G * d indices into
// the train or test split; consecutive runs of d form one group.
class Problem {
 public:
  virtual ~Problem() = default;
  virtual std::vector<Tensor> parameters() = 0;
  virtual std::size_t size(bool test) const = 0;
  virtual Tensor loss(std::span<const std::size_t> items, bool test, std::size_t epoch) = 0;
  virtual std::map<std::string, double> evaluate() = 0;
};

class SpearmanProblem final : public Problem {
 public:
  SpearmanProblem(const ToyOptions& o, const TrainConfig& t, Sorter& sorter, Rng rng)
      : o_(o), t_(t), sorter_(sorter), data_(make_spearman_toy(o)) {
    w1_ = init_param(rng, {o.hidden, o.features}, o.features);
    b1_ = init_param(rng, {o.hidden}, o.features);
    w2_ = init_param(rng, {1, o.hidden}, o.hidden);
    b2_ = init_param(rng, {1}, o.hidden);
  }
  std::vector<Tensor> parameters() override { return {w1_, b1_, w2_, b2_}; }
  std::size_t size(bool test) const override {
    return test ? data_.y_test.size() : data_.y_train.size();
  }
  Tensor score(const Tensor& x) {
    return ops::tanh(ops::affine(ops::relu(ops::affine(x, w1_, b1_)), w2_, b2_));
  }
  Tensor loss(std::span<const std::size_t> items, bool test, std::size_t epoch) override {
    const std::size_t d = o_.group_size;
    const std::size_t groups = items.size() / d;
    const auto& y = test ? data_.y_test : data_.y_train;
    Matrix targets(groups, d);
    for (std::size_t i = 0; i < items.size(); ++i) targets.data()[i] = y[items[i]];
    const Tensor s = ops::reshape(score(select_rows(test ? data_.x_test : data_.x_train, items)),
                                  {groups, d});
    const Tensor main = spearman_loss(s, targets, sorter_, Mode::eval);
    if (t_.aux_weight == 0.0) return main;
    const Tensor aux = aux_loss(s, Tensor::constant({groups, d}, targets.data()), t_.aux_kind);
    return aligned_loss(main, aux, t_.aux_weight, t_.aux_schedule, epoch);
  }
  std::map<std::string, double> evaluate() override {
    std::vector<std::size_t> all(data_.y_test.size());
    std::iota(all.begin(), all.end(), 0);
    const Tensor s = score(select_rows(data_.x_test, all));
    return evaluate_ranking(s.values(), data_.y_test);
  }

 private:
  ToyOptions o_;
  TrainConfig t_;
  Sorter& sorter_;
  RegressionToyData data_;
  Tensor w1_, b1_, w2_, b2_;
};

class MapProblem final : public Problem {
 public:
  MapProblem(const ToyOptions& o, const TrainConfig& t, Sorter& sorter, Rng rng,
             ToyObjective objective)
      : o_(o), t_(t), sorter_(sorter), objective_(objective), data_(make_map_toy(o)) {
    // bias folded in as the weight of a constant feature
    w_ = init_param(rng, {o.classes, o.features + 1}, o.features);
  }
  std::vector<Tensor> parameters() override { return {w_}; }
  std::size_t size(bool test) const override {
    return test ? data_.y_test.rows() : data_.y_train.rows();
  }
  Tensor loss(std::span<const std::size_t> items, bool test, std::size_t epoch) override {
    const std::size_t d = o_.group_size;
    const std::size_t C = o_.classes;
    const std::size_t groups = items.size() / d;
    const Matrix& x = test ? data_.x_test : data_.x_train;
    const LabelMatrix& y = test ? data_.y_test : data_.y_train;

    std::vector<Tensor> blocks;
    std::vector<std::uint8_t> all_labels;
    for (std::size_t g = 0; g < groups; ++g) {
      const auto group = items.subspan(g * d, d);
      blocks.push_back(ops::affine(w_, select_rows(x, group, true)));  // [C x d]
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j : group) all_labels.push_back(y(j, c));
      }
    }
    const Tensor logits = ops::concat(blocks, 0);  // [G*C x d]
    if (objective_ == ToyObjective::cross_entropy) {
      std::vector<double> targets(all_labels.begin(), all_labels.end());
      return ops::bce_with_logits(logits, Tensor::constant(logits.shape(), std::move(targets)));
    }
    // rows whose class has no positive in the group carry no AP signal
    std::vector<std::size_t> keep;
    LabelMatrix kept_labels(0, d);
    std::vector<std::uint8_t> kept;
    for (std::size_t r = 0; r < groups * C; ++r) {
      const auto first = all_labels.begin() + static_cast<std::ptrdiff_t>(r * d);
      if (std::none_of(first, first + static_cast<std::ptrdiff_t>(d), [](auto l) { return l != 0; })) {
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) keep.push_back(r * d + j);
      kept.insert(kept.end(), first, first + static_cast<std::ptrdiff_t>(d));
    }
    const std::size_t rows = kept.size() / d;
    if (rows == 0) return Tensor::scalar(0.0);
    const Tensor scores =
        ops::tanh(ops::reshape(ops::gather(logits, keep), {rows, d}));
    const LabelMatrix labels(rows, d, std::move(kept));
    const Tensor main = map_loss(scores, labels, sorter_, Mode::eval);
    if (t_.aux_weight == 0.0) return main;
    std::vector<double> signs(labels.data().size());
    std::transform(labels.data().begin(), labels.data().end(), signs.begin(),
                   [](auto l) { return l ? 1.0 : -1.0; });
    const Tensor aux = aux_loss(scores, Tensor::constant({rows, d}, std::move(signs)), t_.aux_kind);
    return aligned_loss(main, aux, t_.aux_weight, t_.aux_schedule, epoch);
  }
  std::map<std::string, double> evaluate() override {
    std::vector<std::size_t> all(data_.y_test.rows());
    std::iota(all.begin(), all.end(), 0);
    const Tensor s = ops::affine(w_, select_rows(data_.x_test, all, true));  // [C x n]
    LabelMatrix labels(o_.classes, all.size());
    for (std::size_t c = 0; c < o_.classes; ++c) {
      for (std::size_t j = 0; j < all.size(); ++j) labels(c, j) = data_.y_test(j, c);
    }
    return evaluate_multilabel(Matrix(o_.classes, all.size(), {s.values().begin(), s.values().end()}),
                               labels);
  }

 private:
  ToyOptions o_;
  TrainConfig t_;
  Sorter& sorter_;
  ToyObjective objective_;
  MultiLabelToyData data_;
  Tensor w_;
};

class RetrievalProblem final : public Problem {
 public:
  RetrievalProblem(const ToyOptions& o, const TrainConfig& t, Sorter& sorter, Rng rng)
      : o_(o), t_(t), sorter_(sorter), data_(make_retrieval_toy(o)) {
    wa_ = init_param(rng, {o.embedding_dim, o.features}, o.features);
    wb_ = init_param(rng, {o.embedding_dim, o.features}, o.features);
  }
  std::vector<Tensor> parameters() override { return {wa_, wb_}; }
  std::size_t size(bool test) const override {
    return test ? data_.a_test.rows() : data_.a_train.rows();
  }
  // Row i holds query i (view a) against every item of the group (view b).
  Tensor similarities(std::span<const std::size_t> group, bool test) {
    const Tensor ea = ops::l2_normalize(
        ops::affine(select_rows(test ? data_.a_test : data_.a_train, group), wa_));
    const Tensor eb = ops::l2_normalize(
        ops::affine(select_rows(test ? data_.b_test : data_.b_train, group), wb_));
    return ops::affine(ea, eb);
  }
  Tensor loss(std::span<const std::size_t> items, bool test, std::size_t epoch) override {
    const std::size_t d = o_.group_size;
    const std::size_t groups = items.size() / d;
    std::vector<std::size_t> positives(d);
    std::iota(positives.begin(), positives.end(), 0);
    std::vector<Tensor> per_group;
    for (std::size_t g = 0; g < groups; ++g) {
      const Tensor y = similarities(items.subspan(g * d, d), test);
      Tensor l = recall_loss(y, positives, o_.margin, sorter_, Mode::eval);
      if (t_.aux_weight > 0.0) {
        std::vector<double> eye(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
        l = aligned_loss(l, aux_loss(y, Tensor::constant({d, d}, std::move(eye)), t_.aux_kind),
                         t_.aux_weight, t_.aux_schedule, epoch);
      }
      per_group.push_back(ops::reshape(l, {1}));
    }
    return ops::mean(ops::concat(per_group, 0));
  }
  std::map<std::string, double> evaluate() override {
    const std::size_t d = o_.group_size;
    std::vector<GroupBatch> groups;
    std::vector<std::size_t> positives(d);
    std::iota(positives.begin(), positives.end(), 0);
    for (std::size_t begin = 0; begin + d <= data_.a_test.rows(); begin += d) {
      std::vector<std::size_t> group(d);
      std::iota(group.begin(), group.end(), begin);
      const Tensor y = similarities(group, true);
      groups.push_back({Matrix(d, d, {y.values().begin(), y.values().end()}), positives});
    }
    return evaluate_retrieval(groups);
  }

 private:
  ToyOptions o_;
  TrainConfig t_;
  Sorter& sorter_;
  RetrievalToyData data_;
  Tensor wa_, wb_;
};

// Freezes a sorter for the lifetime of the guard.
class FreezeGuard {
 public:
  FreezeGuard(Sorter& sorter, bool active) : sorter_(sorter), active_(active) {
    if (active_) set_trainable(sorter_, false);
  }
  ~FreezeGuard() {
    if (active_) set_trainable(sorter_, true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  Sorter& sorter_;
  bool active_;
};

}  // namespace

TrainReport train_downstream(ToyTask task, Sorter& sorter, const ToyOptions& options,
                             const TrainConfig& train, ToyObjective objective,
                             const EpochCallback& on_epoch) {
  options.validate();
  train.validate();
  if (sorter.input_dim() != 0 && sorter.input_dim() != options.group_size) {
    throw std::invalid_argument("sorter was built for d = " + std::to_string(sorter.input_dim()) +
                                " but the toy groups have d = " +
                                std::to_string(options.group_size));
  }
  if (objective == ToyObjective::cross_entropy && task != ToyTask::map) {
    throw std::invalid_argument("the cross-entropy objective applies to the map toy only");
  }
  const auto started = std::chrono::steady_clock::now();
  Rng root(train.seed);

  std::unique_ptr<Problem> problem;
  switch (task) {
    case ToyTask::spearman:
      problem = std::make_unique<SpearmanProblem>(options, train, sorter, root.split(1));
      break;
    case ToyTask::map:
      problem = std::make_unique<MapProblem>(options, train, sorter, root.split(1), objective);
      break;
    case ToyTask::retrieval:
      problem = std::make_unique<RetrievalProblem>(options, train, sorter, root.split(1));
      break;
  }

  FreezeGuard freeze(sorter, train.freeze_sorter);
  std::vector<Tensor> params = problem->parameters();
  if (!train.freeze_sorter) {
    for (Tensor& p : sorter.parameter_tensors()) params.push_back(p);
  }
  Adam adam(params, {train.learning_rate});

  TrainReport report;
  report.task = std::string("toy-") + std::string(to_string(task)) +
                (objective == ToyObjective::cross_entropy ? "-cross-entropy" : "");
  report.config = train.echo();
  for (const auto& [k, v] : options.echo()) report.config["toy." + k] = v;
  report.config["sorter"] = to_string(sorter.kind());
  for (const auto& [k, v] : sorter.hyperparameters()) report.config["sorter." + k] = v;

  const std::size_t d = options.group_size;
  const std::size_t per_step = d * options.groups_per_step;
  std::vector<std::size_t> order(problem->size(false));
  std::iota(order.begin(), order.end(), 0);
  const std::size_t usable = order.size() / d * d;
  std::vector<std::size_t> test_order(problem->size(true) / d * d);
  std::iota(test_order.begin(), test_order.end(), 0);

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    adam.set_learning_rate(lr_schedule(epoch, train.learning_rate, train.halving_period));
    Rng shuffle_rng = root.split(100 + epoch);
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < usable; begin += per_step) {
      const auto items = std::span<const std::size_t>(order).subspan(
          begin, std::min(per_step, usable - begin));
      Tape tape;
      TapeScope scope(tape);
      adam.zero_grad();
      const Tensor loss = problem->loss(items, false, epoch);
      if (!std::isfinite(loss.item())) {
        throw TrainingDivergedError(report.task + ": loss became non-finite in epoch " +
                                    std::to_string(epoch + 1));
      }
      if (loss.requires_grad()) {
        tape.backward(loss);
        adam.step();
      }
      loss_sum += loss.item();
      ++steps;
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1)));

    NoGradScope no_grad;
    double held = 0.0;
    std::size_t held_steps = 0;
    for (std::size_t begin = 0; begin < test_order.size(); begin += per_step) {
      const auto items = std::span<const std::size_t>(test_order).subspan(
          begin, std::min(per_step, test_order.size() - begin));
      held += problem->loss(items, true, epoch).item();
      ++held_steps;
    }
    report.heldout_loss.push_back(held / static_cast<double>(held_steps));
    for (const auto& [name, value] : problem->evaluate()) report.metrics[name].push_back(value);
    if (on_epoch) on_epoch(report);

    if (report.heldout_loss.back() < best) {
      best = report.heldout_loss.back();
      best_epoch = epoch;
    } else if (epoch - best_epoch >= train.patience) {
      report.early_stopped = true;
      break;
    }
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace difrank
