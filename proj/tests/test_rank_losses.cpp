#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "difrank/ops.hpp"
#include "difrank/rank_losses.hpp"
#include "difrank/rank_metrics.hpp"
#include "difrank/rng.hpp"
#include "oracle_sorter.hpp"

using namespace difrank;
using difrank::testing::ExactRankSorter;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double value(const Tensor& t) { return t.item(); }

// Brute-force hard-negative recall surrogate over explicit triplets.
double brute_recall_loss(const Matrix& y, const std::vector<std::size_t>& pos, double margin,
                         Sorter& sorter) {
  const std::size_t d = y.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const auto col = y.row(i);
    double worst = 0.0;
    bool first = true;
    for (std::size_t c = 0; c < d; ++c) {
      if (c == pos[i] || c == i) continue;
      const double t = value(triplet_rank_loss(Tensor::constant({d}, {col.begin(), col.end()}),
                                               pos[i], c, margin, sorter));
      if (first || t > worst) worst = t;
      first = false;
    }
    total += worst;
  }
  return total / static_cast<double>(d);
}

}  // namespace

TEST_CASE("sorter l1 loss") {
  const Tensor t = Tensor::constant({4}, {0, 1.0 / 3, 2.0 / 3, 1});
  CHECK(value(sorter_l1_loss(t, t)) == 0.0);
  CHECK(value(sorter_l1_loss(ops::add_scalar(t, 0.1), t)) == doctest::Approx(0.1));
  CHECK_THROWS_AS(sorter_l1_loss(t, Tensor::constant({3}, {0, 0.5, 1})), ShapeError);
}

TEST_CASE("spearman loss") {
  ExactRankSorter oracle;
  Rng rng(1);
  const auto gt = random_values(rng, 8);
  CHECK(value(spearman_loss(Tensor::constant({8}, gt), gt, oracle)) == 0.0);

  SUBCASE("lower loss never lowers exact spearman") {
    for (int trial = 0; trial < 300; ++trial) {
      const auto target = random_values(rng, 10);
      auto a = random_values(rng, 10);
      auto b = a;
      b[rng.below(10)] += rng.uniform(-0.5, 0.5);
      const double la = value(spearman_loss(Tensor::constant({10}, a), target, oracle));
      const double lb = value(spearman_loss(Tensor::constant({10}, b), target, oracle));
      const double sa = spearman(a, target);
      const double sb = spearman(b, target);
      if (lb < la) REQUIRE(sb >= sa);
      if (lb > la) REQUIRE(sb <= sa);
    }
  }
  SUBCASE("full reversal is the worst sign pattern") {
    const std::vector<double> target{0.2, 0.9, 0.4, 0.7, 0.1};
    double worst = -1.0;
    double reversed = 0.0;
    for (unsigned mask = 0; mask < 32; ++mask) {
      std::vector<double> pred(target);
      for (std::size_t i = 0; i < 5; ++i) {
        if (mask >> i & 1U) pred[i] = -pred[i];
      }
      const double l = value(spearman_loss(Tensor::constant({5}, pred), target, oracle));
      worst = std::max(worst, l);
      if (mask == 31U) reversed = l;
    }
    CHECK(reversed == worst);
    CHECK(reversed > 0.0);
  }
  SUBCASE("batched groups average per group") {
    const auto t1 = random_values(rng, 6);
    const auto t2 = random_values(rng, 6);
    const auto p1 = random_values(rng, 6);
    const auto p2 = random_values(rng, 6);
    HandcraftedSorter h(10.0);
    std::vector<double> both(p1), targets(t1);
    both.insert(both.end(), p2.begin(), p2.end());
    targets.insert(targets.end(), t2.begin(), t2.end());
    const double joint =
        value(spearman_loss(Tensor::constant({2, 6}, both), Matrix(2, 6, targets), h));
    const double l1 = value(spearman_loss(Tensor::constant({6}, p1), t1, h));
    const double l2 = value(spearman_loss(Tensor::constant({6}, p2), t2, h));
    CHECK(joint == doctest::Approx((l1 + l2) / 2).epsilon(1e-13));
  }
  CHECK_THROWS_AS(spearman_loss(Tensor::constant({5}, random_values(rng, 5)), gt, oracle),
                  ShapeError);
}

TEST_CASE("map loss") {
  ExactRankSorter oracle;
  const Tensor s = Tensor::constant({1, 3}, {0.9, 0.1, 0.8});
  CHECK(value(map_loss(s, LabelMatrix(1, 3, {1, 0, 1}), oracle)) == doctest::Approx(0.25));
  CHECK_THROWS(map_loss(s, LabelMatrix(1, 3, {0, 0, 0}), oracle));
  CHECK_THROWS_AS(map_loss(s, LabelMatrix(2, 3, {1, 0, 1, 1, 0, 0}), oracle), ShapeError);

  SUBCASE("top-ranked positives reach the lower bound") {
    const Tensor top = Tensor::constant({2, 4}, {0.9, 0.8, 0.1, 0.0, 0.2, 0.1, 0.0, 0.9});
    const LabelMatrix lab(2, 4, {1, 1, 0, 0, 0, 0, 0, 1});
    // class 0: ranks 0 and 1/3, class 1: rank 0
    CHECK(value(map_loss(top, lab, oracle)) == doctest::Approx((1.0 / 3.0 / 2.0 + 0.0) / 2.0));
  }
  SUBCASE("local swaps that lower the loss never lower mAP") {
    Rng rng(2);
    for (int trial = 0; trial < 300; ++trial) {
      Matrix scores(1, 10, random_values(rng, 10));
      LabelMatrix labels(1, 10);
      for (auto& l : labels.data()) l = rng.below(3) == 0;
      labels(0, rng.below(10)) = 1;
      Matrix swapped = scores;
      const std::size_t i = rng.below(10);
      const std::size_t j = rng.below(10);
      std::swap(swapped(0, i), swapped(0, j));
      const double la = value(map_loss(Tensor::constant({1, 10}, scores.data()), labels, oracle));
      const double lb = value(map_loss(Tensor::constant({1, 10}, swapped.data()), labels, oracle));
      if (lb < la) {
        REQUIRE(mean_average_precision(swapped, labels) >= mean_average_precision(scores, labels));
      }
    }
  }
  SUBCASE("oracle loss ignores increasing transforms") {
    Rng rng(3);
    const auto v = random_values(rng, 12);
    std::vector<double> w(v.size());
    std::transform(v.begin(), v.end(), w.begin(), [](double x) { return std::tanh(4 * x) + 1; });
    const LabelMatrix lab(2, 6, {1, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0, 1});
    CHECK(value(map_loss(Tensor::constant({2, 6}, v), lab, oracle)) ==
          value(map_loss(Tensor::constant({2, 6}, w), lab, oracle)));
  }
}

TEST_CASE("triplet loss on ranks") {
  ExactRankSorter oracle;
  const Tensor col = Tensor::constant({5}, {0.9, 0.1, 0.5, 0.3, -0.2});
  // ranks: [0, 0.75, 0.25, 0.5, 1]
  CHECK(value(triplet_rank_loss(col, 0, 2, 0.2, oracle)) == 0.0);
  CHECK(value(triplet_rank_loss(col, 2, 3, 0.25, oracle)) == 0.0);
  CHECK(value(triplet_rank_loss(col, 3, 2, 0.2, oracle)) == doctest::Approx(0.45));
  CHECK_THROWS(triplet_rank_loss(col, 1, 1, 0.2, oracle));
  CHECK_THROWS(triplet_rank_loss(col, 1, 7, 0.2, oracle));

  HandcraftedSorter h(10.0);
  const std::vector<double> tie{0.4, 0.4, -0.5};
  CHECK(value(triplet_rank_loss(Tensor::constant({3}, tie), 0, 1, 0.2, h)) ==
        doctest::Approx(0.2).epsilon(1e-12));

  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::parameter({5}, {0.9, 0.1, 0.5, 0.3, -0.2});
  tape.backward(triplet_rank_loss(x, 0, 4, 0.2, h));
  for (double g : x.grad_or_zeros()) CHECK(g == 0.0);
}

TEST_CASE("recall loss") {
  Rng rng(4);
  HandcraftedSorter h(10.0);
  ExactRankSorter oracle;
  Matrix y(8, 8, random_values(rng, 64));
  std::vector<std::size_t> pos(8);
  for (auto& p : pos) p = rng.below(8);
  const double fast = value(recall_loss(Tensor::constant({8, 8}, y.data()), pos, 0.2, h));
  CHECK(std::abs(fast - brute_recall_loss(y, pos, 0.2, h)) < 1e-12);

  CHECK_THROWS(recall_loss(Tensor::constant({2, 2}, {1, 0, 0, 1}), std::vector<std::size_t>{0, 1},
                           0.2, h));
  CHECK_THROWS_AS(recall_loss(Tensor::constant({2, 3}, random_values(rng, 6)),
                              std::vector<std::size_t>{0, 1}, 0.2, h),
                  ShapeError);

  SUBCASE("zero loss below one rank step implies perfect recall") {
    const std::size_t d = 6;
    for (int trial = 0; trial < 100; ++trial) {
      GroupBatch b{Matrix(d, d, random_values(rng, d * d)), std::vector<std::size_t>(d)};
      for (std::size_t i = 0; i < d; ++i) {
        b.positives[i] = i;
        if (rng.below(2)) b.columns(i, i) = 2.0;
      }
      const double l = value(recall_loss(Tensor::constant({d, d}, b.columns.data()), b.positives,
                                         0.1, oracle));
      if (l == 0.0) REQUIRE(recall_at_k(b, 1) == 1.0);
    }
  }
  SUBCASE("one violating column contributes hinge / d") {
    const std::size_t d = 4;
    Matrix m(d, d);
    std::vector<std::size_t> p(d);
    for (std::size_t i = 0; i < d; ++i) {
      p[i] = (i + 1) % d;
      for (std::size_t c = 0; c < d; ++c) m(i, c) = c == p[i] ? 1.0 : -static_cast<double>(c);
    }
    // column 0: its positive (item 1) becomes the lowest score
    m(0, 1) = -10.0;
    const double l = value(recall_loss(Tensor::constant({d, d}, m.data()), p, 0.2, oracle));
    // positive falls to rank 1; the query's own item is not a negative, so the
    // hardest negative is item 2 at rank 1/3
    CHECK(l == doctest::Approx((0.2 + 1.0 - 1.0 / 3.0) / 4.0));
  }
}

TEST_CASE("loss gradients through the handcrafted sorter") {
  HandcraftedSorter h(10.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto x = random_values(rng, 36);
    const auto gt = random_values(rng, 6);
    CHECK(grad_check([&](const Tensor& in) { return spearman_loss(ops::reshape(in, {6, 6}),
                                                                  Matrix(6, 6, x), h); },
                     x, {36}) < 1e-4);
    CHECK(grad_check([&](const Tensor& in) { return spearman_loss(in, gt, h); },
                     std::vector<double>(x.begin(), x.begin() + 6), {6}) < 1e-4);
    LabelMatrix lab(6, 6);
    for (std::size_t c = 0; c < 6; ++c) {
      lab(c, rng.below(6)) = 1;
      lab(c, rng.below(6)) = 1;
    }
    CHECK(grad_check([&](const Tensor& in) { return map_loss(in, lab, h); }, x, {6, 6}) < 1e-4);
    // a large margin keeps every hinge active, so the check avoids the kink
    std::vector<std::size_t> pos{0, 1, 2, 3, 4, 5};
    CHECK(grad_check([&](const Tensor& in) { return recall_loss(in, pos, 2.0, h); }, x, {6, 6}) <
          1e-4);
    CHECK(grad_check([&](const Tensor& in) { return triplet_rank_loss(in, 0, 3, 2.0, h); },
                     std::vector<double>(x.begin(), x.begin() + 6), {6}) < 1e-4);
  }
}

TEST_CASE("aligned loss") {
  const Tensor main = Tensor::scalar(0.7);
  const Tensor aux = Tensor::scalar(0.3);
  CHECK(value(aligned_loss(main, aux, 0.0, AuxSchedule::always, 0)) == 0.7);
  CHECK(value(aligned_loss(main, aux, 2.0, AuxSchedule::always, 5)) == doctest::Approx(1.3));
  CHECK(value(aligned_loss(main, aux, 2.0, AuxSchedule::first_epoch_only, 0)) ==
        doctest::Approx(1.3));
  CHECK(value(aligned_loss(main, aux, 2.0, AuxSchedule::first_epoch_only, 1)) == 0.7);
  CHECK_THROWS(aligned_loss(main, aux, -1.0, AuxSchedule::always, 0));

  CHECK(value(aux_loss(Tensor::constant({2}, {1, 2}), Tensor::constant({2}, {0, 4}), AuxKind::l1)) ==
        1.5);
  CHECK(value(aux_loss(Tensor::constant({2}, {1, 2}), Tensor::constant({2}, {0, 4}), AuxKind::l2)) ==
        2.5);

  // gradient of the combination is the weighted sum of the parts
  HandcraftedSorter h(10.0);
  Rng rng(5);
  const auto xv = random_values(rng, 6);
  const auto gt = random_values(rng, 6);
  auto grad = [&](int which) {
    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::parameter({6}, xv);
    const Tensor m = spearman_loss(x, gt, h);
    const Tensor a = aux_loss(x, Tensor::constant({6}, gt), AuxKind::l2);
    tape.backward(which == 0 ? m : which == 1 ? a : aligned_loss(m, a, 0.5, AuxSchedule::always, 0));
    return x.grad_or_zeros();
  };
  const auto gm = grad(0), ga = grad(1), gc = grad(2);
  for (std::size_t i = 0; i < 6; ++i) CHECK(gc[i] == doctest::Approx(gm[i] + 0.5 * ga[i]));

  LossConfig cfg;
  CHECK(cfg.margin == kDefaultMargin);
  cfg.margin = -0.1;
  CHECK_THROWS(cfg.validate());
}
