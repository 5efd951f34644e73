#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "difrank/ops.hpp"
#include "difrank/trainer.hpp"
#include "json.hpp"

using namespace difrank;

namespace {

// One Adam step on f(w) = sum(w * g) so the gradient is exactly g.
void linear_step(Adam& adam, Tensor& w, const std::vector<double>& g) {
  Tape tape;
  TapeScope scope(tape);
  adam.zero_grad();
  tape.backward(ops::sum(ops::mul(w, Tensor::constant(w.shape(), g))));
  adam.step();
}

TrainConfig tiny_config() {
  TrainConfig t;
  t.epochs = 3;
  t.pairs_per_epoch = 300;
  t.batch_size = 128;
  t.heldout_size = 200;
  t.seed = 4;
  return t;
}

}  // namespace

TEST_CASE("adam first step") {
  Tensor w = Tensor::parameter({3}, {0.5, -1.0, 2.0});
  Adam adam({w}, {0.01});
  linear_step(adam, w, {3.0, -0.2, 1e-3});
  CHECK(w[0] == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-1.0 + 0.01).epsilon(1e-6));
  CHECK(w[2] == doctest::Approx(2.0 - 0.01).epsilon(1e-4));
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam zero gradient keeps parameters") {
  Tensor w = Tensor::parameter({2}, {0.25, 0.75});
  Adam adam({w});
  linear_step(adam, w, {0.0, 0.0});
  CHECK(w[0] == 0.25);
  CHECK(w[1] == 0.75);
  CHECK(adam.step_count() == 1);
  adam.step();  // no gradient was ever accumulated
  CHECK(w[0] == 0.25);
  CHECK(adam.step_count() == 2);
}

TEST_CASE("adam on a quadratic") {
  Tensor w = Tensor::parameter({1}, {1.0});
  Adam adam({w}, {0.1});
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    Tape tape;
    TapeScope scope(tape);
    adam.zero_grad();
    tape.backward(ops::sum(ops::square(w)));
    adam.step();
    CHECK(std::abs(w[0]) < prev);
    prev = std::abs(w[0]);
  }
}

TEST_CASE("adam rejects non-finite gradients") {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  Adam adam({w});
  CHECK_THROWS_AS(linear_step(adam, w, {1.0, std::nan("")}), TrainingDivergedError);
  CHECK(w[0] == 1.0);
  CHECK_THROWS(Adam({w}, {0.0}));
}

TEST_CASE("adam does not depend on registration order") {
  auto run = [](bool reversed) {
    Tensor a = Tensor::parameter({2}, {0.3, -0.4});
    Tensor b = Tensor::parameter({3}, {1.0, 0.2, -0.7});
    Adam adam(reversed ? std::vector<Tensor>{b, a} : std::vector<Tensor>{a, b}, {0.05});
    for (int i = 0; i < 20; ++i) {
      Tape tape;
      TapeScope scope(tape);
      adam.zero_grad();
      tape.backward(ops::add(ops::sum(ops::tanh(ops::mul(a, a))), ops::sum(ops::square(b))));
      adam.step();
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    return out;
  };
  CHECK(run(false) == run(true));
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(0, 1e-3, 100) == 1e-3);
  CHECK(lr_schedule(99, 1e-3, 100) == 1e-3);
  CHECK(lr_schedule(100, 1e-3, 100) == 5e-4);
  CHECK(lr_schedule(250, 1e-3, 100) == 2.5e-4);
  CHECK(lr_schedule(7, 1e-2, 3) == 2.5e-3);
}

TEST_CASE("train config") {
  TrainConfig t;
  CHECK(t.pairs_per_epoch == 100000);
  CHECK(t.batch_size == 512);
  CHECK(t.learning_rate == 1e-3);
  CHECK(t.halving_period == 100);
  CHECK_NOTHROW(t.validate());
  t.batch_size = 0;
  CHECK_THROWS(t.validate());
  CHECK(desk_scale_config().pairs_per_epoch == 10000);
  CHECK(full_scale_config().pairs_per_epoch == 100000);
}

TEST_CASE("sorter training") {
  GenConfig gen;
  gen.d = 6;
  const TrainConfig t = tiny_config();
  SorterArchitecture arch;
  arch.lstm.hidden_size = 8;

  std::size_t callbacks = 0;
  auto run = train_sorter(SorterKind::lstm, gen, t, arch,
                          [&](const TrainReport&) { ++callbacks; });
  CHECK(callbacks == 3);
  CHECK(run.report.train_loss.size() == 3);
  CHECK(run.report.heldout_loss.size() == 3);
  CHECK(run.report.heldout_loss.back() < run.report.heldout_loss.front());
  for (double v : run.report.heldout_loss) CHECK(std::isfinite(v));

  SUBCASE("deterministic") {
    auto again = train_sorter(SorterKind::lstm, gen, t, arch);
    CHECK(again.report.train_loss == run.report.train_loss);
    CHECK(again.report.heldout_loss == run.report.heldout_loss);
    CHECK(snapshot_parameters(*again.sorter) == snapshot_parameters(*run.sorter));
  }
  SUBCASE("held-out loss matches a direct evaluation") {
    GenConfig held = gen;
    held.seed = t.seed;
    CHECK(evaluate_sorter_l1(*run.sorter, make_heldout(held, t.heldout_size)) ==
          run.report.heldout_loss.back());
  }
  SUBCASE("cnn trains too") {
    auto cnn = train_sorter(SorterKind::cnn, gen, t, {{3, 3}, {}});
    CHECK(cnn.report.heldout_loss.back() < cnn.report.heldout_loss.front());
  }
  CHECK_THROWS(train_sorter(SorterKind::handcrafted, gen, t));
}

TEST_CASE("early stopping") {
  GenConfig gen;
  gen.d = 5;
  TrainConfig t = tiny_config();
  t.epochs = 40;
  t.patience = 1;
  t.learning_rate = 0.5;  // noisy enough to stall quickly
  SorterArchitecture arch;
  arch.lstm.hidden_size = 4;
  auto run = train_sorter(SorterKind::lstm, gen, t, arch);
  const auto& h = run.report.heldout_loss;
  const auto best = std::min_element(h.begin(), h.end()) - h.begin();
  if (run.report.early_stopped) {
    CHECK(h.size() - 1 - static_cast<std::size_t>(best) == t.patience);
  } else {
    CHECK(h.size() == t.epochs);
  }
}

TEST_CASE("train report json") {
  TrainReport r;
  r.task = "demo";
  r.train_loss = {0.5, 0.25};
  r.heldout_loss = {0.4, 0.2};
  r.metrics["spearman"] = {0.1, 0.9};
  r.config = tiny_config().echo();
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["format"] == TrainReport::kFormat);
  CHECK(j["epochs_completed"] == 2);
  CHECK(j["train_loss"][1] == 0.25);
  CHECK(j["metrics"]["spearman"][1] == 0.9);
  CHECK(j["config"]["seed"] == "4");

  const auto path = std::filesystem::temp_directory_path() / "difrank_report.json";
  r.write(path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(nlohmann::json::parse(ss.str()) == j);
  std::filesystem::remove(path);
}
