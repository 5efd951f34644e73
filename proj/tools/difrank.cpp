// difrank: sorter pretraining, evaluation and toy ranking experiments.
//
// Every command prints its metric table, writes <out-dir>/<id>.json, and
// exits 0 on success, 1 on a usage error, 2 on a runtime error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "difrank/checkpoint.hpp"
#include "difrank/downstream.hpp"
#include "difrank/experiments.hpp"
#include "difrank/synth_data.hpp"
#include "difrank/trainer.hpp"

namespace fs = std::filesystem;
using namespace difrank;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Flags shared by every command that trains something.
struct TrainFlags {
  TrainConfig cfg;
  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
    cmd->add_option("--halving", cfg.halving_period, "Halve the learning rate every N epochs")
        ->capture_default_str();
    cmd->add_option("--patience", cfg.patience, "Early-stop patience in epochs")
        ->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "Master seed")->capture_default_str();
  }
};

// Where a command gets its sorter from: a checkpoint or a handcrafted lambda.
struct SorterFlags {
  std::string checkpoint;
  std::optional<double> lambda;
  void attach(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Learned sorter checkpoint")
        ->check(CLI::ExistingFile);
    cmd->add_option("--lambda", lambda, "Use the handcrafted sorter with this sharpness");
  }
  std::unique_ptr<Sorter> load() const {
    if (!checkpoint.empty() && lambda) throw UsageError("give --checkpoint or --lambda, not both");
    if (!checkpoint.empty()) return load_sorter(checkpoint);
    if (lambda) return std::make_unique<HandcraftedSorter>(*lambda);
    throw UsageError("a sorter is required: --checkpoint PATH or --lambda L");
  }
  std::string describe() const {
    return checkpoint.empty() ? "handcrafted:" + format_real(lambda.value_or(0.0)) : checkpoint;
  }
};

void finish(ExperimentResult& result) {
  const fs::path dir = output_directory();
  fs::create_directories(dir);
  const fs::path json = dir / (result.id + ".json");
  result.write(json);
  std::cout << result.table() << "result " << json.string() << '\n';
}

fs::path output_path(const std::string& flag, const std::string& fallback) {
  const fs::path p = flag.empty() ? output_directory() / fallback : fs::path(flag);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

void print_epoch(const TrainReport& r) {
  std::printf("epoch %zu  train %.6f  heldout %.6f\n", r.epochs_completed(), r.train_loss.back(),
              r.heldout_loss.back());
  std::fflush(stdout);
}

std::map<std::string, std::string> merge(std::map<std::string, std::string> a,
                                         const std::map<std::string, std::string>& b) {
  a.insert(b.begin(), b.end());
  return a;
}

// ---- train-sorter --------------------------------------------------------

struct TrainSorterCmd {
  std::string kind;
  std::size_t d = 20;
  std::size_t depth = 8;
  std::size_t kernel = 3;
  std::size_t hidden = LstmOptions{}.hidden_size;
  double forget_bias = LstmOptions{}.forget_bias;
  std::string out;
  TrainFlags train{desk_scale_config()};

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("train-sorter", "Pretrain a learned sorter on synthetic pairs");
    cmd->add_option("--kind", kind, "cnn or lstm")->required()->check(CLI::IsMember({"cnn", "lstm"}));
    cmd->add_option("--d", d, "Vector length")->capture_default_str();
    cmd->add_option("--depth", depth, "CNN blocks")->capture_default_str();
    cmd->add_option("--kernel", kernel, "CNN kernel width")->capture_default_str();
    cmd->add_option("--hidden", hidden, "LSTM units per direction")->capture_default_str();
    cmd->add_option("--forget-bias", forget_bias, "LSTM forget-gate bias")->capture_default_str();
    cmd->add_option("--pairs", train.cfg.pairs_per_epoch, "Pairs per epoch")->capture_default_str();
    cmd->add_option("--batch", train.cfg.batch_size, "Mini-batch size")->capture_default_str();
    cmd->add_option("--heldout", train.cfg.heldout_size, "Held-out pairs")->capture_default_str();
    cmd->add_option("--out", out, "Checkpoint path");
    train.attach(cmd);
    cmd->callback([this] { run(); });
  }

  void run() {
    GenConfig gen;
    gen.d = d;
    gen.seed = train.cfg.seed;
    SorterArchitecture arch;
    arch.cnn.depth = depth;
    arch.cnn.kernel_width = kernel;
    arch.lstm.hidden_size = hidden;
    arch.lstm.forget_bias = forget_bias;
    const SorterKind k = parse_sorter_kind(kind);
    auto trained = train_sorter(k, gen, train.cfg, arch, print_epoch);

    const std::string id = "train-sorter-" + kind + "-d" + std::to_string(d) + "-s" +
                           std::to_string(train.cfg.seed);
    const fs::path ckpt = output_path(out, id + ".ckpt");
    save_checkpoint(*trained.sorter, ckpt,
                    {trained.report.epochs_completed(), trained.report.heldout_loss.back(),
                     train.cfg.seed});
    trained.report.checkpoint_path = ckpt.string();
    trained.report.write(output_directory() / (id + ".report.json"));

    ExperimentResult result;
    result.id = id;
    result.seed = train.cfg.seed;
    result.config = merge(train.cfg.echo(), trained.sorter->hyperparameters());
    result.config["kind"] = kind;
    result.config["d"] = std::to_string(d);
    result.add("heldout_l1", trained.report.heldout_loss.back());
    result.add("train_l1", trained.report.train_loss.back());
    result.add("epochs_completed", static_cast<double>(trained.report.epochs_completed()));
    result.curve_files.push_back(ckpt.string());
    finish(result);
  }
};

// ---- eval-sorter ---------------------------------------------------------

struct EvalSorterCmd {
  std::vector<std::string> checkpoints;
  std::vector<double> lambdas{10.0};
  std::size_t d = 0;
  std::size_t n = 10000;
  std::uint64_t seed = 1;
  double min_gap = 0.0;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval-sorter", "Held-out L1 of sorters, best first");
    cmd->add_option("--checkpoint", checkpoints, "Learned sorter checkpoint (repeatable)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--lambda", lambdas, "Handcrafted sharpness values")->capture_default_str();
    cmd->add_option("--d", d, "Vector length (defaults to the checkpoints')");
    cmd->add_option("--n", n, "Held-out pairs")->capture_default_str();
    cmd->add_option("--seed", seed, "Held-out seed")->capture_default_str();
    cmd->add_option("--min-gap", min_gap,
                    "Evaluate on shuffled grids with this spacing instead of the mixture");
    cmd->callback([this] { run(); });
  }

  void run() {
    std::vector<std::unique_ptr<Sorter>> owned;
    std::vector<std::pair<std::string, Sorter*>> sorters;
    for (const auto& path : checkpoints) {
      owned.push_back(load_sorter(path));
      const std::size_t dim = owned.back()->input_dim();
      if (d != 0 && d != dim) {
        throw UsageError(path + " was trained at d = " + std::to_string(dim) + ", not " +
                         std::to_string(d));
      }
      d = dim;
      sorters.emplace_back(std::string(to_string(owned.back()->kind())) + ":" +
                               fs::path(path).filename().string(),
                           owned.back().get());
    }
    if (d == 0) throw UsageError("--d is required without a checkpoint");
    for (double l : lambdas) {
      owned.push_back(std::make_unique<HandcraftedSorter>(l));
      sorters.emplace_back("handcrafted:lambda=" + format_real(l), owned.back().get());
    }
    GenConfig gen;
    gen.d = d;
    gen.seed = seed;
    const ScoreBatch data = min_gap > 0.0 ? make_min_gap_batch(d, n, min_gap, seed)
                                          : make_heldout(gen, n);
    const auto table = compare_sorters(sorters, data);

    ExperimentResult result;
    result.id = "eval-sorter-d" + std::to_string(d) + "-s" + std::to_string(seed);
    result.seed = seed;
    result.config = {{"d", std::to_string(d)}, {"n", std::to_string(n)},
                     {"seed", std::to_string(seed)},
                     {"data", min_gap > 0.0 ? "min_gap:" + format_real(min_gap) : "mixture"}};
    for (const auto& row : table) result.add(row.name, row.l1);
    finish(result);
  }
};

// ---- depth-sweep ---------------------------------------------------------

struct DepthSweepCmd {
  std::vector<std::size_t> depths{2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t d = 20;
  std::size_t kernel = 3;
  std::string out;
  TrainFlags train{desk_scale_config()};

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("depth-sweep", "Train one CNN sorter per depth");
    cmd->add_option("--depths", depths, "Depths to train")->capture_default_str();
    cmd->add_option("--d", d, "Vector length")->capture_default_str();
    cmd->add_option("--kernel", kernel, "Kernel width")->capture_default_str();
    cmd->add_option("--pairs", train.cfg.pairs_per_epoch, "Pairs per epoch")->capture_default_str();
    cmd->add_option("--heldout", train.cfg.heldout_size, "Held-out pairs")->capture_default_str();
    cmd->add_option("--out", out, "CSV path");
    train.attach(cmd);
    cmd->callback([this] { run(); });
  }

  void run() {
    if (train.cfg.epochs < 1) throw UsageError("--epochs must be at least 1");
    GenConfig gen;
    gen.d = d;
    gen.seed = train.cfg.seed;
    const auto sweep = depth_sweep(depths, gen, train.cfg, kernel,
                                   [](std::size_t depth, const TrainReport& r) {
                                     std::printf("depth %zu ", depth);
                                     print_epoch(r);
                                   });
    ExperimentResult result;
    result.id = "depth-sweep-d" + std::to_string(d) + "-s" + std::to_string(train.cfg.seed);
    result.seed = train.cfg.seed;
    result.config = train.cfg.echo();
    result.config["d"] = std::to_string(d);
    result.config["kernel"] = std::to_string(kernel);
    const fs::path csv = output_path(out, result.id + ".csv");
    sweep.write_csv(csv, result.config);
    for (std::size_t depth : depths) {
      result.add("depth_" + std::to_string(depth) + "_heldout_l1", sweep.final_loss(depth));
    }
    result.curve_files.push_back(csv.string());
    finish(result);
  }
};

// ---- continuity-probe ----------------------------------------------------

struct ContinuityCmd {
  SorterFlags sorter;
  std::size_t d = 0;
  std::size_t index = 1;
  double step = 0.001;
  std::uint64_t seed = 1;
  std::string out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("continuity-probe",
                                   "Sweep one element over [-1, 1] and record its rank");
    sorter.attach(cmd);
    cmd->add_option("--d", d, "Vector length (defaults to the checkpoint's)");
    cmd->add_option("--index", index, "Swept element, 1-based")->capture_default_str();
    cmd->add_option("--step", step, "Sweep increment")->capture_default_str();
    cmd->add_option("--seed", seed, "Seed of the fixed vector")->capture_default_str();
    cmd->add_option("--out", out, "CSV path");
    cmd->callback([this] { run(); });
  }

  void run() {
    auto s = sorter.load();
    if (d == 0) d = s->input_dim();
    if (d == 0) throw UsageError("--d is required for the handcrafted sorter");
    if (index < 1 || index > d) throw UsageError("--index must be in [1, d]");
    const auto probe = continuity_probe(*s, d, index - 1, step, seed);

    ExperimentResult result;
    result.id = "continuity-probe-d" + std::to_string(d) + "-s" + std::to_string(seed);
    result.seed = seed;
    result.config = {{"sorter", sorter.describe()}, {"d", std::to_string(d)},
                     {"index", std::to_string(index)}, {"step", format_real(step)},
                     {"seed", std::to_string(seed)}};
    const fs::path csv = output_path(out, result.id + ".csv");
    probe.write_csv(csv, result.config);
    result.add("max_jump", probe.max_jump());
    result.add("jump_bound", 3.0 / static_cast<double>(d - 1));
    result.add("mean_abs_deviation", probe.mean_abs_deviation());
    result.add("predicted_at_minus_1", probe.predicted.front());
    result.add("predicted_at_plus_1", probe.predicted.back());
    result.curve_files.push_back(csv.string());
    finish(result);
  }
};

// ---- toys ------------------------------------------------------------------

void add_curves(ExperimentResult& result, const std::string& prefix, const TrainReport& r,
                CsvWriter& csv, double tag) {
  for (const auto& [name, curve] : r.metrics) result.add(prefix + name, curve.back());
  result.add(prefix + "heldout_loss", r.heldout_loss.back());
  for (std::size_t e = 0; e < r.heldout_loss.size(); ++e) {
    std::vector<double> row{tag, static_cast<double>(e + 1), r.train_loss[e], r.heldout_loss[e]};
    for (const auto& [name, curve] : r.metrics) row.push_back(curve[e]);
    csv.row(row);
  }
}

struct ToyCmd {
  ToyTask task;
  SorterFlags sorter;
  ToyOptions options;
  TrainFlags train;
  std::string out;

  explicit ToyCmd(ToyTask t)
      : task(t), options(toy_default_options(t)), train{toy_default_train_config(t)} {}

  void attach(CLI::App& app) {
    const std::string name = "toy-" + std::string(to_string(task));
    auto* cmd = app.add_subcommand(name, "Train a scorer on the " + std::string(to_string(task)) +
                                             " toy through a frozen sorter");
    sorter.attach(cmd);
    cmd->add_option("--d", options.group_size, "Group size (must match the sorter)")
        ->capture_default_str();
    cmd->add_option("--data-seed", options.data_seed, "Dataset seed")->capture_default_str();
    cmd->add_option("--train-items", options.train_items, "Training items")->capture_default_str();
    cmd->add_option("--test-items", options.test_items, "Test items")->capture_default_str();
    cmd->add_option("--noise", options.noise, "Label or view noise")->capture_default_str();
    if (task == ToyTask::map) {
      cmd->add_option("--classes", options.classes, "Number of classes")->capture_default_str();
    }
    cmd->add_option("--aux-weight", train.cfg.aux_weight, "Weight of the alignment loss")
        ->capture_default_str();
    cmd->add_option("--out", out, "CSV path for the metric curves");
    train.attach(cmd);
    cmd->callback([this] { run(); });
  }

  void run() {
    auto s = sorter.load();
    ExperimentResult result;
    result.id = "toy-" + std::string(to_string(task)) + "-d" + std::to_string(options.group_size) +
                "-s" + std::to_string(train.cfg.seed);
    result.seed = train.cfg.seed;
    result.config = train.cfg.echo();
    for (const auto& [k, v] : options.echo()) result.config["toy." + k] = v;
    result.config["sorter"] = sorter.describe();
    const fs::path csv_path = output_path(out, result.id + ".csv");

    std::vector<std::string> header{"objective", "epoch", "train_loss", "heldout_loss"};
    if (task == ToyTask::map) {
      const auto cmp = compare_map_objectives(*s, options, train.cfg);
      header.push_back("map");
      CsvWriter csv(csv_path, merge(result.config, {{"objective", "0=rank 1=cross_entropy"}}),
                    header);
      add_curves(result, "rank.", cmp.rank, csv, 0.0);
      add_curves(result, "cross_entropy.", cmp.cross_entropy, csv, 1.0);
      result.add("map_gap", cmp.rank.metrics.at("map").back() -
                                cmp.cross_entropy.metrics.at("map").back());
    } else {
      const auto report = train_downstream(task, *s, options, train.cfg, ToyObjective::rank,
                                           print_epoch);
      for (const auto& [name, curve] : report.metrics) header.push_back(name);
      CsvWriter csv(csv_path, merge(result.config, {{"objective", "0=rank"}}), header);
      add_curves(result, "", report, csv, 0.0);
    }
    result.curve_files.push_back(csv_path.string());
    finish(result);
  }
};

// ---- gen-data ------------------------------------------------------------

struct GenDataCmd {
  GenConfig gen{20};
  std::size_t n = 1000;
  std::string distribution = "mixture";
  std::string out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("gen-data", "Write synthetic score/rank pairs as CSV");
    cmd->add_option("--d", gen.d, "Vector length")->capture_default_str();
    cmd->add_option("--n", n, "Number of pairs")->capture_default_str();
    cmd->add_option("--seed", gen.seed, "Seed")->capture_default_str();
    cmd->add_option("--distribution", distribution, "uniform, normal, evenly_spaced or mixture")
        ->capture_default_str();
    cmd->add_option("--out", out, "CSV path");
    cmd->callback([this] { run(); });
  }

  void run() {
    gen.distribution = parse_distribution(distribution);
    BatchStream stream(gen, n);
    const ScoreBatch batch = stream.next();
    ExperimentResult result;
    result.id = "gen-data-d" + std::to_string(gen.d) + "-s" + std::to_string(gen.seed);
    result.seed = gen.seed;
    result.config = {{"d", std::to_string(gen.d)}, {"n", std::to_string(n)},
                     {"distribution", distribution}};
    const fs::path csv = output_path(out, result.id + ".csv");
    write_pairs_csv(csv, gen, batch);
    double mean = 0.0;
    for (double v : batch.scores.data()) mean += v;
    result.add("score_mean", mean / static_cast<double>(batch.scores.data().size()));
    result.curve_files.push_back(csv.string());
    finish(result);
  }
};

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Training allocates many short-lived buffers of a few sizes; keeping them
  // on the heap instead of mmap/munmap cuts system time several-fold.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
  CLI::App app{"Differentiable rank surrogates: pretraining, evaluation and toy experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  TrainSorterCmd train_sorter_cmd;
  EvalSorterCmd eval_sorter_cmd;
  DepthSweepCmd depth_sweep_cmd;
  ContinuityCmd continuity_cmd;
  ToyCmd toy_spearman(ToyTask::spearman), toy_map(ToyTask::map), toy_retrieval(ToyTask::retrieval);
  GenDataCmd gen_data_cmd;
  train_sorter_cmd.attach(app);
  eval_sorter_cmd.attach(app);
  depth_sweep_cmd.attach(app);
  continuity_cmd.attach(app);
  toy_spearman.attach(app);
  toy_map.attach(app);
  toy_retrieval.attach(app);
  gen_data_cmd.attach(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
