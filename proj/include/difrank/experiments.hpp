#ifndef DIFRANK_EXPERIMENTS_HPP_
#define DIFRANK_EXPERIMENTS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "difrank/downstream.hpp"
#include "difrank/sorters.hpp"
#include "difrank/synth_data.hpp"
#include "difrank/trainer.hpp"

// Experiment drivers shared by the command-line tool and the acceptance run.

namespace difrank {

/// %.17g, enough digits to round-trip a double.
std::string format_real(double v);

/// Directory for experiment outputs: $DIFRANK_OUT_DIR, else the working
/// directory.
std::filesystem::path output_directory();

struct MetricRow {
  std::string name;
  double value = 0.0;
};

struct ExperimentResult {
  static constexpr const char* kFormat = "difrank-experiment/1";

  std::string id;
  std::map<std::string, std::string> config;
  std::vector<MetricRow> metrics;
  std::vector<std::string> curve_files;
  std::uint64_t seed = 0;

  void add(std::string name, double value) { metrics.push_back({std::move(name), value}); }
  double metric(std::string_view name) const;
  /// "name value" lines at full precision.
  std::string table() const;
  std::string to_json() const;
  void write(const std::filesystem::path& path) const;
};

/// CSV file that starts with a "# key=value ..." config line and a header.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path,
            const std::map<std::string, std::string>& config,
            const std::vector<std::string>& header);
  void row(std::span<const double> values);

 private:
  std::ofstream out_;
  std::size_t columns_;
};

/// n shuffled grids {a + k * gap}, so every row has minimum pairwise gap
/// `gap`; a is drawn so the grid stays inside [-1, 1] when it fits.
ScoreBatch make_min_gap_batch(std::size_t d, std::size_t n, double gap, std::uint64_t seed);

struct SorterScore {
  std::string name;
  double l1 = 0.0;
};

/// Mean held-out L1 of each sorter, sorted ascending.
std::vector<SorterScore> compare_sorters(
    std::span<const std::pair<std::string, Sorter*>> sorters, const ScoreBatch& data);

struct DepthSweepResult {
  std::vector<std::size_t> depths;
  std::vector<TrainReport> reports;

  double final_loss(std::size_t depth) const;
  void write_csv(const std::filesystem::path& path,
                 const std::map<std::string, std::string>& config) const;
};

/// Trains one CNN sorter per depth on the same stream and budget.
DepthSweepResult depth_sweep(std::span<const std::size_t> depths, const GenConfig& gen,
                             const TrainConfig& train, std::size_t kernel_width = 3,
                             const std::function<void(std::size_t, const TrainReport&)>&
                                 on_epoch = {});

/// One element of a fixed random vector swept over [-1, 1].
struct ContinuityProbe {
  std::size_t index = 0;
  std::vector<double> values;
  std::vector<double> exact;      // normalized exact rank of the swept element
  std::vector<double> predicted;  // normalized sorter rank of the swept element

  double max_jump() const;
  double mean_abs_deviation() const;
  void write_csv(const std::filesystem::path& path,
                 const std::map<std::string, std::string>& config) const;
};

/// The other d - 1 entries are uniform on [-1, 1]. `index` is 0-based.
ContinuityProbe continuity_probe(Sorter& sorter, std::size_t d, std::size_t index,
                                 double step, std::uint64_t seed);

struct MapComparison {
  TrainReport rank;
  TrainReport cross_entropy;
};

/// The multi-label toy trained twice on identical data and initialization.
MapComparison compare_map_objectives(Sorter& sorter, const ToyOptions& options,
                                     const TrainConfig& train);

}  // namespace difrank

#endif  // DIFRANK_EXPERIMENTS_HPP_
