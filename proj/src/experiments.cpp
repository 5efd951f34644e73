#include "difrank/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include "difrank/rank_metrics.hpp"
#include "difrank/rng.hpp"
#include "json.hpp"

namespace difrank {

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::filesystem::path output_directory() {
  if (const char* dir = std::getenv("DIFRANK_OUT_DIR"); dir != nullptr && *dir != '\0') {
    return dir;
  }
  return std::filesystem::current_path();
}

double ExperimentResult::metric(std::string_view name) const {
  for (const MetricRow& m : metrics) {
    if (m.name == name) return m.value;
  }
  throw std::out_of_range("no metric named '" + std::string(name) + "'");
}

std::string ExperimentResult::table() const {
  std::size_t width = 0;
  for (const MetricRow& m : metrics) width = std::max(width, m.name.size());
  std::ostringstream out;
  for (const MetricRow& m : metrics) {
    out << m.name << std::string(width - m.name.size() + 2, ' ') << format_real(m.value) << '\n';
  }
  return out.str();
}

std::string ExperimentResult::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = kFormat;
  j["id"] = id;
  j["seed"] = seed;
  j["config"] = config;
  auto rows = nlohmann::ordered_json::array();
  for (const MetricRow& m : metrics) rows.push_back({{"name", m.name}, {"value", m.value}});
  j["metrics"] = rows;
  j["curve_files"] = curve_files;
  return j.dump(2);
}

void ExperimentResult::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json() << '\n';
}

CsvWriter::CsvWriter(const std::filesystem::path& path,
                     const std::map<std::string, std::string>& config,
                     const std::vector<std::string>& header)
    : out_(path), columns_(header.size()) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  out_ << '#';
  for (const auto& [k, v] : config) out_ << ' ' << k << '=' << v;
  out_ << '\n';
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void CsvWriter::row(std::span<const double> values) {
  if (values.size() != columns_) throw std::invalid_argument("csv row width mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    out_ << (i ? "," : "") << format_real(values[i]);
  }
  out_ << '\n';
}

ScoreBatch make_min_gap_batch(std::size_t d, std::size_t n, double gap, std::uint64_t seed) {
  if (d < 2 || n == 0 || !(gap > 0.0)) throw std::invalid_argument("min-gap batch: bad sizes");
  Rng rng(seed);
  const double span = gap * static_cast<double>(d - 1);
  ScoreBatch batch{Matrix(n, d), Matrix(n, d)};
  std::vector<double> row(d);
  for (std::size_t r = 0; r < n; ++r) {
    const double start = span < 2.0 ? rng.uniform(-1.0, 1.0 - span) : -span / 2.0;
    for (std::size_t k = 0; k < d; ++k) row[k] = start + gap * static_cast<double>(k);
    rng.shuffle(std::span<double>(row));
    const auto rank = exact_rank(row);
    std::copy(row.begin(), row.end(), batch.scores.row(r).begin());
    std::copy(rank.normalized.begin(), rank.normalized.end(), batch.normalized.row(r).begin());
  }
  return batch;
}

std::vector<SorterScore> compare_sorters(
    std::span<const std::pair<std::string, Sorter*>> sorters, const ScoreBatch& data) {
  std::vector<SorterScore> out;
  for (const auto& [name, sorter] : sorters) {
    out.push_back({name, evaluate_sorter_l1(*sorter, data)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SorterScore& a, const SorterScore& b) { return a.l1 < b.l1; });
  return out;
}

double DepthSweepResult::final_loss(std::size_t depth) const {
  const auto it = std::find(depths.begin(), depths.end(), depth);
  if (it == depths.end()) throw std::out_of_range("depth not in sweep");
  return reports[static_cast<std::size_t>(it - depths.begin())].heldout_loss.back();
}

void DepthSweepResult::write_csv(const std::filesystem::path& path,
                                 const std::map<std::string, std::string>& config) const {
  CsvWriter csv(path, config, {"depth", "epoch", "train_loss", "heldout_loss"});
  for (std::size_t k = 0; k < depths.size(); ++k) {
    const TrainReport& r = reports[k];
    for (std::size_t e = 0; e < r.heldout_loss.size(); ++e) {
      const double row[] = {static_cast<double>(depths[k]), static_cast<double>(e + 1),
                            r.train_loss[e], r.heldout_loss[e]};
      csv.row(row);
    }
  }
}

DepthSweepResult depth_sweep(std::span<const std::size_t> depths, const GenConfig& gen,
                             const TrainConfig& train, std::size_t kernel_width,
                             const std::function<void(std::size_t, const TrainReport&)>&
                                 on_epoch) {
  DepthSweepResult result;
  for (std::size_t depth : depths) {
    SorterArchitecture arch;
    arch.cnn.depth = depth;
    arch.cnn.kernel_width = kernel_width;
    EpochCallback cb;
    if (on_epoch) cb = [&](const TrainReport& r) { on_epoch(depth, r); };
    auto run = train_sorter(SorterKind::cnn, gen, train, arch, cb);
    result.depths.push_back(depth);
    result.reports.push_back(std::move(run.report));
  }
  return result;
}

double ContinuityProbe::max_jump() const {
  double worst = 0.0;
  for (std::size_t k = 1; k < predicted.size(); ++k) {
    worst = std::max(worst, std::abs(predicted[k] - predicted[k - 1]));
  }
  return worst;
}

double ContinuityProbe::mean_abs_deviation() const {
  double total = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) total += std::abs(predicted[k] - exact[k]);
  return total / static_cast<double>(predicted.size());
}

void ContinuityProbe::write_csv(const std::filesystem::path& path,
                                const std::map<std::string, std::string>& config) const {
  CsvWriter csv(path, config, {"value", "exact_rank", "predicted"});
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double row[] = {values[k], exact[k], predicted[k]};
    csv.row(row);
  }
}

ContinuityProbe continuity_probe(Sorter& sorter, std::size_t d, std::size_t index,
                                 double step, std::uint64_t seed) {
  if (d < 2 || index >= d) throw std::invalid_argument("continuity probe: index out of range");
  if (!(step > 0.0) || step > 2.0) throw std::invalid_argument("continuity probe: step must be in (0, 2]");
  Rng rng(seed);
  std::vector<double> base(d);
  for (double& v : base) v = rng.uniform(-1.0, 1.0);

  ContinuityProbe probe;
  probe.index = index;
  const auto steps = static_cast<std::size_t>(std::llround(2.0 / step));
  for (std::size_t k = 0; k <= steps; ++k) {
    probe.values.push_back(std::min(1.0, -1.0 + static_cast<double>(k) * step));
  }
  std::vector<double> batch;
  batch.reserve(probe.values.size() * d);
  for (double v : probe.values) {
    base[index] = v;
    batch.insert(batch.end(), base.begin(), base.end());
    probe.exact.push_back(exact_rank(base).normalized[index]);
  }
  NoGradScope no_grad;
  const Tensor out = predict_rank(sorter, Tensor::constant({probe.values.size(), d}, std::move(batch)));
  for (std::size_t k = 0; k < probe.values.size(); ++k) {
    probe.predicted.push_back(out[k * d + index]);
  }
  return probe;
}

MapComparison compare_map_objectives(Sorter& sorter, const ToyOptions& options,
                                     const TrainConfig& train) {
  return {train_downstream(ToyTask::map, sorter, options, train, ToyObjective::rank),
          train_downstream(ToyTask::map, sorter, options, train, ToyObjective::cross_entropy)};
}

}  // namespace difrank
