#include "difrank/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace difrank {

std::string_view to_string(Distribution d) {
  switch (d) {
    case Distribution::uniform: return "uniform";
    case Distribution::normal: return "normal";
    case Distribution::evenly_spaced: return "evenly_spaced";
    case Distribution::mixture: return "mixture";
  }
  return "unknown";
}

Distribution parse_distribution(std::string_view name) {
  for (Distribution d : {Distribution::uniform, Distribution::normal,
                         Distribution::evenly_spaced, Distribution::mixture}) {
    if (to_string(d) == name) return d;
  }
  throw std::invalid_argument("unknown distribution '" + std::string(name) + "'");
}

void GenConfig::validate() const {
  if (d < 2) throw std::invalid_argument("GenConfig: d must be at least 2");
  double total = 0.0;
  for (double w : mixture_weights) {
    if (!(w >= 0.0)) {
      throw std::invalid_argument("GenConfig: mixture weights must be >= 0");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("GenConfig: mixture weights must sum to 1");
  }
}

namespace {

enum class Family { uniform, normal, evenly_spaced, segmented };

void fill_uniform(Rng& rng, std::span<double> out) {
  for (double& v : out) v = rng.uniform(-1.0, 1.0);
}

void fill_normal(Rng& rng, std::span<double> out, bool bounded) {
  for (double& v : out) {
    v = rng.normal();
    if (bounded) v = std::clamp(v, -3.0, 3.0) / 3.0;
  }
}

// n evenly spaced values over a random sub-range [a, b] of [-1, 1], shuffled.
void fill_evenly_spaced(Rng& rng, std::span<double> out) {
  const double u = rng.uniform(-1.0, 1.0);
  const double v = rng.uniform(-1.0, 1.0);
  const double a = std::min(u, v);
  const double b = std::max(u, v);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = n == 1 ? a
                    : a + (b - a) * static_cast<double>(i) /
                              static_cast<double>(n - 1);
  }
  rng.shuffle(out);
}

void fill_segmented(Rng& rng, std::span<double> out) {
  const std::size_t d = out.size();
  const std::size_t pieces = std::min<std::size_t>(d, 2 + rng.below(2));
  // Distinct cut points in [1, d - 1].
  std::vector<std::size_t> cuts;
  while (cuts.size() + 1 < pieces) {
    const std::size_t c = 1 + rng.below(d - 1);
    if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(d);
  std::size_t begin = 0;
  for (std::size_t end : cuts) {
    std::span<double> piece = out.subspan(begin, end - begin);
    switch (rng.below(3)) {
      case 0: fill_uniform(rng, piece); break;
      case 1: fill_normal(rng, piece, /*bounded=*/true); break;
      default: fill_evenly_spaced(rng, piece); break;
    }
    begin = end;
  }
}

Family pick_family(const GenConfig& cfg, Rng& rng) {
  switch (cfg.distribution) {
    case Distribution::uniform: return Family::uniform;
    case Distribution::normal: return Family::normal;
    case Distribution::evenly_spaced: return Family::evenly_spaced;
    case Distribution::mixture: break;
  }
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    acc += cfg.mixture_weights[k];
    if (u < acc) return static_cast<Family>(k);
  }
  // Rounding left u above the cumulative total: take the last nonzero weight.
  for (std::size_t k = 4; k-- > 0;) {
    if (cfg.mixture_weights[k] > 0.0) return static_cast<Family>(k);
  }
  return Family::uniform;
}

bool has_duplicates(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

}  // namespace

std::vector<double> sample_scores(const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<double> out(cfg.d);
  do {
    switch (pick_family(cfg, rng)) {
      case Family::uniform: fill_uniform(rng, out); break;
      case Family::normal: fill_normal(rng, out, /*bounded=*/false); break;
      case Family::evenly_spaced: fill_evenly_spaced(rng, out); break;
      case Family::segmented: fill_segmented(rng, out); break;
    }
  } while (has_duplicates(out));
  return out;
}

SyntheticPair make_pair(const GenConfig& cfg, Rng& rng) {
  SyntheticPair pair;
  pair.scores = sample_scores(cfg, rng);
  pair.rank = exact_rank(pair.scores);
  return pair;
}

SyntheticPair make_pair(const GenConfig& cfg) {
  Rng rng(cfg.seed);
  return make_pair(cfg, rng);
}

BatchStream::BatchStream(GenConfig cfg, std::size_t batch_size)
    : cfg_(cfg), batch_size_(batch_size), rng_(cfg.seed) {
  cfg_.validate();
  if (batch_size_ == 0) {
    throw std::invalid_argument("BatchStream: batch size must be positive");
  }
}

ScoreBatch BatchStream::next() { return next(batch_size_); }

ScoreBatch BatchStream::next(std::size_t batch_size) {
  ScoreBatch batch{Matrix(batch_size, cfg_.d), Matrix(batch_size, cfg_.d)};
  for (std::size_t b = 0; b < batch_size; ++b) {
    SyntheticPair pair = make_pair(cfg_, rng_);
    std::copy(pair.scores.begin(), pair.scores.end(), batch.scores.row(b).begin());
    std::copy(pair.rank.normalized.begin(), pair.rank.normalized.end(),
              batch.normalized.row(b).begin());
  }
  return batch;
}

ScoreBatch make_heldout(const GenConfig& cfg, std::size_t n) {
  GenConfig held = cfg;
  held.seed = Rng(cfg.seed).split(kHeldoutStream).next();
  BatchStream stream(held, std::max<std::size_t>(n, 1));
  return stream.next(n);
}

void write_pairs_csv(const std::filesystem::path& path, const GenConfig& cfg,
                     const ScoreBatch& batch) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# d=" << cfg.d << " seed=" << cfg.seed
      << " distribution=" << to_string(cfg.distribution) << " weights=";
  for (std::size_t k = 0; k < 4; ++k) {
    out << (k ? "," : "") << cfg.mixture_weights[k];
  }
  out << " rows=" << batch.scores.rows() << '\n';
  for (std::size_t i = 0; i < cfg.d; ++i) out << (i ? "," : "") << "score_" << i;
  for (std::size_t i = 0; i < cfg.d; ++i) out << ",rank_" << i;
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < batch.scores.rows(); ++r) {
    for (std::size_t i = 0; i < cfg.d; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", batch.scores(r, i));
      out << (i ? "," : "") << buf;
    }
    for (std::size_t i = 0; i < cfg.d; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", batch.normalized(r, i));
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace difrank
