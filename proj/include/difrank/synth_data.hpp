#ifndef DIFRANK_SYNTH_DATA_HPP_
#define DIFRANK_SYNTH_DATA_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "difrank/matrix.hpp"
#include "difrank/rank_metrics.hpp"
#include "difrank/rng.hpp"

namespace difrank {

enum class Distribution { uniform, normal, evenly_spaced, mixture };

std::string_view to_string(Distribution d);
Distribution parse_distribution(std::string_view name);

/// Generator settings.
///
/// `mixture` draws each vector's family at random with `mixture_weights`
/// over {uniform, normal, evenly_spaced, segmented}. A segmented vector is
/// cut at random breakpoints into 2 or 3 contiguous pieces, each filled from
/// a uniformly chosen base family; normal pieces are clipped to [-3, 3] and
/// divided by 3.
struct GenConfig {
  std::size_t d = 100;
  std::uint64_t seed = 0;
  Distribution distribution = Distribution::mixture;
  std::array<double, 4> mixture_weights{0.25, 0.25, 0.25, 0.25};

  void validate() const;
};

/// One score vector. Resamples until the vector has no exact duplicates.
std::vector<double> sample_scores(const GenConfig& cfg, Rng& rng);

struct SyntheticPair {
  std::vector<double> scores;
  RankVector rank;
};

SyntheticPair make_pair(const GenConfig& cfg, Rng& rng);
/// Pair drawn from a fresh stream seeded with cfg.seed.
SyntheticPair make_pair(const GenConfig& cfg);

struct ScoreBatch {
  Matrix scores;      // B x d
  Matrix normalized;  // B x d, normalized exact ranks of each row
};

/// Endless deterministic stream of batches.
class BatchStream {
 public:
  BatchStream(GenConfig cfg, std::size_t batch_size);

  ScoreBatch next();
  /// Next batch with an explicit size (e.g. the tail of an epoch).
  ScoreBatch next(std::size_t batch_size);

  const GenConfig& config() const { return cfg_; }
  std::size_t batch_size() const { return batch_size_; }

 private:
  GenConfig cfg_;
  std::size_t batch_size_;
  Rng rng_;
};

/// Fixed set of n pairs drawn from an rng stream split off cfg.seed, so it
/// never overlaps a training stream started from the same seed.
ScoreBatch make_heldout(const GenConfig& cfg, std::size_t n);

/// CSV with a config comment line, a header row, then one row per pair:
/// d scores followed by d normalized ranks.
void write_pairs_csv(const std::filesystem::path& path, const GenConfig& cfg,
                     const ScoreBatch& batch);

inline constexpr std::uint64_t kHeldoutStream = 0x68656c646f7574ULL;

}  // namespace difrank

#endif  // DIFRANK_SYNTH_DATA_HPP_
