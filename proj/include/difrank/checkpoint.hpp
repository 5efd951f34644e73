#ifndef DIFRANK_CHECKPOINT_HPP_
#define DIFRANK_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "difrank/sorters.hpp"

// Sorter checkpoint file, format version 1.
//
// A text header of newline-terminated lines, then named binary arrays:
//
//   difrank-sorter-checkpoint 1
//   kind <handcrafted|cnn|lstm>
//   d <int>
//   hparam <key> <value>          (zero or more)
//   meta <key> <value>            (zero or more; epochs, final_loss, seed, ...)
//   arrays <count>
//   array <name> <ndim> <dim_0> ... <dim_{ndim-1}>
//   <prod(dims) IEEE-754 binary64 values, little-endian, row-major>
//   ... one "array" line plus payload per array ...
//   end
//
// Real-valued header fields are printed with 17 significant digits, which
// round-trips binary64 exactly.

namespace difrank {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointKindError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr int kCheckpointVersion = 1;

struct TrainingMetadata {
  std::size_t epochs = 0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
};

struct CheckpointArray {
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

struct SorterCheckpoint {
  int version = kCheckpointVersion;
  SorterKind kind = SorterKind::handcrafted;
  std::size_t d = 0;
  std::map<std::string, std::string> hyperparameters;
  std::map<std::string, std::string> metadata;
  std::map<std::string, CheckpointArray> arrays;

  TrainingMetadata training() const;
};

SorterCheckpoint make_checkpoint(Sorter& sorter, const TrainingMetadata& meta);

void save_checkpoint(Sorter& sorter, const std::filesystem::path& path,
                     const TrainingMetadata& meta = {});
void write_checkpoint(const SorterCheckpoint& ckpt,
                      const std::filesystem::path& path);
SorterCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the sorter a checkpoint describes.
std::unique_ptr<Sorter> make_sorter(const SorterCheckpoint& ckpt);

/// Loads a sorter, failing with CheckpointKindError when `expected` is given
/// and the file holds another kind.
std::unique_ptr<Sorter> load_sorter(const std::filesystem::path& path,
                                    std::optional<SorterKind> expected = {});

}  // namespace difrank

#endif  // DIFRANK_CHECKPOINT_HPP_
