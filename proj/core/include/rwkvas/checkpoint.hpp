#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rwkvas/data.hpp"
#include "rwkvas/model.hpp"

namespace rwkvas {

// File layout:
//   8 bytes   magic "RWKVAS01"
//   8 bytes   little-endian uint64 length N of the metadata
//   N bytes   UTF-8 JSON metadata: format_version, config, vocab, parameter manifest
//             (name + shape, in payload order), optimizer info, rng_state
//   payload   little-endian float64 values of every manifest entry in order, followed by the
//             optimizer first and second moments (same order) when present

inline constexpr std::string_view kCheckpointMagic = "RWKVAS01";
inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizerSnapshot {
  long long step = 0;
  std::vector<std::vector<double>> first_moments;
  std::vector<std::vector<double>> second_moments;
};

struct CheckpointExtras {
  std::optional<Vocabulary> vocab;
  std::optional<OptimizerSnapshot> optimizer;
  std::string rng_state;
};

struct LoadedCheckpoint {
  RwkvModel model;
  CheckpointExtras extras;
};

void write_checkpoint(std::ostream& out, const RwkvModel& model, const CheckpointExtras& extras = {});
LoadedCheckpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const RwkvModel& model, const CheckpointExtras& extras = {});
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rwkvas
