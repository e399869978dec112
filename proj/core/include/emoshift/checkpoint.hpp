#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "emoshift/training.hpp"

namespace emoshift {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///
///     "EMSH" | u32 version | u32 record count
///     per record: u32 name length | name | u8 dtype (1 = f32) | u32 rank | u64 dims[rank] | u64 offset
///     f32 payloads, in record order, offsets relative to the first payload byte
///     u64 metadata length | metadata JSON (run config, lineage, history)
///
/// Wall-clock times are not stored, so identical runs give identical files.
std::string encode_checkpoint(const TrainedCheckpoint& ckpt, const std::string& run_config_json);

struct LoadedCheckpoint {
  TrainedCheckpoint checkpoint;
  std::string run_config_json;
};

LoadedCheckpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainedCheckpoint& ckpt,
                     const std::string& run_config_json);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace emoshift
