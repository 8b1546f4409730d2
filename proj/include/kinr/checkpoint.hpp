#pragma once

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace kinr {

inline constexpr int kCheckpointFormatVersion = 1;

struct TensorRecord
{
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

// Everything needed to continue training bit-for-bit: parameters, optimizer moments and
// step counts, the next epoch, the data-order RNG and the configuration that produced it.
struct Checkpoint
{
  nlohmann::json config;
  int epoch = 0;
  std::int64_t step = 0;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
  std::vector<TensorRecord> parameters;
  std::vector<TensorRecord> adam_m;
  std::vector<TensorRecord> adam_v;
  std::map<std::string, std::int64_t> adam_steps;
};

// Directory with tensors.bin (little-endian float32, concatenated) and manifest.json. The
// directory is staged and renamed into place.
void save_checkpoint(Checkpoint const &ckpt, std::filesystem::path const &dir);
// IoError when missing, FormatVersionError on a version mismatch, DataError when corrupt.
Checkpoint load_checkpoint(std::filesystem::path const &dir);

} // namespace kinr
