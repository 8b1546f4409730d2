#pragma once

#include "kinr/model.hpp"
#include "kinr/sampling.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace kinr {

struct DatasetConfig
{
  // "synthetic" generates phantoms; "directory" reads an index.json sample directory.
  std::string source = "synthetic";
  std::string path;
  int count = 10;
  int size = 64;
  std::int64_t seed = 0;
  // Held-out samples: synthesized after the training ones, or read from `val_path`.
  int val_count = 0;
  std::string val_path;

  bool operator==(DatasetConfig const &) const = default;
};

struct MaskConfig
{
  MaskFamily family = MaskFamily::cartesian1d;
  double ratio = 0.2;
  std::optional<double> acs_fraction; // family default when absent
  std::int64_t seed = 0;
  // Draw a fresh mask for every sample each epoch instead of one fixed mask per sample.
  bool resample = false;

  double acs() const { return acs_fraction ? *acs_fraction : default_acs_fraction(family); }
  bool operator==(MaskConfig const &) const = default;
};

struct StageSchedule
{
  std::array<int, 5> bounds{0, 20, 60, 100, 200};

  void validate() const;
  int first_epoch() const { return bounds[0]; }
  int end_epoch() const { return bounds[4]; }
  bool operator==(StageSchedule const &) const = default;
};

enum class LrDecay
{
  none,
  cosine,
};

struct TrainConfig
{
  StageSchedule schedule;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrDecay lr_decay = LrDecay::none;
  int batch_size = 4;
  std::int64_t seed = 0;
  // Validation metrics every n epochs (0 disables them).
  int validate_every = 1;
  int threads = 1;

  bool operator==(TrainConfig const &) const = default;
};

struct OutputConfig
{
  std::string dir = "runs/default";
  bool operator==(OutputConfig const &) const = default;
};

struct ExperimentConfig
{
  DatasetConfig dataset;
  MaskConfig mask;
  ModelConfig model;
  TrainConfig training;
  OutputConfig output;

  // Throws ConfigError with the offending key.
  void validate() const;
  bool operator==(ExperimentConfig const &) const = default;
};

// Unknown keys are rejected; missing keys take their defaults.
ExperimentConfig config_from_json(nlohmann::json const &doc);
nlohmann::json config_to_json(ExperimentConfig const &cfg);
nlohmann::json model_to_json(ModelConfig const &cfg);
ModelConfig model_from_json(nlohmann::json const &doc);

// Reads, applies KINR_OUTPUT_ROOT / KINR_THREADS, and validates.
ExperimentConfig load_config(std::filesystem::path const &path);
void apply_environment(ExperimentConfig &cfg);

std::filesystem::path output_dir(ExperimentConfig const &cfg);

} // namespace kinr
