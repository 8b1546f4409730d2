#pragma once

#include "kinr/checkpoint.hpp"
#include "kinr/config.hpp"
#include "kinr/datasets.hpp"
#include "kinr/metrics.hpp"
#include "kinr/model.hpp"

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace kinr {

// Stage j in 1..4 such that epoch lies in [E_{j-1}, E_j).
int stage_for_epoch(int epoch, StageSchedule const &sched);

template <typename T>
struct Targets
{
  nn::Var<T> k_lr;
  nn::Var<T> i_lr;
  nn::Var<T> k;
  nn::Var<T> i;
};

template <typename T>
Targets<T> make_targets(TrainingExample const &ex);

// MSE(k_target, k_hat) + MSE(i_target, i_hat).
template <typename T>
nn::Var<T> loss_component(nn::Var<T> const &k_hat, nn::Var<T> const &i_hat, nn::Var<T> const &k_target,
                          nn::Var<T> const &i_target);
// L_i for module output i (1-based); the first is compared with the low-resolution targets.
template <typename T>
nn::Var<T> loss_component(int i, NetworkOutputs<T> const &out, Targets<T> const &targets);

template <typename T>
struct StagedLoss
{
  nn::Var<T> total;
  std::array<std::optional<double>, 4> terms;
};

// Sum of L_i over i <= stage for every module that ran.
template <typename T>
StagedLoss<T> staged_loss(int stage, NetworkOutputs<T> const &out, Targets<T> const &targets);

// Whether stage j trains anything under the model's ablation.
bool stage_active(int stage, ModelConfig const &cfg);
// Modules whose parameters are updated at stage j.
std::vector<Module> active_modules(int stage, ModelConfig const &cfg);

struct AdamSettings
{
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with per-tensor step counts, so a module that joins late gets correct bias correction.
class Adam
{
public:
  struct Slot
  {
    std::vector<float> m;
    std::vector<float> v;
    std::int64_t step = 0;
  };

  explicit Adam(AdamSettings s = {})
    : s_{s}
  {
  }

  // Updates every listed parameter from its accumulated gradient (zero if none) and clears it.
  void step(nn::NamedList<float> const &params, double lr);

  std::map<std::string, Slot> &slots() { return slots_; }
  std::map<std::string, Slot> const &slots() const { return slots_; }

private:
  AdamSettings s_;
  std::map<std::string, Slot> slots_;
};

struct LossValues
{
  std::array<std::optional<double>, 4> terms;
  double total = 0.0;
};

struct EpochRecord
{
  int epoch = 0;
  int stage = 0;
  bool skipped = false;
  LossValues loss;
  std::optional<double> val_psnr;
  std::optional<double> val_ssim;
  std::optional<double> val_nmse;
  double wall_s = 0.0;

  nlohmann::json to_json() const;
};

// De-normalized magnitude images of one reconstruction.
struct Reconstruction
{
  KSpace kspace;       // final k-space estimate, de-normalized
  ComplexImage image;  // final image estimate, de-normalized
  RealImage magnitude;
  RealImage reference;
  RealImage zero_filled;
  std::optional<RealImage> lr_upsampled; // first-stage image brought back to full size
};

Reconstruction reconstruct(Network<float> const &net, TrainingExample const &ex, int stage = 4);

struct EvaluationRow
{
  std::string id;
  MetricReport model;
  MetricReport zero_filled;
  std::optional<MetricReport> lr_upsampled;
};

// Evaluates every example, using up to `threads` workers; rows keep the input order.
std::vector<EvaluationRow> evaluate_examples(Network<float> const &net, std::vector<TrainingExample> const &examples,
                                             int stage = 4, int threads = 1);

// Mask used for sample `index` of a split (split 0 = training, 1 = held-out).
// Model configuration stored in a checkpoint, and a network holding its weights.
ModelConfig checkpoint_model(Checkpoint const &ckpt);
void load_parameters(Network<float> &net, Checkpoint const &ckpt);
Network<float> network_from_checkpoint(Checkpoint const &ckpt);

SamplingMask sample_mask(MaskConfig const &cfg, int height, int width, int split, std::size_t index, int epoch = 0);

class Trainer
{
public:
  Trainer(ExperimentConfig cfg, std::vector<MRISample> train, std::vector<MRISample> val = {});

  ExperimentConfig const &config() const { return cfg_; }
  Network<float> &network() { return net_; }
  Network<float> const &network() const { return net_; }
  Adam const &optimizer() const { return adam_; }
  int epoch() const { return epoch_; }
  std::int64_t steps() const { return steps_; }
  bool finished() const { return epoch_ >= cfg_.training.schedule.end_epoch(); }
  std::vector<TrainingExample> const &training_examples() const { return train_; }
  std::vector<TrainingExample> const &validation_examples() const { return val_; }

  // One optimizer step at `stage` on the given examples (loss averaged over the batch).
  LossValues step(int stage, std::span<TrainingExample const *const> batch);
  // Runs the next epoch. Throws NumericalError on a non-finite loss.
  EpochRecord run_epoch();

  Checkpoint checkpoint() const;
  // Throws IncompatibleCheckpoint when the model configuration or tensor layout differs.
  void restore(Checkpoint const &ckpt);

  double learning_rate(int epoch) const;

private:
  void rebuild_training_masks(int epoch);

  ExperimentConfig cfg_;
  std::vector<MRISample> train_samples_;
  std::vector<TrainingExample> train_;
  std::vector<TrainingExample> val_;
  Network<float> net_;
  Adam adam_;
  CounterRng rng_;
  int epoch_ = 0;
  std::int64_t steps_ = 0;
};

// Builds the training and held-out samples a configuration describes.
std::pair<std::vector<MRISample>, std::vector<MRISample>> load_datasets(ExperimentConfig const &cfg);

// Full training run with on-disk side effects: config.json, metrics.jsonl, checkpoints at
// stage ends and at the end, summary.json. Resumes from `resume` when given.
struct TrainSummary
{
  int epochs_run = 0;
  std::optional<EpochRecord> last;
  std::filesystem::path final_checkpoint;
};

TrainSummary run_training(ExperimentConfig const &cfg, std::optional<std::filesystem::path> const &resume = {},
                          std::function<void(EpochRecord const &)> const &on_epoch = {});

} // namespace kinr
