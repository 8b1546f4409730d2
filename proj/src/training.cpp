#include "kinr/training.hpp"

#include "kinr/error.hpp"
#include "kinr/io.hpp"
#include "kinr/nn/bridge.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <set>
#include <thread>

namespace kinr {

using nn::Var;
using nlohmann::json;

int stage_for_epoch(int epoch, StageSchedule const &sched)
{
  sched.validate();
  if (epoch < sched.bounds[0] || epoch >= sched.bounds[4]) {
    throw DomainError("epoch " + std::to_string(epoch) + " lies outside the schedule [" + std::to_string(sched.bounds[0]) +
                      ", " + std::to_string(sched.bounds[4]) + ")");
  }
  for (int j = 1; j <= 4; ++j) {
    if (epoch < sched.bounds[j]) {
      return j;
    }
  }
  return 4;
}

template <typename T>
Targets<T> make_targets(TrainingExample const &ex)
{
  return {nn::grid_constant<T>(ex.k_lr), nn::grid_constant<T>(ex.i_lr), nn::grid_constant<T>(ex.sample.k_full),
          nn::grid_constant<T>(ex.sample.image_full)};
}

template <typename T>
Var<T> loss_component(Var<T> const &k_hat, Var<T> const &i_hat, Var<T> const &k_target, Var<T> const &i_target)
{
  if (k_hat.shape() != k_target.shape() || i_hat.shape() != i_target.shape()) {
    throw ShapeError("loss inputs " + nn::to_string(k_hat.shape()) + " / " + nn::to_string(i_hat.shape()) +
                     " do not match targets " + nn::to_string(k_target.shape()) + " / " + nn::to_string(i_target.shape()));
  }
  return nn::add(nn::mse(k_hat, k_target), nn::mse(i_hat, i_target));
}

template <typename T>
Var<T> loss_component(int i, NetworkOutputs<T> const &out, Targets<T> const &targets)
{
  if (i < 1 || i > 4) {
    throw DomainError("loss component index must be 1..4");
  }
  auto const &stage = out.stages[static_cast<std::size_t>(i - 1)];
  if (!stage) {
    throw Error("module output " + std::to_string(i) + " was not computed");
  }
  if (i == 1) {
    return loss_component(stage->k, stage->i, targets.k_lr, targets.i_lr);
  }
  return loss_component(stage->k, stage->i, targets.k, targets.i);
}

template <typename T>
StagedLoss<T> staged_loss(int stage, NetworkOutputs<T> const &out, Targets<T> const &targets)
{
  if (stage < 1 || stage > 4) {
    throw DomainError("stage must be 1..4");
  }
  StagedLoss<T> result;
  for (int i = 1; i <= stage; ++i) {
    if (!out.stages[static_cast<std::size_t>(i - 1)]) {
      continue;
    }
    auto const li = loss_component(i, out, targets);
    result.terms[static_cast<std::size_t>(i - 1)] = static_cast<double>(li.item());
    result.total = result.total.defined() ? nn::add(result.total, li) : li;
  }
  if (!result.total.defined()) {
    throw Error("no module output contributes to the stage-" + std::to_string(stage) + " loss");
  }
  return result;
}

bool stage_active(int stage, ModelConfig const &cfg) { return cfg.enabled(all_modules.at(static_cast<std::size_t>(stage - 1))); }

std::vector<Module> active_modules(int stage, ModelConfig const &cfg)
{
  std::vector<Module> mods;
  for (auto m : all_modules) {
    if (stage_of(m) <= stage && cfg.enabled(m)) {
      mods.push_back(m);
    }
  }
  return mods;
}

void Adam::step(nn::NamedList<float> const &params, double lr)
{
  for (auto const &[name, p] : params) {
    auto &slot = slots_[name];
    auto *node = p.node();
    std::size_t const n = node->value.size();
    if (slot.m.size() != n) {
      slot.m.assign(n, 0.0f);
      slot.v.assign(n, 0.0f);
    }
    ++slot.step;
    double const bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(slot.step));
    double const bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(slot.step));
    bool const has_grad = node->grad.size() == n;
    for (std::size_t i = 0; i < n; ++i) {
      double const g = has_grad ? node->grad[i] : 0.0;
      double const m = s_.beta1 * slot.m[i] + (1.0 - s_.beta1) * g;
      double const v = s_.beta2 * slot.v[i] + (1.0 - s_.beta2) * g * g;
      slot.m[i] = static_cast<float>(m);
      slot.v[i] = static_cast<float>(v);
      double const mhat = static_cast<double>(slot.m[i]) / bc1;
      double const vhat = static_cast<double>(slot.v[i]) / bc2;
      node->value[i] = static_cast<float>(node->value[i] - lr * mhat / (std::sqrt(vhat) + s_.eps));
    }
    node->grad.clear();
  }
}

json EpochRecord::to_json() const
{
  auto opt = [](std::optional<double> const &v) { return v ? json(*v) : json(nullptr); };
  json j{{"epoch", epoch},
         {"stage", stage},
         {"l1", opt(loss.terms[0])},
         {"l2", opt(loss.terms[1])},
         {"l3", opt(loss.terms[2])},
         {"l4", opt(loss.terms[3])},
         {"total", skipped ? json(nullptr) : json(loss.total)},
         {"val_psnr", opt(val_psnr)},
         {"val_ssim", opt(val_ssim)},
         {"val_nmse", opt(val_nmse)},
         {"wall_s", wall_s}};
  if (skipped) {
    j["skipped"] = true;
  }
  return j;
}

namespace {

RealImage scaled_magnitude(ComplexGrid const &g, double scale)
{
  auto m = magnitude(g);
  for (auto &v : m.data()) {
    v *= scale;
  }
  return m;
}

} // namespace

Reconstruction reconstruct(Network<float> const &net, TrainingExample const &ex, int stage)
{
  nn::NoGradGuard guard;
  auto const out = net.forward(ex, stage);
  double const scale = ex.sample.k_full.scale();
  auto const &fin = out.final();
  Reconstruction r;
  r.image = nn::to_grid<ComplexImage>(fin.i);
  r.kspace = nn::to_grid<KSpace>(fin.k);
  if (r.image.height() != ex.sample.image_full.height()) {
    // Only the low-resolution stage has run; bring its estimate up to the reference grid.
    r.image = upsample2(r.image);
    r.kspace = fft2c(r.image);
  }
  for (auto &v : r.kspace.data()) {
    v *= scale;
  }
  for (auto &v : r.image.data()) {
    v *= scale;
  }
  r.magnitude = magnitude(r.image);
  r.reference = scaled_magnitude(ex.sample.image_full, scale);
  r.zero_filled = scaled_magnitude(ex.i_s, scale);
  if (out.stages[0]) {
    r.lr_upsampled = scaled_magnitude(upsample2(nn::to_grid<ComplexImage>(out.stages[0]->i)), scale);
  }
  return r;
}

std::vector<EvaluationRow> evaluate_examples(Network<float> const &net, std::vector<TrainingExample> const &examples,
                                             int stage, int threads)
{
  std::vector<EvaluationRow> rows(examples.size());
  auto work = [&](std::size_t i) {
    auto const r = reconstruct(net, examples[i], stage);
    EvaluationRow row;
    row.id = examples[i].sample.id;
    row.model = evaluate(r.magnitude, r.reference);
    row.zero_filled = evaluate(r.zero_filled, r.reference);
    if (r.lr_upsampled) {
      row.lr_upsampled = evaluate(*r.lr_upsampled, r.reference);
    }
    rows[i] = std::move(row);
  };
  int const workers = std::max(1, std::min<int>(threads, static_cast<int>(examples.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < examples.size(); ++i) {
      work(i);
    }
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < examples.size(); i = next++) {
        try {
          work(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) {
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto &t : pool) {
    t.join();
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
  return rows;
}

SamplingMask sample_mask(MaskConfig const &cfg, int height, int width, int split, std::size_t index, int epoch)
{
  auto const key = CounterRng::derive({static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(split), index,
                                       static_cast<std::uint64_t>(cfg.resample ? epoch : 0)});
  return make_mask(cfg.family, height, width, cfg.ratio, cfg.acs(), static_cast<std::int64_t>(key >> 1));
}

Trainer::Trainer(ExperimentConfig cfg, std::vector<MRISample> train, std::vector<MRISample> val)
  : cfg_{std::move(cfg)}
  , train_samples_{std::move(train)}
  , net_{(cfg_.validate(), cfg_.model)}
  , adam_{{cfg_.training.beta1, cfg_.training.beta2, cfg_.training.eps}}
  , rng_{CounterRng::derive({static_cast<std::uint64_t>(cfg_.training.seed), 0x7472616eULL})}
  , epoch_{cfg_.training.schedule.first_epoch()}
{
  if (train_samples_.empty()) {
    throw ConfigError("training set is empty");
  }
  rebuild_training_masks(epoch_);
  for (std::size_t i = 0; i < val.size(); ++i) {
    auto const &s = val[i];
    val_.push_back(build_example(s, sample_mask(cfg_.mask, s.k_full.height(), s.k_full.width(), 1, i)));
  }
}

void Trainer::rebuild_training_masks(int epoch)
{
  train_.clear();
  train_.reserve(train_samples_.size());
  for (std::size_t i = 0; i < train_samples_.size(); ++i) {
    auto const &s = train_samples_[i];
    train_.push_back(build_example(s, sample_mask(cfg_.mask, s.k_full.height(), s.k_full.width(), 0, i, epoch)));
  }
}

double Trainer::learning_rate(int epoch) const
{
  double const lr = cfg_.training.learning_rate;
  if (cfg_.training.lr_decay == LrDecay::none) {
    return lr;
  }
  auto const &b = cfg_.training.schedule.bounds;
  double const span = std::max(1, b[4] - b[0]);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (epoch - b[0]) / span));
}

LossValues Trainer::step(int stage, std::span<TrainingExample const *const> batch)
{
  if (batch.empty()) {
    throw DomainError("empty batch");
  }
  nn::NamedList<float> params;
  for (auto m : active_modules(stage, cfg_.model)) {
    auto part = net_.parameters(m);
    params.insert(params.end(), part.begin(), part.end());
  }
  for (auto &[name, p] : params) {
    p.zero_grad();
  }
  LossValues values;
  float const weight = 1.0f / static_cast<float>(batch.size());
  for (auto const *ex : batch) {
    auto const out = net_.forward(*ex, stage);
    auto const loss = staged_loss(stage, out, make_targets<float>(*ex));
    double const total = loss.total.item();
    if (!std::isfinite(total)) {
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch_) + ", stage " + std::to_string(stage) +
                           ", sample " + ex->sample.id);
    }
    nn::backward(nn::scale(loss.total, weight));
    values.total += total / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < 4; ++i) {
      if (loss.terms[i]) {
        values.terms[i] = values.terms[i].value_or(0.0) + *loss.terms[i] / static_cast<double>(batch.size());
      }
    }
  }
  adam_.step(params, learning_rate(epoch_));
  ++steps_;
  return values;
}

EpochRecord Trainer::run_epoch()
{
  if (finished()) {
    throw Error("training schedule already complete");
  }
  auto const t0 = std::chrono::steady_clock::now();
  EpochRecord rec;
  rec.epoch = epoch_;
  rec.stage = stage_for_epoch(epoch_, cfg_.training.schedule);
  if (!stage_active(rec.stage, cfg_.model)) {
    rec.skipped = true;
    ++epoch_;
    return rec;
  }
  if (cfg_.mask.resample) {
    rebuild_training_masks(epoch_);
  }
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng_.below(i)]);
  }
  auto const bs = static_cast<std::size_t>(cfg_.training.batch_size);
  std::vector<TrainingExample const *> batch;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    batch.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
      batch.push_back(&train_[order[i]]);
    }
    auto const v = step(rec.stage, batch);
    double const w = static_cast<double>(batch.size()) / static_cast<double>(order.size());
    rec.loss.total += v.total * w;
    for (std::size_t i = 0; i < 4; ++i) {
      if (v.terms[i]) {
        rec.loss.terms[i] = rec.loss.terms[i].value_or(0.0) + *v.terms[i] * w;
      }
    }
  }
  ++epoch_;
  int const every = cfg_.training.validate_every;
  bool const last = finished();
  if (!val_.empty() && every > 0 && ((epoch_ - cfg_.training.schedule.first_epoch()) % every == 0 || last)) {
    auto const rows = evaluate_examples(net_, val_, rec.stage, cfg_.training.threads);
    std::vector<double> p, s, n;
    for (auto const &r : rows) {
      p.push_back(r.model.psnr_db);
      s.push_back(r.model.ssim);
      n.push_back(r.model.nmse);
    }
    rec.val_psnr = mean_std(p).mean;
    rec.val_ssim = mean_std(s).mean;
    rec.val_nmse = mean_std(n).mean;
  }
  rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

Checkpoint Trainer::checkpoint() const
{
  Checkpoint c;
  c.config = config_to_json(cfg_);
  c.epoch = epoch_;
  c.step = steps_;
  c.rng_key = rng_.key();
  c.rng_counter = rng_.counter();
  for (auto const &[name, p] : net_.parameters()) {
    c.parameters.push_back({name, p.shape(), std::vector<float>(p.value().begin(), p.value().end())});
    if (auto it = adam_.slots().find(name); it != adam_.slots().end()) {
      c.adam_m.push_back({name, p.shape(), it->second.m});
      c.adam_v.push_back({name, p.shape(), it->second.v});
      c.adam_steps[name] = it->second.step;
    }
  }
  return c;
}

ModelConfig checkpoint_model(Checkpoint const &ckpt)
{
  try {
    return model_from_json(ckpt.config.at("model"));
  } catch (nlohmann::json::exception const &) {
    throw IncompatibleCheckpoint("checkpoint has no model configuration");
  } catch (ConfigError const &e) {
    throw IncompatibleCheckpoint(std::string("checkpoint model configuration is invalid: ") + e.what());
  }
}

void load_parameters(Network<float> &net, Checkpoint const &ckpt)
{
  auto const saved = checkpoint_model(ckpt);
  if (!(saved == net.config())) {
    throw IncompatibleCheckpoint("checkpoint model configuration " + model_to_json(saved).dump() +
                                 " does not match the requested " + model_to_json(net.config()).dump());
  }
  auto params = net.parameters();
  if (params.size() != ckpt.parameters.size()) {
    throw IncompatibleCheckpoint("checkpoint holds " + std::to_string(ckpt.parameters.size()) + " tensors, model has " +
                                 std::to_string(params.size()));
  }
  std::map<std::string, TensorRecord const *> by_name;
  for (auto const &t : ckpt.parameters) {
    by_name[t.name] = &t;
  }
  for (auto &[name, p] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->shape != p.shape()) {
      throw IncompatibleCheckpoint("tensor " + name + " is missing or has a different shape in the checkpoint");
    }
  }
  for (auto &[name, p] : params) {
    auto const &src = by_name[name]->data;
    std::copy(src.begin(), src.end(), p.mutable_value().begin());
    p.zero_grad();
  }
}

Network<float> network_from_checkpoint(Checkpoint const &ckpt)
{
  Network<float> net(checkpoint_model(ckpt));
  load_parameters(net, ckpt);
  return net;
}

void Trainer::restore(Checkpoint const &ckpt)
{
  load_parameters(net_, ckpt);
  std::set<std::string> names;
  for (auto const &t : ckpt.parameters) {
    names.insert(t.name);
  }
  adam_.slots().clear();
  for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
    auto const &name = ckpt.adam_m[i].name;
    if (!names.count(name) || i >= ckpt.adam_v.size() || ckpt.adam_v[i].name != name || !ckpt.adam_steps.count(name)) {
      throw DataError("optimizer state for " + name + " is inconsistent");
    }
    auto &slot = adam_.slots()[name];
    slot.m = ckpt.adam_m[i].data;
    slot.v = ckpt.adam_v[i].data;
    slot.step = ckpt.adam_steps.at(name);
  }
  rng_ = CounterRng(ckpt.rng_key, ckpt.rng_counter);
  epoch_ = ckpt.epoch;
  steps_ = ckpt.step;
  if (cfg_.mask.resample && !finished()) {
    rebuild_training_masks(epoch_);
  }
}

std::pair<std::vector<MRISample>, std::vector<MRISample>> load_datasets(ExperimentConfig const &cfg)
{
  std::vector<MRISample> train;
  std::vector<MRISample> val;
  auto const &d = cfg.dataset;
  if (d.source == "synthetic") {
    for (int i = 0; i < d.count; ++i) {
      train.push_back(synth_phantom(d.size, d.seed + i));
    }
    for (int i = 0; i < d.val_count; ++i) {
      val.push_back(synth_phantom(d.size, d.seed + d.count + i));
    }
  } else {
    train = load_sample_directory(d.path);
    if (!d.val_path.empty()) {
      val = load_sample_directory(d.val_path);
    } else if (d.val_count > 0) {
      if (static_cast<std::size_t>(d.val_count) >= train.size()) {
        throw ConfigError("dataset.val_count leaves no training samples");
      }
      val.assign(train.end() - d.val_count, train.end());
      train.resize(train.size() - static_cast<std::size_t>(d.val_count));
    }
  }
  if (train.empty()) {
    throw ConfigError("dataset is empty");
  }
  return {std::move(train), std::move(val)};
}

TrainSummary run_training(ExperimentConfig const &cfg, std::optional<std::filesystem::path> const &resume,
                          std::function<void(EpochRecord const &)> const &on_epoch)
{
  cfg.validate();
  auto [train, val] = load_datasets(cfg);
  Trainer trainer(cfg, std::move(train), std::move(val));
  if (resume) {
    trainer.restore(load_checkpoint(*resume));
  }
  auto const dir = output_dir(cfg);
  std::filesystem::create_directories(dir / "checkpoints");
  io::write_json_atomic(dir / "config.json", config_to_json(cfg));
  std::ofstream metrics(dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!metrics) {
    throw IoError("cannot open " + (dir / "metrics.jsonl").string());
  }
  TrainSummary summary;
  auto const &bounds = cfg.training.schedule.bounds;
  while (!trainer.finished()) {
    int const epoch = trainer.epoch();
    EpochRecord rec;
    try {
      rec = trainer.run_epoch();
    } catch (NumericalError const &e) {
      metrics << json{{"epoch", epoch}, {"stage", stage_for_epoch(epoch, cfg.training.schedule)}, {"error", e.what()}}.dump()
              << "\n";
      metrics.flush();
      throw;
    }
    metrics << rec.to_json().dump() << "\n";
    metrics.flush();
    ++summary.epochs_run;
    summary.last = rec;
    if (on_epoch) {
      on_epoch(rec);
    }
    if (!rec.skipped && trainer.epoch() == bounds[static_cast<std::size_t>(rec.stage)] && !trainer.finished()) {
      save_checkpoint(trainer.checkpoint(), dir / "checkpoints" / ("stage" + std::to_string(rec.stage)));
    }
  }
  summary.final_checkpoint = dir / "checkpoints" / "final";
  save_checkpoint(trainer.checkpoint(), summary.final_checkpoint);
  json s{{"epochs_run", summary.epochs_run},
         {"steps", trainer.steps()},
         {"final_epoch", trainer.epoch()},
         {"final_checkpoint", summary.final_checkpoint.string()},
         {"last_record", summary.last ? summary.last->to_json() : json(nullptr)}};
  io::write_json_atomic(dir / "summary.json", s);
  return summary;
}

#define KINR_INSTANTIATE_TRAINING(T)                                                                                   \
  template Targets<T> make_targets<T>(TrainingExample const &);                                                        \
  template Var<T> loss_component<T>(Var<T> const &, Var<T> const &, Var<T> const &, Var<T> const &);                    \
  template Var<T> loss_component<T>(int, NetworkOutputs<T> const &, Targets<T> const &);                               \
  template StagedLoss<T> staged_loss<T>(int, NetworkOutputs<T> const &, Targets<T> const &);

KINR_INSTANTIATE_TRAINING(float)
KINR_INSTANTIATE_TRAINING(double)

} // namespace kinr
