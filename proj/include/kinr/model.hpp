#pragma once

#include "kinr/datasets.hpp"
#include "kinr/model_image.hpp"
#include "kinr/model_inr.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace kinr {

// Cascade modules in stage order: module i is introduced at stage i + 1.
enum class Module
{
  lrit,
  idgm,
  hrit,
  tarm,
};

inline constexpr std::array<Module, 4> all_modules{Module::lrit, Module::idgm, Module::hrit, Module::tarm};

std::string to_string(Module m);
inline int stage_of(Module m) { return static_cast<int>(m) + 1; }

// Module removed for an ablation run; `lrit_lr` removes the low-resolution stage entirely.
enum class Ablation
{
  none,
  lrit_lr,
  idgm,
  hrit,
  tarm,
};

std::string to_string(Ablation a);
Ablation parse_ablation(std::string_view name);

struct ModelConfig
{
  InrConfig inr;
  ImageModuleConfig image;
  // Fraction of the dense k-space kept as high-resolution tokens (strongest first).
  double hrit_token_fraction = 1.0;
  Ablation disable = Ablation::none;
  std::uint64_t init_seed = 0;

  bool enabled(Module m) const;
  void validate() const;
  bool operator==(ModelConfig const &) const = default;
};

template <typename T>
struct NetworkInputs
{
  KSpace const *k_s = nullptr;
  SamplingMask const *mask = nullptr;
  nn::Var<T> i_s;
};

template <typename T>
NetworkInputs<T> make_inputs(TrainingExample const &ex);

template <typename T>
struct NetworkOutputs
{
  // Entry i holds (K_hat, I_hat) of module i when it ran.
  std::array<std::optional<StageOutput<T>>, 4> stages;
  std::optional<IdgmOutput<T>> idgm;
  std::optional<TarmOutput<T>> tarm;

  // Output of the last module that ran.
  StageOutput<T> const &final() const;
};

template <typename T>
class Network
{
public:
  explicit Network(ModelConfig const &cfg);

  ModelConfig const &config() const { return cfg_; }

  // Runs the modules of stages 1..stage that are enabled, in cascade order.
  NetworkOutputs<T> forward(NetworkInputs<T> const &in, int stage = 4) const;
  NetworkOutputs<T> forward(TrainingExample const &ex, int stage = 4) const { return forward(make_inputs<T>(ex), stage); }

  nn::NamedList<T> parameters(Module m) const;
  nn::NamedList<T> parameters() const;

  ImplicitTransformer<T> const *lrit() const { return lrit_ ? &*lrit_ : nullptr; }
  ImplicitTransformer<T> const *hrit() const { return hrit_ ? &*hrit_ : nullptr; }
  Idgm<T> *idgm() { return idgm_ ? &*idgm_ : nullptr; }
  Tarm<T> *tarm() { return tarm_ ? &*tarm_ : nullptr; }

private:
  ModelConfig cfg_;
  std::optional<ImplicitTransformer<T>> lrit_;
  std::optional<Idgm<T>> idgm_;
  std::optional<ImplicitTransformer<T>> hrit_;
  std::optional<Tarm<T>> tarm_;
};

} // namespace kinr
