#include "kinr/model.hpp"

#include "kinr/error.hpp"
#include "kinr/nn/bridge.hpp"

namespace kinr {

std::string to_string(Module m)
{
  switch (m) {
  case Module::lrit:
    return "lrit";
  case Module::idgm:
    return "idgm";
  case Module::hrit:
    return "hrit";
  case Module::tarm:
    return "tarm";
  }
  return "?";
}

std::string to_string(Ablation a)
{
  switch (a) {
  case Ablation::none:
    return "none";
  case Ablation::lrit_lr:
    return "lrit-lr";
  case Ablation::idgm:
    return "idgm";
  case Ablation::hrit:
    return "hrit";
  case Ablation::tarm:
    return "tarm";
  }
  return "?";
}

Ablation parse_ablation(std::string_view name)
{
  for (auto a : {Ablation::none, Ablation::lrit_lr, Ablation::idgm, Ablation::hrit, Ablation::tarm}) {
    if (name == to_string(a)) {
      return a;
    }
  }
  throw ConfigError("unknown ablation '" + std::string(name) + "' (expected none, lrit-lr, idgm, hrit or tarm)");
}

bool ModelConfig::enabled(Module m) const
{
  switch (disable) {
  case Ablation::none:
    return true;
  case Ablation::lrit_lr:
    return m != Module::lrit;
  case Ablation::idgm:
    return m != Module::idgm;
  case Ablation::hrit:
    return m != Module::hrit;
  case Ablation::tarm:
    return m != Module::tarm;
  }
  return true;
}

void ModelConfig::validate() const
{
  inr.validate();
  image.validate();
  if (!(hrit_token_fraction > 0.0 && hrit_token_fraction <= 1.0)) {
    throw ConfigError("hrit_token_fraction must lie in (0, 1]");
  }
}

template <typename T>
NetworkInputs<T> make_inputs(TrainingExample const &ex)
{
  return {&ex.k_s, &ex.mask, nn::grid_constant<T>(ex.i_s)};
}

template <typename T>
StageOutput<T> const &NetworkOutputs<T>::final() const
{
  for (auto it = stages.rbegin(); it != stages.rend(); ++it) {
    if (*it) {
      return **it;
    }
  }
  throw Error("network produced no output");
}

template <typename T>
Network<T>::Network(ModelConfig const &cfg)
  : cfg_{cfg}
{
  cfg.validate();
  // Independent streams keep each module's initialization unchanged when another is ablated.
  auto stream = [&](Module m) { return CounterRng(CounterRng::derive({cfg.init_seed, static_cast<std::uint64_t>(m)})); };
  if (cfg.enabled(Module::lrit)) {
    auto rng = stream(Module::lrit);
    lrit_.emplace(cfg.inr, rng);
  }
  if (cfg.enabled(Module::idgm)) {
    auto rng = stream(Module::idgm);
    idgm_.emplace(cfg.image, cfg.enabled(Module::lrit), rng);
  }
  if (cfg.enabled(Module::hrit)) {
    auto rng = stream(Module::hrit);
    hrit_.emplace(cfg.inr, rng);
  }
  if (cfg.enabled(Module::tarm)) {
    auto rng = stream(Module::tarm);
    tarm_.emplace(cfg.image, rng);
  }
}

template <typename T>
NetworkOutputs<T> Network<T>::forward(NetworkInputs<T> const &in, int stage) const
{
  if (stage < 1 || stage > 4) {
    throw DomainError("stage must be 1..4, got " + std::to_string(stage));
  }
  if (in.k_s == nullptr || in.mask == nullptr || !in.i_s.defined()) {
    throw DomainError("network inputs are incomplete");
  }
  int const height = in.k_s->height();
  int const width = in.k_s->width();
  NetworkOutputs<T> out;
  if (lrit_) {
    out.stages[0] = lrit_forward(*lrit_, *in.k_s, *in.mask);
  }
  if (stage >= 2 && idgm_) {
    nn::Var<T> const i1 = out.stages[0] ? out.stages[0]->i : nn::Var<T>{};
    out.idgm = (*idgm_)(in.i_s, i1);
    out.stages[1] = StageOutput<T>{out.idgm->k, out.idgm->i};
  }
  if (stage >= 3 && hrit_) {
    // Without guidance the high-resolution stage reads the low-resolution spectrum directly.
    auto const &src = out.stages[1] ? out.stages[1] : out.stages[0];
    if (!src) {
      throw Error("high-resolution stage has no k-space source");
    }
    out.stages[2] = hrit_forward(*hrit_, src->k, height, width, cfg_.hrit_token_fraction);
  }
  if (stage >= 4 && tarm_) {
    auto const &src = out.stages[2] ? out.stages[2] : out.stages[1];
    if (!src) {
      throw Error("refinement stage has no full-resolution input");
    }
    out.tarm = (*tarm_)(src->i);
    out.stages[3] = StageOutput<T>{out.tarm->k, out.tarm->i};
  }
  if (!out.stages[0] && !out.stages[1] && !out.stages[2] && !out.stages[3]) {
    throw Error("no enabled module runs at stage " + std::to_string(stage));
  }
  return out;
}

template <typename T>
nn::NamedList<T> Network<T>::parameters(Module m) const
{
  nn::NamedList<T> list;
  auto const prefix = to_string(m);
  switch (m) {
  case Module::lrit:
    if (lrit_) {
      lrit_->collect(prefix, list);
    }
    break;
  case Module::idgm:
    if (idgm_) {
      idgm_->collect(prefix, list);
    }
    break;
  case Module::hrit:
    if (hrit_) {
      hrit_->collect(prefix, list);
    }
    break;
  case Module::tarm:
    if (tarm_) {
      tarm_->collect(prefix, list);
    }
    break;
  }
  return list;
}

template <typename T>
nn::NamedList<T> Network<T>::parameters() const
{
  nn::NamedList<T> all;
  for (auto m : all_modules) {
    auto part = parameters(m);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

template NetworkInputs<float> make_inputs<float>(TrainingExample const &);
template NetworkInputs<double> make_inputs<double>(TrainingExample const &);
template struct NetworkOutputs<float>;
template struct NetworkOutputs<double>;
template class Network<float>;
template class Network<double>;

} // namespace kinr
