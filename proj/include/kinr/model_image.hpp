#pragma once

#include "kinr/model_inr.hpp"
#include "kinr/nn/layers.hpp"

namespace kinr {

struct ImageModuleConfig
{
  int channels = 32;

  void validate() const;
  bool operator==(ImageModuleConfig const &) const = default;
};

// Forces attention maps to ones; only reachable through test code (see TestAccess).
struct AttentionOverride
{
  bool idgm_ones = false;
  bool tarm_m1_ones = false;
  bool tarm_m2_ones = false;
  bool tarm_m3_ones = false;
};

template <typename T>
struct IdgmOutput
{
  nn::Var<T> i_up;
  nn::Var<T> attention; // A, h x H x W
  nn::Var<T> i;
  nn::Var<T> k;
};

// Image-domain guidance: fuses the zero-filled image with the low-resolution reconstruction,
// then reweights upsampled features with local (pointwise) plus global (pooled) attention.
template <typename T>
class Idgm
{
public:
  // `with_lr` = false drops the low-resolution branch (ablation without LRIT).
  Idgm(ImageModuleConfig const &cfg, bool with_lr, CounterRng &rng);

  // i_s [2 x H x W], i1 [2 x H/2 x W/2] (ignored without the LR branch) -> I_up [2 x H x W].
  nn::Var<T> shallow_fuse(nn::Var<T> const &i_s, nn::Var<T> const &i1) const;
  IdgmOutput<T> deep_fuse(nn::Var<T> const &i_s, nn::Var<T> const &i_up) const;
  IdgmOutput<T> operator()(nn::Var<T> const &i_s, nn::Var<T> const &i1) const;

  void collect(std::string const &prefix, nn::NamedList<T> &out) const;
  bool has_lr_branch() const { return with_lr_; }

  nn::Conv2d<T> lr_in;
  nn::Conv2d<T> s_in; // stride 2
  nn::Conv2d<T> fuse;
  nn::Conv2d<T> up_out;
  nn::Conv2d<T> feat_s;
  nn::Conv2d<T> feat_up;
  nn::Conv2d<T> local1; // 1x1
  nn::Conv2d<T> local2; // 1x1
  nn::Mlp<T> global;
  nn::Conv2d<T> value;
  nn::Conv2d<T> out;

private:
  friend struct TestAccess;
  bool with_lr_;
  AttentionOverride override_;
};

template <typename T>
struct TarmOutput
{
  nn::Var<T> m1; // h x H x W
  nn::Var<T> m2; // h
  nn::Var<T> m3; // 1 x H x W
  nn::Var<T> i;
  nn::Var<T> k;
};

// Refinement with pixel (M1), channel (M2) and spatial (M3) attention.
template <typename T>
class Tarm
{
public:
  Tarm(ImageModuleConfig const &cfg, CounterRng &rng);

  TarmOutput<T> operator()(nn::Var<T> const &i3) const;
  void collect(std::string const &prefix, nn::NamedList<T> &out) const;

  nn::Conv2d<T> feat;
  nn::Conv2d<T> pixel1; // 1x1
  nn::Conv2d<T> pixel2; // 1x1
  nn::Mlp<T> channel;
  nn::Conv2d<T> spatial; // 7x7 over [mean, max]
  nn::Conv2d<T> out;

private:
  friend struct TestAccess;
  AttentionOverride override_;
};

} // namespace kinr
