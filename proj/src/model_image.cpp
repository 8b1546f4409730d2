#include "kinr/model_image.hpp"

#include "kinr/error.hpp"

#include <algorithm>

namespace kinr {

using nn::Var;

namespace {

template <typename T>
Var<T> ones_like(Var<T> const &x)
{
  return Var<T>::constant(x.shape(), std::vector<T>(x.numel(), T(1)));
}

template <typename T>
void expect_image(Var<T> const &x, char const *what)
{
  if (x.shape().size() != 3 || x.dim(0) != 2) {
    throw ShapeError(std::string(what) + " must be a [2 x H x W] complex image, got " + nn::to_string(x.shape()));
  }
}

} // namespace

void ImageModuleConfig::validate() const
{
  if (channels < 1) {
    throw ConfigError("image module channel count must be positive");
  }
}

template <typename T>
Idgm<T>::Idgm(ImageModuleConfig const &cfg, bool with_lr, CounterRng &rng)
  : with_lr_{with_lr}
{
  cfg.validate();
  int const h = cfg.channels;
  if (with_lr) {
    lr_in = nn::Conv2d<T>(2, h, 3, 1, rng);
  }
  s_in = nn::Conv2d<T>(2, h, 3, 2, rng);
  fuse = nn::Conv2d<T>(h, h, 3, 1, rng);
  up_out = nn::Conv2d<T>(h, 2, 3, 1, rng);
  feat_s = nn::Conv2d<T>(2, h, 3, 1, rng);
  feat_up = nn::Conv2d<T>(2, h, 3, 1, rng);
  local1 = nn::Conv2d<T>(h, h, 1, 1, rng);
  local2 = nn::Conv2d<T>(h, h, 1, 1, rng);
  global = nn::Mlp<T>(h, h, h, rng);
  value = nn::Conv2d<T>(2, h, 3, 1, rng);
  out = nn::Conv2d<T>(h, 2, 3, 1, rng);
}

template <typename T>
Var<T> Idgm<T>::shallow_fuse(Var<T> const &i_s, Var<T> const &i1) const
{
  expect_image(i_s, "zero-filled image");
  if (i_s.dim(1) % 2 != 0 || i_s.dim(2) % 2 != 0) {
    throw ShapeError("zero-filled image needs even dimensions");
  }
  auto x = s_in(i_s);
  if (with_lr_) {
    expect_image(i1, "low-resolution image");
    if (2 * i1.dim(1) != i_s.dim(1) || 2 * i1.dim(2) != i_s.dim(2)) {
      throw ShapeError("low-resolution image " + nn::to_string(i1.shape()) + " is not half of " + nn::to_string(i_s.shape()));
    }
    x = nn::add(lr_in(i1), x);
  }
  return up_out(nn::upsample2x(nn::silu(fuse(x))));
}

template <typename T>
IdgmOutput<T> Idgm<T>::deep_fuse(Var<T> const &i_s, Var<T> const &i_up) const
{
  expect_image(i_s, "zero-filled image");
  expect_image(i_up, "fused image");
  if (i_s.shape() != i_up.shape()) {
    throw ShapeError("deep fusion inputs differ in shape");
  }
  auto const f = nn::silu(nn::add(feat_s(i_s), feat_up(i_up)));
  Var<T> a;
  if (override_.idgm_ones) {
    a = ones_like(f);
  } else {
    auto const a_local = local2(nn::silu(local1(f)));
    int const h = f.dim(0);
    auto const a_global = global(nn::reshape(nn::global_avg_pool(f), {1, h}));
    a = nn::sigmoid(nn::add_channel_bias(a_local, nn::reshape(a_global, {h})));
  }
  auto const i2 = out(nn::mul(a, value(i_up)));
  return {i_up, a, i2, nn::fft2c(i2)};
}

template <typename T>
IdgmOutput<T> Idgm<T>::operator()(Var<T> const &i_s, Var<T> const &i1) const
{
  return deep_fuse(i_s, shallow_fuse(i_s, i1));
}

template <typename T>
void Idgm<T>::collect(std::string const &prefix, nn::NamedList<T> &list) const
{
  if (with_lr_) {
    lr_in.collect(prefix + ".lr_in", list);
  }
  s_in.collect(prefix + ".s_in", list);
  fuse.collect(prefix + ".fuse", list);
  up_out.collect(prefix + ".up_out", list);
  feat_s.collect(prefix + ".feat_s", list);
  feat_up.collect(prefix + ".feat_up", list);
  local1.collect(prefix + ".local1", list);
  local2.collect(prefix + ".local2", list);
  global.collect(prefix + ".global", list);
  value.collect(prefix + ".value", list);
  out.collect(prefix + ".out", list);
}

template <typename T>
Tarm<T>::Tarm(ImageModuleConfig const &cfg, CounterRng &rng)
{
  cfg.validate();
  int const h = cfg.channels;
  feat = nn::Conv2d<T>(2, h, 3, 1, rng);
  pixel1 = nn::Conv2d<T>(h, h, 1, 1, rng);
  pixel2 = nn::Conv2d<T>(h, h, 1, 1, rng);
  channel = nn::Mlp<T>(h, h, h, rng);
  spatial = nn::Conv2d<T>(2, 1, 7, 1, rng);
  out = nn::Conv2d<T>(h, 2, 3, 1, rng);
}

template <typename T>
TarmOutput<T> Tarm<T>::operator()(Var<T> const &i3) const
{
  expect_image(i3, "refinement input");
  auto const f = feat(i3);
  int const h = f.dim(0);
  auto const m1 = override_.tarm_m1_ones ? ones_like(f) : nn::sigmoid(pixel2(nn::silu(pixel1(f))));
  auto const pooled = nn::reshape(nn::global_avg_pool(f), {1, h});
  auto const m2 = override_.tarm_m2_ones ? Var<T>::constant({h}, std::vector<T>(h, T(1)))
                                         : nn::sigmoid(nn::reshape(channel(pooled), {h}));
  auto const m3 = override_.tarm_m3_ones ? Var<T>::constant({1, f.dim(1), f.dim(2)}, std::vector<T>(f.numel() / h, T(1)))
                                         : nn::sigmoid(spatial(nn::channel_mean_max(f)));
  auto const mixed = nn::add(nn::add(nn::mul(m1, f), nn::scale_channels(f, m2)), nn::scale_spatial(f, m3));
  auto const i4 = out(mixed);
  return {m1, m2, m3, i4, nn::fft2c(i4)};
}

template <typename T>
void Tarm<T>::collect(std::string const &prefix, nn::NamedList<T> &list) const
{
  feat.collect(prefix + ".feat", list);
  pixel1.collect(prefix + ".pixel1", list);
  pixel2.collect(prefix + ".pixel2", list);
  channel.collect(prefix + ".channel", list);
  spatial.collect(prefix + ".spatial", list);
  out.collect(prefix + ".out", list);
}

template class Idgm<float>;
template class Idgm<double>;
template class Tarm<float>;
template class Tarm<double>;

} // namespace kinr
