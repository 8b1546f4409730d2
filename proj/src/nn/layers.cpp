#include "kinr/nn/layers.hpp"

#include <cmath>

namespace kinr::nn {

template <typename T>
Var<T> glorot(Shape shape, int fan_in, int fan_out, CounterRng &rng)
{
  double const bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<T> v(numel(shape));
  for (auto &x : v) {
    x = static_cast<T>(rng.uniform(-bound, bound));
  }
  return Var<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
Var<T> zeros_param(Shape shape)
{
  auto const n = numel(shape);
  return Var<T>::parameter(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Var<T> filled_param(Shape shape, T value)
{
  auto const n = numel(shape);
  return Var<T>::parameter(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Linear<T>::Linear(int in, int out, CounterRng &rng, bool zero, bool bias)
  : w{zero ? zeros_param<T>({in, out}) : glorot<T>({in, out}, in, out, rng)}
{
  if (bias) {
    b = zeros_param<T>({out});
  }
}

template <typename T>
void Linear<T>::collect(std::string const &prefix, NamedList<T> &out) const
{
  out.emplace_back(prefix + ".w", w);
  if (b.defined()) {
    out.emplace_back(prefix + ".b", b);
  }
}

template <typename T>
LayerNorm<T>::LayerNorm(int dim)
  : gamma{filled_param<T>({dim}, T(1))}
  , beta{zeros_param<T>({dim})}
{
}

template <typename T>
void LayerNorm<T>::collect(std::string const &prefix, NamedList<T> &out) const
{
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

template <typename T>
Conv2d<T>::Conv2d(int in, int out, int kernel, int stride_, CounterRng &rng)
  : w{glorot<T>({out, in, kernel, kernel}, in * kernel * kernel, out * kernel * kernel, rng)}
  , b{zeros_param<T>({out})}
  , stride{stride_}
  , pad{kernel / 2}
{
}

template <typename T>
void Conv2d<T>::collect(std::string const &prefix, NamedList<T> &out) const
{
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

template <typename T>
Mlp<T>::Mlp(int in, int hidden, int out, CounterRng &rng)
  : fc1{in, hidden, rng}
  , fc2{hidden, out, rng}
{
}

template <typename T>
void Mlp<T>::collect(std::string const &prefix, NamedList<T> &out) const
{
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(int dim, int heads_, int chunk_, CounterRng &rng)
  : q{dim, dim, rng}
  , k{dim, dim, rng, false, false}
  , v{dim, dim, rng}
  , o{dim, dim, rng}
  , heads{heads_}
  , chunk{chunk_}
{
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(Var<T> const &x, Var<T> const &ctx) const
{
  return o(attention(q(x), k(ctx), v(ctx), heads, chunk));
}

template <typename T>
void MultiHeadAttention<T>::collect(std::string const &prefix, NamedList<T> &out) const
{
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  o.collect(prefix + ".o", out);
}

#define KINR_INSTANTIATE_LAYERS(T)                                                                                     \
  template Var<T> glorot<T>(Shape, int, int, CounterRng &);                                                            \
  template Var<T> zeros_param<T>(Shape);                                                                               \
  template Var<T> filled_param<T>(Shape, T);                                                                           \
  template struct Linear<T>;                                                                                           \
  template struct LayerNorm<T>;                                                                                        \
  template struct Conv2d<T>;                                                                                           \
  template struct Mlp<T>;                                                                                              \
  template struct MultiHeadAttention<T>;

KINR_INSTANTIATE_LAYERS(float)
KINR_INSTANTIATE_LAYERS(double)

} // namespace kinr::nn
