#pragma once

#include "kinr/nn/ops.hpp"
#include "kinr/rng.hpp"

#include <string>
#include <utility>
#include <vector>

// Parameterized building blocks. Every layer owns its tensors as leaf parameters and can
// list them under a dotted prefix, which is how checkpoints and the optimizer address them.
namespace kinr::nn {

template <typename T>
using Named = std::pair<std::string, Var<T>>;

template <typename T>
using NamedList = std::vector<Named<T>>;

// Glorot-uniform weights drawn in double so float and double models start identical.
template <typename T>
Var<T> glorot(Shape shape, int fan_in, int fan_out, CounterRng &rng);

template <typename T>
Var<T> zeros_param(Shape shape);

template <typename T>
Var<T> filled_param(Shape shape, T value);

template <typename T>
struct Linear
{
  Var<T> w; // in x out
  Var<T> b; // out

  Linear() = default;
  // `zero` gives an all-zero weight; `bias` = false omits the offset.
  Linear(int in, int out, CounterRng &rng, bool zero = false, bool bias = true);
  Var<T> operator()(Var<T> const &x) const { return linear(x, w, b); }
  void collect(std::string const &prefix, NamedList<T> &out) const;
};

template <typename T>
struct LayerNorm
{
  Var<T> gamma;
  Var<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Var<T> operator()(Var<T> const &x) const { return layer_norm(x, gamma, beta); }
  void collect(std::string const &prefix, NamedList<T> &out) const;
};

template <typename T>
struct Conv2d
{
  Var<T> w; // out x in x k x k
  Var<T> b;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, CounterRng &rng);
  Var<T> operator()(Var<T> const &x) const { return conv2d(x, w, b, stride, pad); }
  void collect(std::string const &prefix, NamedList<T> &out) const;
};

// Two linear maps with a SiLU in between.
template <typename T>
struct Mlp
{
  Linear<T> fc1;
  Linear<T> fc2;

  Mlp() = default;
  Mlp(int in, int hidden, int out, CounterRng &rng);
  Var<T> operator()(Var<T> const &x) const { return fc2(silu(fc1(x))); }
  void collect(std::string const &prefix, NamedList<T> &out) const;
};

// Multi-head attention with separate query, key, value and output projections. Self-attention
// passes the same tensor as `x` and `ctx`. The key projection has no bias: softmax is blind
// to it, so it could never learn.
template <typename T>
struct MultiHeadAttention
{
  Linear<T> q;
  Linear<T> k;
  Linear<T> v;
  Linear<T> o;
  int heads = 1;
  int chunk = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int heads, int chunk, CounterRng &rng);
  Var<T> operator()(Var<T> const &x, Var<T> const &ctx) const;
  void collect(std::string const &prefix, NamedList<T> &out) const;
};

} // namespace kinr::nn
