#pragma once

#include "kinr/coords.hpp"
#include "kinr/kspace.hpp"
#include "kinr/nn/layers.hpp"
#include "kinr/sampling.hpp"

#include <vector>

namespace kinr {

struct InrConfig
{
  int dim = 64;
  int heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int ffn_expansion = 2;
  int pe_bands = 10;
  int query_chunk = 1024;

  // Throws ConfigError.
  void validate() const;
  bool operator==(InrConfig const &) const = default;
};

// Sinusoidal features [sin(2^b pi u), cos(2^b pi u), sin(2^b pi v), cos(2^b pi v)] for
// b = 0..bands-1, row-major N x 4*bands. Rejects coordinates outside [-1, 1]^2.
std::vector<double> fourier_features(CoordGrid const &coords, int bands);

template <typename T>
struct EncoderLayer
{
  nn::LayerNorm<T> norm_attn;
  nn::MultiHeadAttention<T> attn;
  nn::LayerNorm<T> norm_ffn;
  nn::Mlp<T> ffn;

  EncoderLayer(InrConfig const &cfg, CounterRng &rng);
  nn::Var<T> operator()(nn::Var<T> x) const;
  void collect(std::string const &prefix, nn::NamedList<T> &out) const;
};

// Cross-attention into the latent set, then self-attention among the queries, then FFN.
template <typename T>
struct DecoderLayer
{
  nn::LayerNorm<T> norm_cross;
  nn::MultiHeadAttention<T> cross;
  nn::LayerNorm<T> norm_self;
  nn::MultiHeadAttention<T> self;
  nn::LayerNorm<T> norm_ffn;
  nn::Mlp<T> ffn;

  DecoderLayer(InrConfig const &cfg, CounterRng &rng);
  nn::Var<T> operator()(nn::Var<T> x, nn::Var<T> const &latent) const;
  void collect(std::string const &prefix, nn::NamedList<T> &out) const;
};

// Encoder/decoder over (coordinate, k-value) tokens that answers k-space queries by
// coordinate. Used for both the low- and the high-resolution stage.
template <typename T>
class ImplicitTransformer
{
public:
  ImplicitTransformer(InrConfig const &cfg, CounterRng &rng);

  InrConfig const &config() const { return cfg_; }

  // Projected positional encoding, N x D.
  nn::Var<T> encode_coords(CoordGrid const &coords) const;
  // values N x 2 -> N x D.
  nn::Var<T> embed_kvalues(nn::Var<T> const &values) const;
  nn::Var<T> tokenize(nn::Var<T> const &values, CoordGrid const &coords) const;
  nn::Var<T> encode(nn::Var<T> const &tokens) const;
  // One (re, im) row per query, M x 2.
  nn::Var<T> decode(CoordGrid const &queries, nn::Var<T> const &latent) const;

  void collect(std::string const &prefix, nn::NamedList<T> &out) const;

  nn::Mlp<T> embed;
  nn::Linear<T> pe;
  std::vector<EncoderLayer<T>> encoder;
  nn::LayerNorm<T> encoder_norm;
  std::vector<DecoderLayer<T>> decoder;
  nn::LayerNorm<T> decoder_norm;
  nn::Linear<T> head;

private:
  InrConfig cfg_;
};

template <typename T>
struct StageOutput
{
  nn::Var<T> k;
  nn::Var<T> i;
};

// Tokens from the sampled points of k_s; queries over the central H/2 x W/2 frequencies.
// Returns the low-resolution k-space [2 x H/2 x W/2] and its image.
template <typename T>
StageOutput<T> lrit_forward(ImplicitTransformer<T> const &net, KSpace const &k_s, SamplingMask const &mask);

// Indices of the tokens kept when only the largest-magnitude `fraction` of a dense grid is
// used (fraction 1 keeps everything). Ascending index order.
std::vector<std::size_t> strongest_tokens(std::span<double const> re, std::span<double const> im, double fraction);

// Tokens from a dense k-space (all positions, or the strongest `token_fraction` of them) and
// queries over the full output grid. `k` may be [2 x H x W] (same resolution as the output)
// or the central [2 x H/2 x W/2] block.
template <typename T>
StageOutput<T> hrit_forward(ImplicitTransformer<T> const &net, nn::Var<T> const &k, int height, int width,
                            double token_fraction = 1.0);

} // namespace kinr
