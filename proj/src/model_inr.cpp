#include "kinr/model_inr.hpp"

#include "kinr/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace kinr {

using nn::Var;

void InrConfig::validate() const
{
  if (dim <= 0 || heads <= 0 || encoder_layers <= 0 || decoder_layers <= 0 || ffn_expansion <= 0 || pe_bands <= 0) {
    throw ConfigError("model dimensions, heads, layer counts, ffn expansion and bands must be positive");
  }
  if (dim % heads != 0) {
    throw ConfigError("model dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (query_chunk < 0) {
    throw ConfigError("query_chunk must be >= 0 (0 = unchunked)");
  }
}

std::vector<double> fourier_features(CoordGrid const &coords, int bands)
{
  if (bands < 1) {
    throw ConfigError("positional encoding needs at least one band");
  }
  validate_coords(coords);
  std::size_t const width = 4 * static_cast<std::size_t>(bands);
  std::vector<double> out(coords.size() * width);
  for (std::size_t n = 0; n < coords.size(); ++n) {
    double *row = out.data() + n * width;
    for (int b = 0; b < bands; ++b) {
      double const f = std::ldexp(std::numbers::pi, b);
      row[4 * b + 0] = std::sin(f * coords.coords[n][0]);
      row[4 * b + 1] = std::cos(f * coords.coords[n][0]);
      row[4 * b + 2] = std::sin(f * coords.coords[n][1]);
      row[4 * b + 3] = std::cos(f * coords.coords[n][1]);
    }
  }
  return out;
}

template <typename T>
EncoderLayer<T>::EncoderLayer(InrConfig const &cfg, CounterRng &rng)
  : norm_attn{cfg.dim}
  , attn{cfg.dim, cfg.heads, cfg.query_chunk, rng}
  , norm_ffn{cfg.dim}
  , ffn{cfg.dim, cfg.dim * cfg.ffn_expansion, cfg.dim, rng}
{
}

template <typename T>
Var<T> EncoderLayer<T>::operator()(Var<T> x) const
{
  auto const h = norm_attn(x);
  x = nn::add(x, attn(h, h));
  return nn::add(x, ffn(norm_ffn(x)));
}

template <typename T>
void EncoderLayer<T>::collect(std::string const &prefix, nn::NamedList<T> &out) const
{
  norm_attn.collect(prefix + ".norm_attn", out);
  attn.collect(prefix + ".attn", out);
  norm_ffn.collect(prefix + ".norm_ffn", out);
  ffn.collect(prefix + ".ffn", out);
}

template <typename T>
DecoderLayer<T>::DecoderLayer(InrConfig const &cfg, CounterRng &rng)
  : norm_cross{cfg.dim}
  , cross{cfg.dim, cfg.heads, cfg.query_chunk, rng}
  , norm_self{cfg.dim}
  , self{cfg.dim, cfg.heads, cfg.query_chunk, rng}
  , norm_ffn{cfg.dim}
  , ffn{cfg.dim, cfg.dim * cfg.ffn_expansion, cfg.dim, rng}
{
}

template <typename T>
Var<T> DecoderLayer<T>::operator()(Var<T> x, Var<T> const &latent) const
{
  x = nn::add(x, cross(norm_cross(x), latent));
  auto const h = norm_self(x);
  x = nn::add(x, self(h, h));
  return nn::add(x, ffn(norm_ffn(x)));
}

template <typename T>
void DecoderLayer<T>::collect(std::string const &prefix, nn::NamedList<T> &out) const
{
  norm_cross.collect(prefix + ".norm_cross", out);
  cross.collect(prefix + ".cross", out);
  norm_self.collect(prefix + ".norm_self", out);
  self.collect(prefix + ".self", out);
  norm_ffn.collect(prefix + ".norm_ffn", out);
  ffn.collect(prefix + ".ffn", out);
}

template <typename T>
ImplicitTransformer<T>::ImplicitTransformer(InrConfig const &cfg, CounterRng &rng)
  : embed{2, cfg.dim, cfg.dim, rng}
  , pe{4 * cfg.pe_bands, cfg.dim, rng}
  , encoder_norm{cfg.dim}
  , decoder_norm{cfg.dim}
  , cfg_{cfg}
{
  cfg.validate();
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    encoder.emplace_back(cfg, rng);
  }
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    decoder.emplace_back(cfg, rng);
  }
  // Zero head: the untrained model predicts an empty spectrum.
  head = nn::Linear<T>(cfg.dim, 2, rng, true);
}

template <typename T>
Var<T> ImplicitTransformer<T>::encode_coords(CoordGrid const &coords) const
{
  if (coords.empty()) {
    throw DomainError("no coordinates to encode");
  }
  auto const feats = fourier_features(coords, cfg_.pe_bands);
  auto x = Var<T>::constant({static_cast<int>(coords.size()), 4 * cfg_.pe_bands}, std::vector<T>(feats.begin(), feats.end()));
  return pe(x);
}

template <typename T>
Var<T> ImplicitTransformer<T>::embed_kvalues(Var<T> const &values) const
{
  if (values.shape().size() != 2 || values.dim(1) != 2 || values.dim(0) < 1) {
    throw ShapeError("k-values must be a non-empty N x 2 tensor");
  }
  return embed(values);
}

template <typename T>
Var<T> ImplicitTransformer<T>::tokenize(Var<T> const &values, CoordGrid const &coords) const
{
  if (static_cast<std::size_t>(values.dim(0)) != coords.size()) {
    throw ShapeError("value count " + std::to_string(values.dim(0)) + " does not match coordinate count " +
                     std::to_string(coords.size()));
  }
  return nn::add(embed_kvalues(values), encode_coords(coords));
}

template <typename T>
Var<T> ImplicitTransformer<T>::encode(Var<T> const &tokens) const
{
  if (tokens.shape().size() != 2 || tokens.dim(1) != cfg_.dim || tokens.dim(0) < 1) {
    throw ShapeError("token sequence must be N x " + std::to_string(cfg_.dim));
  }
  auto x = tokens;
  for (auto const &layer : encoder) {
    x = layer(x);
  }
  return encoder_norm(x);
}

template <typename T>
Var<T> ImplicitTransformer<T>::decode(CoordGrid const &queries, Var<T> const &latent) const
{
  if (queries.empty()) {
    throw DomainError("empty query set");
  }
  auto x = encode_coords(queries);
  for (auto const &layer : decoder) {
    x = layer(x, latent);
  }
  return head(decoder_norm(x));
}

template <typename T>
void ImplicitTransformer<T>::collect(std::string const &prefix, nn::NamedList<T> &out) const
{
  embed.collect(prefix + ".embed", out);
  pe.collect(prefix + ".pe", out);
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    encoder[l].collect(prefix + ".encoder." + std::to_string(l), out);
  }
  encoder_norm.collect(prefix + ".encoder_norm", out);
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    decoder[l].collect(prefix + ".decoder." + std::to_string(l), out);
  }
  decoder_norm.collect(prefix + ".decoder_norm", out);
  head.collect(prefix + ".head", out);
}

template <typename T>
StageOutput<T> lrit_forward(ImplicitTransformer<T> const &net, KSpace const &k_s, SamplingMask const &mask)
{
  require_even(k_s.height(), k_s.width());
  auto const pts = extract_sampled(k_s, mask);
  std::vector<T> vals;
  vals.reserve(2 * pts.values.size());
  for (auto const &[re, im] : pts.values) {
    vals.push_back(static_cast<T>(re));
    vals.push_back(static_cast<T>(im));
  }
  auto const values = Var<T>::constant({static_cast<int>(pts.values.size()), 2}, std::move(vals));
  int const h = k_s.height() / 2;
  int const w = k_s.width() / 2;
  auto const latent = net.encode(net.tokenize(values, pts.coords));
  auto const rows = net.decode(CoordGrid::central(h, w, k_s.height(), k_s.width()), latent);
  auto k1 = nn::rows_to_planes(rows, h, w);
  auto i1 = nn::ifft2c(k1);
  return {k1, i1};
}

std::vector<std::size_t> strongest_tokens(std::span<double const> re, std::span<double const> im, double fraction)
{
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("token fraction must lie in (0, 1]");
  }
  std::size_t const n = re.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto const keep = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
  if (keep == n) {
    return idx;
  }
  auto mag = [&](std::size_t i) { return re[i] * re[i] + im[i] * im[i]; };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), [&](std::size_t a, std::size_t b) {
    double const ma = mag(a);
    double const mb = mag(b);
    return ma != mb ? ma > mb : a < b;
  });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
StageOutput<T> hrit_forward(ImplicitTransformer<T> const &net, Var<T> const &k, int height, int width, double token_fraction)
{
  require_even(height, width);
  if (k.shape().size() != 3 || k.dim(0) != 2) {
    throw ShapeError("dense k-space input must be [2 x H x W], got " + nn::to_string(k.shape()));
  }
  int const kh = k.dim(1);
  int const kw = k.dim(2);
  CoordGrid source;
  if (kh == height && kw == width) {
    source = CoordGrid::dense(height, width);
  } else if (2 * kh == height && 2 * kw == width) {
    source = CoordGrid::central(kh, kw, height, width);
  } else {
    throw ShapeError("token grid " + nn::to_string(k.shape()) + " is neither the output size nor half of it");
  }
  auto values = nn::planes_to_rows(k);
  if (token_fraction < 1.0) {
    std::size_t const plane = static_cast<std::size_t>(kh) * kw;
    std::vector<double> re(k.value().begin(), k.value().begin() + static_cast<std::ptrdiff_t>(plane));
    std::vector<double> im(k.value().begin() + static_cast<std::ptrdiff_t>(plane), k.value().end());
    auto const keep = strongest_tokens(re, im, token_fraction);
    CoordGrid chosen;
    chosen.coords.reserve(keep.size());
    for (auto i : keep) {
      chosen.coords.push_back(source.coords[i]);
    }
    values = nn::gather_rows(values, keep);
    source = std::move(chosen);
  }
  auto const latent = net.encode(net.tokenize(values, source));
  auto const rows = net.decode(CoordGrid::dense(height, width), latent);
  auto k3 = nn::rows_to_planes(rows, height, width);
  auto i3 = nn::ifft2c(k3);
  return {k3, i3};
}

#define KINR_INSTANTIATE_INR(T)                                                                                        \
  template struct EncoderLayer<T>;                                                                                     \
  template struct DecoderLayer<T>;                                                                                     \
  template class ImplicitTransformer<T>;                                                                               \
  template StageOutput<T> lrit_forward<T>(ImplicitTransformer<T> const &, KSpace const &, SamplingMask const &);       \
  template StageOutput<T> hrit_forward<T>(ImplicitTransformer<T> const &, Var<T> const &, int, int, double);

KINR_INSTANTIATE_INR(float)
KINR_INSTANTIATE_INR(double)

} // namespace kinr
