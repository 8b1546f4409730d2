#include "kinr/sampling.hpp"

#include "kinr/error.hpp"
#include "kinr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace kinr {

std::string to_string(MaskFamily f)
{
  switch (f) {
  case MaskFamily::cartesian1d:
    return "cartesian1d";
  case MaskFamily::gaussian2d:
    return "gaussian2d";
  case MaskFamily::random2d:
    return "random2d";
  }
  return "unknown";
}

MaskFamily parse_mask_family(std::string_view name)
{
  if (name == "cartesian1d") {
    return MaskFamily::cartesian1d;
  }
  if (name == "gaussian2d") {
    return MaskFamily::gaussian2d;
  }
  if (name == "random2d") {
    return MaskFamily::random2d;
  }
  throw ConfigError("unknown mask family '" + std::string(name) + "' (expected cartesian1d, gaussian2d, random2d)");
}

double default_acs_fraction(MaskFamily f) { return f == MaskFamily::cartesian1d ? 0.08 : 0.16; }

SamplingMask::SamplingMask(int height, int width, std::vector<std::uint8_t> grid, MaskFamily family,
                           double target_ratio, double acs_fraction, std::int64_t seed)
  : height_{height}
  , width_{width}
  , grid_{std::move(grid)}
  , family_{family}
  , target_ratio_{target_ratio}
  , acs_fraction_{acs_fraction}
  , seed_{seed}
{
  if (height <= 0 || width <= 0 || grid_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("mask grid does not match its declared shape");
  }
  for (auto &v : grid_) {
    if (v > 1) {
      throw DataError("mask entries must be 0 or 1");
    }
  }
}

std::size_t SamplingMask::count() const { return static_cast<std::size_t>(std::count(grid_.begin(), grid_.end(), 1)); }

double SamplingMask::achieved_ratio() const { return static_cast<double>(count()) / static_cast<double>(grid_.size()); }

SamplingMask SamplingMask::full(int height, int width)
{
  return SamplingMask(height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 1),
                      MaskFamily::random2d, 1.0, 0.0, 0);
}

namespace {

void validate_mask_args(int height, int width, double ratio, double acs_fraction)
{
  require_even(height, width);
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError("sampling ratio must lie in (0, 1]");
  }
  if (!(acs_fraction >= 0.0 && acs_fraction < ratio)) {
    throw ConfigError("ACS fraction must lie in [0, ratio)");
  }
}

std::uint64_t mask_key(std::int64_t seed, int height, int width, MaskFamily family)
{
  return CounterRng::derive({static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(height),
                             static_cast<std::uint64_t>(width), static_cast<std::uint64_t>(family)});
}

// Exact-count point mask: ACS square plus weighted sampling without replacement
// (Efraimidis-Spirakis keys log(u) / w).
SamplingMask make_point_mask(MaskFamily family, int height, int width, double ratio, double acs_fraction,
                             std::int64_t seed)
{
  validate_mask_args(height, width, ratio, acs_fraction);
  auto const total = static_cast<std::size_t>(height) * width;
  auto const target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
  auto const acs = std::min(target, static_cast<std::size_t>(std::llround(acs_fraction * static_cast<double>(total))));

  std::vector<std::uint8_t> grid(total, 0);
  for (auto i : acs_point_indices(height, width, acs)) {
    grid[i] = 1;
  }

  CounterRng rng(mask_key(seed, height, width, family));
  double const sr = height / 4.0;
  double const sc = width / 4.0;
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(total - acs);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      auto const i = static_cast<std::size_t>(r) * width + c;
      double const u = rng.uniform_open();
      if (grid[i]) {
        continue;
      }
      double logw = 0.0;
      if (family == MaskFamily::gaussian2d) {
        double const dr = (r - height / 2) / sr;
        double const dc = (c - width / 2) / sc;
        logw = -0.5 * (dr * dr + dc * dc);
      }
      // log(u) / w with w = exp(logw); larger is better.
      keys.emplace_back(std::log(u) * std::exp(-logw), i);
    }
  }
  auto const need = target - acs;
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(need), keys.end(),
                    [](auto const &a, auto const &b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  for (std::size_t j = 0; j < need; ++j) {
    grid[keys[j].second] = 1;
  }
  return SamplingMask(height, width, std::move(grid), family, ratio, acs_fraction, seed);
}

} // namespace

int acs_line_count(int width, double acs_fraction)
{
  return static_cast<int>(std::lround(acs_fraction * width));
}

int acs_first_column(int width, int count) { return width / 2 - count / 2; }

std::vector<std::size_t> acs_point_indices(int height, int width, std::size_t count)
{
  struct Entry
  {
    int cheb;
    int euclid2;
    std::size_t index;
  };
  std::vector<Entry> all;
  all.reserve(static_cast<std::size_t>(height) * width);
  int const r0 = height / 2;
  int const c0 = width / 2;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      int const dr = r - r0;
      int const dc = c - c0;
      all.push_back({std::max(std::abs(dr), std::abs(dc)), dr * dr + dc * dc, static_cast<std::size_t>(r) * width + c});
    }
  }
  count = std::min(count, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count), all.end(), [](Entry const &a, Entry const &b) {
    return std::tie(a.cheb, a.euclid2, a.index) < std::tie(b.cheb, b.euclid2, b.index);
  });
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(all[i].index);
  }
  std::sort(out.begin(), out.end());
  return out;
}

SamplingMask make_cartesian_mask(int height, int width, double ratio, double acs_fraction, std::int64_t seed)
{
  validate_mask_args(height, width, ratio, acs_fraction);
  int const acs = acs_line_count(width, acs_fraction);
  int const first = acs_first_column(width, acs);
  double p = (ratio * width - acs) / static_cast<double>(width - acs);
  p = std::clamp(p, 0.0, 1.0);

  CounterRng rng(mask_key(seed, height, width, MaskFamily::cartesian1d));
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(height) * width, 0);
  for (int c = 0; c < width; ++c) {
    double const u = rng.uniform();
    bool const on = (c >= first && c < first + acs) || u < p;
    if (on) {
      for (int r = 0; r < height; ++r) {
        grid[static_cast<std::size_t>(r) * width + c] = 1;
      }
    }
  }
  return SamplingMask(height, width, std::move(grid), MaskFamily::cartesian1d, ratio, acs_fraction, seed);
}

SamplingMask make_gaussian_mask(int height, int width, double ratio, double acs_fraction, std::int64_t seed)
{
  return make_point_mask(MaskFamily::gaussian2d, height, width, ratio, acs_fraction, seed);
}

SamplingMask make_random2d_mask(int height, int width, double ratio, double acs_fraction, std::int64_t seed)
{
  return make_point_mask(MaskFamily::random2d, height, width, ratio, acs_fraction, seed);
}

SamplingMask make_mask(MaskFamily family, int height, int width, double ratio, double acs_fraction, std::int64_t seed)
{
  switch (family) {
  case MaskFamily::cartesian1d:
    return make_cartesian_mask(height, width, ratio, acs_fraction, seed);
  case MaskFamily::gaussian2d:
    return make_gaussian_mask(height, width, ratio, acs_fraction, seed);
  case MaskFamily::random2d:
    return make_random2d_mask(height, width, ratio, acs_fraction, seed);
  }
  throw ConfigError("unknown mask family");
}

MaskedKSpace apply_mask(KSpace const &k, SamplingMask const &m)
{
  if (k.height() != m.height() || k.width() != m.width()) {
    throw ShapeError("mask shape does not match k-space shape");
  }
  MaskedKSpace out{KSpace(k.height(), k.width()), KSpace(k.height(), k.width())};
  out.sampled.set_scale(k.scale());
  out.unsampled.set_scale(k.scale());
  auto const n = k.plane_size();
  auto src = k.data();
  auto s = out.sampled.data();
  auto u = out.unsampled.data();
  auto const &g = m.grid();
  for (std::size_t ch = 0; ch < 2; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      auto const j = ch * n + i;
      if (g[i]) {
        s[j] = src[j];
      } else {
        u[j] = src[j];
      }
    }
  }
  return out;
}

SampledPoints extract_sampled(KSpace const &k_s, SamplingMask const &m)
{
  if (k_s.height() != m.height() || k_s.width() != m.width()) {
    throw ShapeError("mask shape does not match k-space shape");
  }
  if (m.count() == 0) {
    throw DomainError("mask selects no k-space points");
  }
  SampledPoints out;
  auto re = k_s.real();
  auto im = k_s.imag();
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!m(r, c)) {
        continue;
      }
      auto const i = static_cast<std::size_t>(r) * m.width() + c;
      out.coords.coords.push_back({normalize_index(r, m.height()), normalize_index(c, m.width())});
      out.values.push_back({re[i], im[i]});
      out.indices.push_back(i);
    }
  }
  return out;
}

} // namespace kinr
