#pragma once

#include "kinr/coords.hpp"
#include "kinr/kspace.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kinr {

enum class MaskFamily
{
  cartesian1d,
  gaussian2d,
  random2d,
};

std::string to_string(MaskFamily f);
MaskFamily parse_mask_family(std::string_view name);
// 0.08 for line masks, 0.16 for point masks.
double default_acs_fraction(MaskFamily f);

class SamplingMask
{
public:
  SamplingMask() = default;
  SamplingMask(int height, int width, std::vector<std::uint8_t> grid, MaskFamily family, double target_ratio,
               double acs_fraction, std::int64_t seed);

  int height() const { return height_; }
  int width() const { return width_; }
  MaskFamily family() const { return family_; }
  double target_ratio() const { return target_ratio_; }
  double acs_fraction() const { return acs_fraction_; }
  std::int64_t seed() const { return seed_; }

  std::vector<std::uint8_t> const &grid() const { return grid_; }
  bool operator()(int r, int c) const { return grid_[static_cast<std::size_t>(r) * width_ + c] != 0; }

  std::size_t count() const;
  double achieved_ratio() const;

  static SamplingMask full(int height, int width);

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> grid_;
  MaskFamily family_ = MaskFamily::random2d;
  double target_ratio_ = 1.0;
  double acs_fraction_ = 0.0;
  std::int64_t seed_ = 0;
};

// Number of fully sampled central lines (columns) for a line mask.
int acs_line_count(int width, double acs_fraction);
// Column range [first, first + count) of the central ACS block.
int acs_first_column(int width, int count);
// Row-major indices of the central ACS points for point masks: the `count` points nearest
// the zero-frequency index in Chebyshev distance (a centered square plus a partial shell).
std::vector<std::size_t> acs_point_indices(int height, int width, std::size_t count);

// Columns are sampled lines. round(acs_fraction * W) central columns are always sampled; the
// rest are drawn independently with the probability that makes the expected ratio exact.
SamplingMask make_cartesian_mask(int height, int width, double ratio, double acs_fraction, std::int64_t seed);
// Exactly round(ratio * H * W) points: the ACS square plus Gaussian-weighted draws without
// replacement (sigma = H/4 and W/4 per axis).
SamplingMask make_gaussian_mask(int height, int width, double ratio, double acs_fraction, std::int64_t seed);
// As the Gaussian mask but uniform outside the ACS square.
SamplingMask make_random2d_mask(int height, int width, double ratio, double acs_fraction, std::int64_t seed);
SamplingMask make_mask(MaskFamily family, int height, int width, double ratio, double acs_fraction,
                       std::int64_t seed);

struct MaskedKSpace
{
  KSpace sampled;
  KSpace unsampled;
};

// sampled = M * k, unsampled = (1 - M) * k, on both complex channels.
MaskedKSpace apply_mask(KSpace const &k, SamplingMask const &m);

struct SampledPoints
{
  CoordGrid coords;
  // (re, im) per sampled point, row-major order.
  std::vector<std::array<double, 2>> values;
  std::vector<std::size_t> indices;
};

SampledPoints extract_sampled(KSpace const &k_s, SamplingMask const &m);

} // namespace kinr
