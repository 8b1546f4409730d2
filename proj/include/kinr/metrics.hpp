#pragma once

#include "kinr/kspace.hpp"

#include <optional>
#include <vector>

namespace kinr {

inline constexpr double kPsnrCapDb = 100.0;

struct PsnrResult
{
  double db = 0.0;
  // True when the images are identical (or the value exceeded the cap).
  bool capped = false;
};

// 10 log10(max(ref)^2 / MSE).
PsnrResult psnr(RealImage const &x, RealImage const &ref);

// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03).
// The dynamic range defaults to max(ref) - min(ref).
double ssim(RealImage const &x, RealImage const &ref, std::optional<double> data_range = std::nullopt);

// ||x - ref||^2 / ||ref||^2.
double nmse(RealImage const &x, RealImage const &ref);

// |x - ref| per pixel.
RealImage abs_error_map(RealImage const &x, RealImage const &ref);

// Each |k| grid is min-max standardized to [0, 1]; the absolute difference is multiplied by
// `gain` and clipped to [0, 1].
RealImage kspace_error_map(ComplexGrid const &k_hat, ComplexGrid const &k_ref, double gain = 10.0);

struct MetricReport
{
  double psnr_db = 0.0;
  bool psnr_capped = false;
  double ssim = 0.0;
  double nmse = 0.0;
};

MetricReport evaluate(RealImage const &x, RealImage const &ref);

struct MeanStd
{
  double mean = 0.0;
  double std = 0.0; // population standard deviation
};

MeanStd mean_std(std::vector<double> const &values);

} // namespace kinr
