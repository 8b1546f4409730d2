#include "kinr/metrics.hpp"

#include "kinr/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace kinr {

namespace {

void require_same(RealImage const &x, RealImage const &ref)
{
  if (x.height() != ref.height() || x.width() != ref.width()) {
    throw ShapeError("metric inputs differ in shape");
  }
}

double squared_error(RealImage const &x, RealImage const &ref)
{
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double const d = x.data()[i] - ref.data()[i];
    s += d * d;
  }
  return s;
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_taps()
{
  std::array<double, kWindow> g{};
  double sum = 0;
  for (int i = 0; i < kWindow; ++i) {
    double const d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    sum += g[i];
  }
  for (auto &v : g) {
    v /= sum;
  }
  return g;
}

// Separable "valid" filtering: output is (H - 10) x (W - 10).
std::vector<double> filter_valid(std::vector<double> const &img, int h, int w, std::array<double, kWindow> const &g)
{
  int const ow = w - kWindow + 1;
  int const oh = h - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < ow; ++c) {
      double s = 0;
      for (int k = 0; k < kWindow; ++k) {
        s += g[k] * img[static_cast<std::size_t>(r) * w + c + k];
      }
      tmp[static_cast<std::size_t>(r) * ow + c] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      double s = 0;
      for (int k = 0; k < kWindow; ++k) {
        s += g[k] * tmp[static_cast<std::size_t>(r + k) * ow + c];
      }
      out[static_cast<std::size_t>(r) * ow + c] = s;
    }
  }
  return out;
}

} // namespace

PsnrResult psnr(RealImage const &x, RealImage const &ref)
{
  require_same(x, ref);
  double const peak = ref.max();
  if (!(peak > 0.0)) {
    throw DomainError("PSNR reference has no positive peak");
  }
  double const mse = squared_error(x, ref) / static_cast<double>(x.size());
  if (mse == 0.0) {
    return {kPsnrCapDb, true};
  }
  double const db = 10.0 * std::log10(peak * peak / mse);
  if (db > kPsnrCapDb) {
    return {kPsnrCapDb, true};
  }
  return {db, false};
}

double ssim(RealImage const &x, RealImage const &ref, std::optional<double> data_range)
{
  require_same(x, ref);
  int const h = x.height();
  int const w = x.width();
  if (h < kWindow || w < kWindow) {
    throw ShapeError("SSIM needs images of at least 11x11");
  }
  double const range = data_range ? *data_range : ref.max() - ref.min();
  if (!(range > 0.0)) {
    throw DomainError("SSIM dynamic range must be positive");
  }
  double const c1 = (0.01 * range) * (0.01 * range);
  double const c2 = (0.03 * range) * (0.03 * range);
  auto const g = gaussian_taps();
  std::vector<double> a(x.data().begin(), x.data().end());
  std::vector<double> b(ref.data().begin(), ref.data().end());
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto const mu_a = filter_valid(a, h, w, g);
  auto const mu_b = filter_valid(b, h, w, g);
  auto const e_aa = filter_valid(aa, h, w, g);
  auto const e_bb = filter_valid(bb, h, w, g);
  auto const e_ab = filter_valid(ab, h, w, g);
  double total = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    double const va = e_aa[i] - mu_a[i] * mu_a[i];
    double const vb = e_bb[i] - mu_b[i] * mu_b[i];
    double const cov = e_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

double nmse(RealImage const &x, RealImage const &ref)
{
  require_same(x, ref);
  double energy = 0;
  for (double v : ref.data()) {
    energy += v * v;
  }
  if (energy == 0.0) {
    throw DomainError("NMSE reference is all zero");
  }
  return squared_error(x, ref) / energy;
}

RealImage abs_error_map(RealImage const &x, RealImage const &ref)
{
  require_same(x, ref);
  RealImage out(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.data()[i] = std::abs(x.data()[i] - ref.data()[i]);
  }
  return out;
}

namespace {

RealImage standardized(RealImage m)
{
  double const lo = m.min();
  double const span = m.max() - lo;
  for (auto &v : m.data()) {
    v = span > 0 ? (v - lo) / span : 0.0;
  }
  return m;
}

} // namespace

RealImage kspace_error_map(ComplexGrid const &k_hat, ComplexGrid const &k_ref, double gain)
{
  if (!k_hat.same_shape(k_ref)) {
    throw ShapeError("k-space error map inputs differ in shape");
  }
  if (!(gain > 0.0)) {
    throw DomainError("error map gain must be positive");
  }
  auto const a = standardized(magnitude(k_hat));
  auto const b = standardized(magnitude(k_ref));
  RealImage out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.data()[i] = std::clamp(gain * std::abs(a.data()[i] - b.data()[i]), 0.0, 1.0);
  }
  return out;
}

MetricReport evaluate(RealImage const &x, RealImage const &ref)
{
  auto const p = psnr(x, ref);
  return {p.db, p.capped, ssim(x, ref), nmse(x, ref)};
}

MeanStd mean_std(std::vector<double> const &values)
{
  if (values.empty()) {
    return {};
  }
  double mean = 0;
  for (double v : values) {
    mean += v;
  }
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) {
    var += (v - mean) * (v - mean);
  }
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

} // namespace kinr
