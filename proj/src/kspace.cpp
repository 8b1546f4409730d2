#include "kinr/kspace.hpp"

#include "kinr/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

namespace kinr {

ComplexGrid::ComplexGrid(int height, int width)
  : height_{height}
  , width_{width}
{
  if (height <= 0 || width <= 0) {
    throw ShapeError("grid dimensions must be positive, got " + std::to_string(height) + "x" + std::to_string(width));
  }
  data_.assign(2 * plane_size(), 0.0);
}

ComplexGrid::ComplexGrid(int height, int width, std::vector<double> data)
  : ComplexGrid(height, width)
{
  if (data.size() != data_.size()) {
    throw ShapeError("complex grid payload has " + std::to_string(data.size()) + " values, expected " +
                     std::to_string(data_.size()));
  }
  data_ = std::move(data);
}

std::complex<double> ComplexGrid::at(int r, int c) const
{
  auto const i = static_cast<std::size_t>(r) * width_ + c;
  return {data_[i], data_[plane_size() + i]};
}

void ComplexGrid::set(int r, int c, std::complex<double> v)
{
  auto const i = static_cast<std::size_t>(r) * width_ + c;
  data_[i] = v.real();
  data_[plane_size() + i] = v.imag();
}

bool ComplexGrid::all_finite() const
{
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double ComplexGrid::max_magnitude() const
{
  double m = 0.0;
  auto const n = plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    m = std::max(m, std::hypot(data_[i], data_[n + i]));
  }
  return m;
}

double ComplexGrid::squared_norm() const
{
  double s = 0.0;
  for (double v : data_) {
    s += v * v;
  }
  return s;
}

void KSpace::set_scale(double s)
{
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw DomainError("k-space scale must be positive and finite");
  }
  scale_ = s;
}

RealImage::RealImage(int height, int width)
  : height_{height}
  , width_{width}
{
  if (height <= 0 || width <= 0) {
    throw ShapeError("image dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width, 0.0);
}

RealImage::RealImage(int height, int width, std::vector<double> data)
  : RealImage(height, width)
{
  if (data.size() != data_.size()) {
    throw ShapeError("real image payload size mismatch");
  }
  data_ = std::move(data);
}

double RealImage::max() const { return *std::max_element(data_.begin(), data_.end()); }
double RealImage::min() const { return *std::min_element(data_.begin(), data_.end()); }

namespace {

// FFTW planning is not thread-safe; plans are created once per (H, W, direction) under a
// lock and executed concurrently through the new-array interface.
class PlanCache
{
public:
  ~PlanCache()
  {
    for (auto &[key, plan] : plans_) {
      fftw_destroy_plan(plan);
    }
  }

  fftw_plan get(int h, int w, int sign)
  {
    std::lock_guard lock(mutex_);
    auto const key = std::make_tuple(h, w, sign);
    if (auto it = plans_.find(key); it != plans_.end()) {
      return it->second;
    }
    auto *buf = fftw_alloc_complex(static_cast<std::size_t>(h) * w);
    fftw_plan p = fftw_plan_dft_2d(h, w, buf, buf, sign, FFTW_ESTIMATE);
    fftw_free(buf);
    plans_.emplace(key, p);
    return p;
  }

private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

PlanCache &plan_cache()
{
  static PlanCache cache;
  return cache;
}

struct FftwBuffer
{
  explicit FftwBuffer(std::size_t n)
    : ptr{fftw_alloc_complex(n)}
  {
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(FftwBuffer const &) = delete;
  FftwBuffer &operator=(FftwBuffer const &) = delete;
  fftw_complex *ptr;
};

// out = shift(DFT(unshift(in))) / sqrt(HW). Centered index n maps to DFT index (n - N/2) mod N.
void centered_transform(ComplexGrid const &in, ComplexGrid &out, int sign)
{
  if (!in.all_finite()) {
    throw DomainError("Fourier transform input contains non-finite values");
  }
  int const h = in.height();
  int const w = in.width();
  int const ch = h / 2;
  int const cw = w / 2;
  auto const n = in.plane_size();
  FftwBuffer buf(n);
  auto re = in.real();
  auto im = in.imag();
  for (int r = 0; r < h; ++r) {
    int const rr = ((r - ch) % h + h) % h;
    for (int c = 0; c < w; ++c) {
      int const cc = ((c - cw) % w + w) % w;
      auto const src = static_cast<std::size_t>(r) * w + c;
      auto const dst = static_cast<std::size_t>(rr) * w + cc;
      buf.ptr[dst][0] = re[src];
      buf.ptr[dst][1] = im[src];
    }
  }
  fftw_execute_dft(plan_cache().get(h, w, sign), buf.ptr, buf.ptr);
  double const s = 1.0 / std::sqrt(static_cast<double>(n));
  auto ore = out.real();
  auto oim = out.imag();
  for (int r = 0; r < h; ++r) {
    int const rr = ((r - ch) % h + h) % h;
    for (int c = 0; c < w; ++c) {
      int const cc = ((c - cw) % w + w) % w;
      auto const dst = static_cast<std::size_t>(r) * w + c;
      auto const src = static_cast<std::size_t>(rr) * w + cc;
      ore[dst] = buf.ptr[src][0] * s;
      oim[dst] = buf.ptr[src][1] * s;
    }
  }
}

} // namespace

KSpace fft2c(ComplexImage const &img)
{
  KSpace k(img.height(), img.width());
  centered_transform(img, k, FFTW_FORWARD);
  return k;
}

ComplexImage ifft2c(KSpace const &k)
{
  ComplexImage img(k.height(), k.width());
  centered_transform(k, img, FFTW_BACKWARD);
  return img;
}

RealImage magnitude(ComplexGrid const &img)
{
  if (!img.all_finite()) {
    throw DomainError("magnitude input contains non-finite values");
  }
  RealImage out(img.height(), img.width());
  auto re = img.real();
  auto im = img.imag();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
  }
  return out;
}

KSpace normalize_kspace(KSpace const &k)
{
  if (!k.all_finite()) {
    throw DomainError("cannot normalize non-finite k-space");
  }
  double const m = k.max_magnitude();
  if (m == 0.0) {
    throw DomainError("cannot normalize an all-zero k-space");
  }
  KSpace out(k.height(), k.width());
  auto src = k.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = src[i] / m;
  }
  out.set_scale(k.scale() * m);
  return out;
}

KSpace denormalize_kspace(KSpace const &k)
{
  KSpace out(k.height(), k.width());
  auto src = k.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = src[i] * k.scale();
  }
  return out;
}

void require_even(int height, int width)
{
  if (height <= 0 || width <= 0 || height % 2 != 0 || width % 2 != 0) {
    throw ConfigError("grid dimensions must be positive and even, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
}

} // namespace kinr
