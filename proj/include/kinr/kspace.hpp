#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace kinr {

// Complex 2D grid stored as two real planes: channel 0 holds the real part, channel 1 the
// imaginary part, each H x W row-major.
class ComplexGrid
{
public:
  ComplexGrid() = default;
  ComplexGrid(int height, int width);
  ComplexGrid(int height, int width, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<double const> data() const { return data_; }
  std::span<double> real() { return {data_.data(), plane_size()}; }
  std::span<double const> real() const { return {data_.data(), plane_size()}; }
  std::span<double> imag() { return {data_.data() + plane_size(), plane_size()}; }
  std::span<double const> imag() const { return {data_.data() + plane_size(), plane_size()}; }

  std::complex<double> at(int r, int c) const;
  void set(int r, int c, std::complex<double> v);

  bool all_finite() const;
  double max_magnitude() const;
  double squared_norm() const;

  bool same_shape(ComplexGrid const &other) const { return height_ == other.height_ && width_ == other.width_; }

protected:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

class ComplexImage : public ComplexGrid
{
public:
  using ComplexGrid::ComplexGrid;
};

// k-space grid; zero frequency sits at index (H/2, W/2). `scale` is the factor the data was
// divided by during normalization (1 when never normalized).
class KSpace : public ComplexGrid
{
public:
  using ComplexGrid::ComplexGrid;

  double scale() const { return scale_; }
  void set_scale(double s);

private:
  double scale_ = 1.0;
};

// Non-negative real image (magnitudes, error maps).
class RealImage
{
public:
  RealImage() = default;
  RealImage(int height, int width);
  RealImage(int height, int width, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  std::span<double> data() { return data_; }
  std::span<double const> data() const { return data_; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * width_ + c]; }
  double &operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * width_ + c]; }

  double max() const;
  double min() const;

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// Centered, orthonormal 2D DFT. Index n of an axis of length N corresponds to position (or
// frequency) n - floor(N/2); the transform is scaled by 1/sqrt(H*W) in both directions.
KSpace fft2c(ComplexImage const &img);
ComplexImage ifft2c(KSpace const &k);

RealImage magnitude(ComplexGrid const &img);

// Divides by the maximum complex magnitude and records that factor in `scale`.
KSpace normalize_kspace(KSpace const &k);
// Multiplies the data back by `scale`; the result has scale 1.
KSpace denormalize_kspace(KSpace const &k);

void require_even(int height, int width);

} // namespace kinr
