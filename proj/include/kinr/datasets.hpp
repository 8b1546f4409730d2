#pragma once

#include "kinr/kspace.hpp"
#include "kinr/sampling.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kinr {

// Fully sampled slice. k_full is normalized (max magnitude 1, stored at float32 precision) and
// image_full = ifft2c(k_full).
struct MRISample
{
  KSpace k_full;
  ComplexImage image_full;
  std::string id;
};

struct TrainingExample
{
  MRISample sample;
  SamplingMask mask;
  KSpace k_s;
  ComplexImage i_s;
  ComplexImage i_lr;
  KSpace k_lr;
};

struct LrTargets
{
  ComplexImage i_lr;
  KSpace k_lr;
};

// Ellipse phantom with a smooth polynomial phase; magnitude peak is exactly 1.
ComplexImage synth_phantom_image(int size, std::int64_t seed);
MRISample synth_phantom(int size, std::int64_t seed);

// Normalizes k, rounds it to float32 so the on-disk form is exact, and derives the image.
MRISample make_sample(KSpace const &k, std::string id);

// 2x2 average pooling of both complex channels.
ComplexImage downsample2(ComplexImage const &img);
// Bilinear 2x upsampling (half-pixel centers, edge clamped) of both channels.
ComplexImage upsample2(ComplexImage const &img);
LrTargets make_lr_targets(ComplexImage const &img);

TrainingExample build_example(MRISample const &sample, SamplingMask const &mask);

// `<dir>/<id>.bin` (f32, c2hw) + `<dir>/<id>.json`.
void save_sample(MRISample const &sample, std::filesystem::path const &dir);
// Accepts `<dir>/<id>`, `<dir>/<id>.json` or `<dir>/<id>.bin`.
MRISample load_sample(std::filesystem::path const &path);

// Index of a sample directory: `index.json` {"samples": [ids...]}.
void write_index(std::filesystem::path const &dir, std::vector<std::string> const &ids);
std::vector<MRISample> load_sample_directory(std::filesystem::path const &dir);

// `<stem>.bin` (u8, hw) + `<stem>.json` with family metadata.
void save_mask(SamplingMask const &mask, std::filesystem::path const &stem);
SamplingMask load_mask(std::filesystem::path const &path);

// Raw complex/real grids that accompany emitted images.
void save_complex_grid(ComplexGrid const &grid, std::filesystem::path const &stem, std::string const &id);
void save_real_grid(RealImage const &img, std::filesystem::path const &stem, std::string const &id);

} // namespace kinr
