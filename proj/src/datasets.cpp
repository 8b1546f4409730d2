#include "kinr/datasets.hpp"

#include "kinr/error.hpp"
#include "kinr/io.hpp"
#include "kinr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace kinr {

namespace fs = std::filesystem;
using io::json;

namespace {

struct Ellipse
{
  double cx, cy, a, b, theta, value;

  bool contains(double x, double y) const
  {
    double const dx = x - cx;
    double const dy = y - cy;
    double const c = std::cos(theta);
    double const s = std::sin(theta);
    double const u = (c * dx + s * dy) / a;
    double const v = (-s * dx + c * dy) / b;
    return u * u + v * v <= 1.0;
  }
};

fs::path manifest_path(fs::path const &path)
{
  auto p = path;
  if (p.extension() == ".json") {
    return p;
  }
  if (p.extension() == ".bin") {
    return p.replace_extension(".json");
  }
  return fs::path(p.string() + ".json");
}

template <typename T>
T require_field(json const &doc, char const *key, fs::path const &where)
{
  if (!doc.contains(key)) {
    throw DataError(where.string() + ": manifest is missing '" + key + "'");
  }
  try {
    return doc.at(key).get<T>();
  } catch (json::exception const &) {
    throw DataError(where.string() + ": manifest field '" + key + "' has the wrong type");
  }
}

} // namespace

ComplexImage synth_phantom_image(int size, std::int64_t seed)
{
  if (size < 16 || size % 2 != 0) {
    throw ConfigError("phantom size must be even and at least 16, got " + std::to_string(size));
  }
  CounterRng rng(CounterRng::derive({0x7068616e746f6dULL, static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(size)}));

  Ellipse const background{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0.70, 0.90),
                           rng.uniform(0.75, 0.92), rng.uniform(-0.3, 0.3), rng.uniform(0.2, 0.5)};
  int const count = 3 + static_cast<int>(rng.below(6));
  std::vector<Ellipse> inner;
  for (int i = 0; i < count; ++i) {
    double const rad = rng.uniform(0.0, 0.5);
    double const ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    inner.push_back({background.cx + rad * std::cos(ang), background.cy + rad * std::sin(ang), rng.uniform(0.05, 0.35),
                     rng.uniform(0.05, 0.35), rng.uniform(0.0, std::numbers::pi), rng.uniform(0.2, 1.0)});
  }
  double coeff[6];
  for (auto &c : coeff) {
    c = rng.uniform(-1.0, 1.0);
  }

  ComplexImage img(size, size);
  std::vector<double> mag(static_cast<std::size_t>(size) * size, 0.0);
  for (int r = 0; r < size; ++r) {
    double const y = normalize_index(r, size);
    for (int c = 0; c < size; ++c) {
      double const x = normalize_index(c, size);
      double v = 0.0;
      if (background.contains(x, y)) {
        v = background.value;
        for (auto const &e : inner) {
          if (e.contains(x, y)) {
            v = e.value;
          }
        }
      }
      mag[static_cast<std::size_t>(r) * size + c] = v;
    }
  }
  double const peak = *std::max_element(mag.begin(), mag.end());
  for (int r = 0; r < size; ++r) {
    double const y = normalize_index(r, size);
    for (int c = 0; c < size; ++c) {
      double const x = normalize_index(c, size);
      double const phase = coeff[0] + coeff[1] * x + coeff[2] * y + coeff[3] * x * x + coeff[4] * x * y + coeff[5] * y * y;
      double const m = mag[static_cast<std::size_t>(r) * size + c] / peak;
      img.set(r, c, std::polar(m, phase));
    }
  }
  return img;
}

MRISample make_sample(KSpace const &k, std::string id)
{
  require_even(k.height(), k.width());
  auto norm = normalize_kspace(k);
  for (auto &v : norm.data()) {
    v = static_cast<double>(static_cast<float>(v));
  }
  MRISample s;
  s.image_full = ifft2c(norm);
  s.k_full = std::move(norm);
  s.id = std::move(id);
  return s;
}

MRISample synth_phantom(int size, std::int64_t seed)
{
  return make_sample(fft2c(synth_phantom_image(size, seed)), "phantom_" + std::to_string(seed));
}

ComplexImage downsample2(ComplexImage const &img)
{
  if (img.height() % 2 != 0 || img.width() % 2 != 0) {
    throw ShapeError("downsampling needs even dimensions");
  }
  int const h = img.height() / 2;
  int const w = img.width() / 2;
  ComplexImage out(h, w);
  auto const in = img.data();
  auto o = out.data();
  for (int ch = 0; ch < 2; ++ch) {
    auto const ib = static_cast<std::size_t>(ch) * img.plane_size();
    auto const ob = static_cast<std::size_t>(ch) * out.plane_size();
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        auto const i00 = ib + static_cast<std::size_t>(2 * r) * img.width() + 2 * c;
        auto const i10 = i00 + img.width();
        o[ob + static_cast<std::size_t>(r) * w + c] = 0.25 * (in[i00] + in[i00 + 1] + in[i10] + in[i10 + 1]);
      }
    }
  }
  return out;
}

ComplexImage upsample2(ComplexImage const &img)
{
  int const h = img.height();
  int const w = img.width();
  ComplexImage out(2 * h, 2 * w);
  auto const in = img.data();
  auto o = out.data();
  auto coord = [](int dst, int n, int &i0, int &i1, double &t) {
    double const src = std::max(0.0, (dst + 0.5) / 2.0 - 0.5);
    i0 = std::min(static_cast<int>(src), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    t = src - i0;
  };
  for (int ch = 0; ch < 2; ++ch) {
    auto const ib = static_cast<std::size_t>(ch) * img.plane_size();
    auto const ob = static_cast<std::size_t>(ch) * out.plane_size();
    for (int r = 0; r < 2 * h; ++r) {
      int r0, r1;
      double tr;
      coord(r, h, r0, r1, tr);
      for (int c = 0; c < 2 * w; ++c) {
        int c0, c1;
        double tc;
        coord(c, w, c0, c1, tc);
        auto at = [&](int rr, int cc) { return in[ib + static_cast<std::size_t>(rr) * w + cc]; };
        o[ob + static_cast<std::size_t>(r) * 2 * w + c] = (1 - tr) * ((1 - tc) * at(r0, c0) + tc * at(r0, c1)) +
                                                          tr * ((1 - tc) * at(r1, c0) + tc * at(r1, c1));
      }
    }
  }
  return out;
}

LrTargets make_lr_targets(ComplexImage const &img)
{
  auto lr = downsample2(img);
  auto k = fft2c(lr);
  return {std::move(lr), std::move(k)};
}

TrainingExample build_example(MRISample const &sample, SamplingMask const &mask)
{
  if (sample.k_full.height() != mask.height() || sample.k_full.width() != mask.width()) {
    throw ShapeError("mask shape does not match sample shape");
  }
  auto masked = apply_mask(sample.k_full, mask);
  auto lr = make_lr_targets(sample.image_full);
  TrainingExample ex;
  ex.sample = sample;
  ex.mask = mask;
  ex.i_s = ifft2c(masked.sampled);
  ex.k_s = std::move(masked.sampled);
  ex.i_lr = std::move(lr.i_lr);
  ex.k_lr = std::move(lr.k_lr);
  return ex;
}

void save_sample(MRISample const &sample, fs::path const &dir)
{
  auto const &k = sample.k_full;
  auto const payload = io::encode_f32(k.data());
  io::write_bytes_atomic(dir / (sample.id + ".bin"), payload);
  json manifest = {{"id", sample.id},         {"height", k.height()}, {"width", k.width()},
                   {"dtype", "f32"},          {"layout", "c2hw"},     {"normalized", true},
                   {"scale", k.scale()}};
  io::write_json_atomic(dir / (sample.id + ".json"), manifest);
}

MRISample load_sample(fs::path const &path)
{
  auto const mpath = manifest_path(path);
  if (!fs::exists(mpath)) {
    throw IoError("sample manifest not found: " + mpath.string());
  }
  auto const doc = io::read_json(mpath);
  auto const id = require_field<std::string>(doc, "id", mpath);
  auto const h = require_field<int>(doc, "height", mpath);
  auto const w = require_field<int>(doc, "width", mpath);
  if (require_field<std::string>(doc, "dtype", mpath) != "f32" || require_field<std::string>(doc, "layout", mpath) != "c2hw") {
    throw DataError(mpath.string() + ": only dtype f32 with layout c2hw is supported");
  }
  bool const normalized = require_field<bool>(doc, "normalized", mpath);
  if (h <= 0 || w <= 0) {
    throw ShapeError(mpath.string() + ": non-positive dimensions");
  }
  if (h % 2 != 0 || w % 2 != 0) {
    throw ConfigError(mpath.string() + ": odd dimensions " + std::to_string(h) + "x" + std::to_string(w) +
                      " are not supported");
  }
  auto const bpath = fs::path(mpath).replace_extension(".bin");
  if (!fs::exists(bpath)) {
    throw IoError("sample payload not found: " + bpath.string());
  }
  auto values = io::decode_f32(io::read_bytes(bpath));
  if (values.size() != 2 * static_cast<std::size_t>(h) * w) {
    throw ShapeError(bpath.string() + ": payload holds " + std::to_string(values.size()) + " values, manifest declares 2x" +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  if (!std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); })) {
    throw DataError(bpath.string() + ": payload contains non-finite values");
  }
  KSpace k(h, w, std::move(values));
  if (!normalized) {
    return make_sample(k, id);
  }
  if (doc.contains("scale")) {
    k.set_scale(doc.at("scale").get<double>());
  }
  MRISample s;
  s.image_full = ifft2c(k);
  s.k_full = std::move(k);
  s.id = id;
  return s;
}

void write_index(fs::path const &dir, std::vector<std::string> const &ids)
{
  io::write_json_atomic(dir / "index.json", json{{"samples", ids}});
}

std::vector<MRISample> load_sample_directory(fs::path const &dir)
{
  auto const index = dir / "index.json";
  std::vector<std::string> ids;
  if (fs::exists(index)) {
    ids = io::read_json(index).at("samples").get<std::vector<std::string>>();
  } else {
    if (!fs::is_directory(dir)) {
      throw IoError("sample directory not found: " + dir.string());
    }
    for (auto const &e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".json" && e.path().filename() != "index.json") {
        ids.push_back(e.path().stem().string());
      }
    }
    std::sort(ids.begin(), ids.end());
  }
  std::vector<MRISample> out;
  out.reserve(ids.size());
  for (auto const &id : ids) {
    out.push_back(load_sample(dir / id));
  }
  return out;
}

void save_mask(SamplingMask const &mask, fs::path const &stem)
{
  auto const &g = mask.grid();
  io::write_bytes_atomic(fs::path(stem.string() + ".bin"),
                         std::span<char const>(reinterpret_cast<char const *>(g.data()), g.size()));
  json manifest = {{"id", stem.filename().string()},
                   {"height", mask.height()},
                   {"width", mask.width()},
                   {"dtype", "u8"},
                   {"layout", "hw"},
                   {"family", to_string(mask.family())},
                   {"ratio", mask.target_ratio()},
                   {"acs_fraction", mask.acs_fraction()},
                   {"seed", mask.seed()}};
  io::write_json_atomic(fs::path(stem.string() + ".json"), manifest);
}

SamplingMask load_mask(fs::path const &path)
{
  auto const mpath = manifest_path(path);
  if (!fs::exists(mpath)) {
    throw IoError("mask manifest not found: " + mpath.string());
  }
  auto const doc = io::read_json(mpath);
  auto const h = require_field<int>(doc, "height", mpath);
  auto const w = require_field<int>(doc, "width", mpath);
  auto const bytes = io::read_bytes(fs::path(mpath).replace_extension(".bin"));
  if (bytes.size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError(mpath.string() + ": mask payload size does not match manifest");
  }
  std::vector<std::uint8_t> grid(bytes.begin(), bytes.end());
  return SamplingMask(h, w, std::move(grid), parse_mask_family(require_field<std::string>(doc, "family", mpath)),
                      require_field<double>(doc, "ratio", mpath), require_field<double>(doc, "acs_fraction", mpath),
                      require_field<std::int64_t>(doc, "seed", mpath));
}

void save_complex_grid(ComplexGrid const &grid, fs::path const &stem, std::string const &id)
{
  io::write_bytes_atomic(fs::path(stem.string() + ".bin"), io::encode_f32(grid.data()));
  io::write_json_atomic(fs::path(stem.string() + ".json"), json{{"id", id},
                                                                 {"height", grid.height()},
                                                                 {"width", grid.width()},
                                                                 {"dtype", "f32"},
                                                                 {"layout", "c2hw"},
                                                                 {"normalized", false}});
}

void save_real_grid(RealImage const &img, fs::path const &stem, std::string const &id)
{
  io::write_bytes_atomic(fs::path(stem.string() + ".bin"), io::encode_f32(img.data()));
  io::write_json_atomic(fs::path(stem.string() + ".json"),
                        json{{"id", id}, {"height", img.height()}, {"width", img.width()}, {"dtype", "f32"}, {"layout", "hw"}});
}

} // namespace kinr
