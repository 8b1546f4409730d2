#include "kinr/io.hpp"

#include "kinr/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace kinr::io {

namespace {

void put_f32(std::vector<char> &out, float f)
{
  auto bits = std::bit_cast<std::uint32_t>(f);
  if constexpr (std::endian::native == std::endian::big) {
    bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
  }
  char buf[4];
  std::memcpy(buf, &bits, 4);
  out.insert(out.end(), buf, buf + 4);
}

fs::path temp_sibling(fs::path const &path)
{
  static thread_local std::mt19937_64 gen{std::random_device{}()};
  return path.parent_path() / (path.filename().string() + ".tmp" + std::to_string(gen() % 1000000));
}

} // namespace

std::vector<char> encode_f32(std::span<double const> values)
{
  std::vector<char> out;
  out.reserve(values.size() * 4);
  for (double v : values) {
    put_f32(out, static_cast<float>(v));
  }
  return out;
}

std::vector<char> encode_f32(std::span<float const> values)
{
  std::vector<char> out;
  out.reserve(values.size() * 4);
  for (float v : values) {
    put_f32(out, v);
  }
  return out;
}

std::vector<double> decode_f32(std::vector<char> const &bytes)
{
  if (bytes.size() % 4 != 0) {
    throw DataError("float32 payload length is not a multiple of 4");
  }
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) {
      bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
    }
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

std::vector<char> read_bytes(fs::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes_atomic(fs::path const &path, std::span<char const> bytes)
{
  if (!path.parent_path().empty()) {
    fs::create_directories(path.parent_path());
  }
  auto const tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot write " + tmp.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw IoError("short write to " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

json read_json(fs::path const &path)
{
  auto const bytes = read_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (json::parse_error const &e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::string dump_json(json const &doc) { return doc.dump(2) + "\n"; }

void write_json_atomic(fs::path const &path, json const &doc)
{
  auto const text = dump_json(doc);
  write_bytes_atomic(path, std::span<char const>(text.data(), text.size()));
}

StagedDirectory::StagedDirectory(fs::path target)
  : target_{std::move(target)}
  , staging_{temp_sibling(target_)}
{
  if (!target_.parent_path().empty()) {
    fs::create_directories(target_.parent_path());
  }
  fs::create_directories(staging_);
}

StagedDirectory::~StagedDirectory()
{
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void StagedDirectory::commit()
{
  fs::path old;
  if (fs::exists(target_)) {
    old = temp_sibling(target_);
    fs::rename(target_, old);
  }
  fs::rename(staging_, target_);
  committed_ = true;
  if (!old.empty()) {
    fs::remove_all(old);
  }
}

void write_pgm16(fs::path const &path, int height, int width, std::span<double const> values)
{
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("PGM payload does not match its dimensions");
  }
  std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n";
  std::vector<char> bytes(header.begin(), header.end());
  for (double v : values) {
    auto const q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    bytes.push_back(static_cast<char>(q >> 8));
    bytes.push_back(static_cast<char>(q & 0xff));
  }
  write_bytes_atomic(path, bytes);
}

} // namespace kinr::io
