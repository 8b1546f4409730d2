#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace kinr::io {

namespace fs = std::filesystem;
using nlohmann::json;

// Little-endian float32 payloads.
std::vector<char> encode_f32(std::span<double const> values);
std::vector<char> encode_f32(std::span<float const> values);
std::vector<double> decode_f32(std::vector<char> const &bytes);

std::vector<char> read_bytes(fs::path const &path);
// Writes to a sibling temporary file and renames it into place.
void write_bytes_atomic(fs::path const &path, std::span<char const> bytes);

json read_json(fs::path const &path);
void write_json_atomic(fs::path const &path, json const &doc);
// Stable serialization used wherever byte-identical re-saves matter.
std::string dump_json(json const &doc);

// Stages a directory under a temporary name; commit() swaps it into place.
class StagedDirectory
{
public:
  explicit StagedDirectory(fs::path target);
  ~StagedDirectory();
  StagedDirectory(StagedDirectory const &) = delete;
  StagedDirectory &operator=(StagedDirectory const &) = delete;

  fs::path const &path() const { return staging_; }
  void commit();

private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

// 16-bit binary PGM, values in [0, 1] scaled to 65535.
void write_pgm16(fs::path const &path, int height, int width, std::span<double const> values);

} // namespace kinr::io
