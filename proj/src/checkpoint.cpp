#include "kinr/checkpoint.hpp"

#include "kinr/error.hpp"
#include "kinr/io.hpp"

#include <bit>
#include <cstring>

namespace kinr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char const *kManifest = "manifest.json";
constexpr char const *kPayload = "tensors.bin";

std::uint64_t fnv1a(std::span<char const> bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v)
{
  static char const digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) {
    s[i] = digits[v & 0xf];
  }
  return s;
}

void append(std::vector<TensorRecord> const &group, char const *kind, json &index, std::vector<char> &payload)
{
  for (auto const &t : group) {
    std::size_t expected = 1;
    for (int d : t.shape) {
      expected *= static_cast<std::size_t>(d);
    }
    if (expected != t.data.size()) {
      throw Error("tensor " + t.name + " has a shape/data mismatch");
    }
    auto const bytes = io::encode_f32(std::span<float const>(t.data));
    index.push_back({{"group", kind}, {"name", t.name}, {"shape", t.shape}, {"offset", payload.size()}, {"count", t.data.size()}});
    payload.insert(payload.end(), bytes.begin(), bytes.end());
  }
}

} // namespace

void save_checkpoint(Checkpoint const &ckpt, fs::path const &dir)
{
  json index = json::array();
  std::vector<char> payload;
  append(ckpt.parameters, "param", index, payload);
  append(ckpt.adam_m, "adam_m", index, payload);
  append(ckpt.adam_v, "adam_v", index, payload);
  json manifest{{"format_version", kCheckpointFormatVersion},
                {"epoch", ckpt.epoch},
                {"step", ckpt.step},
                {"rng", {{"key", ckpt.rng_key}, {"counter", ckpt.rng_counter}}},
                {"config", ckpt.config},
                {"adam_steps", ckpt.adam_steps},
                {"tensors", index},
                {"payload_bytes", payload.size()},
                {"payload_fnv1a", hex(fnv1a(payload))}};
  if (!dir.parent_path().empty()) {
    fs::create_directories(dir.parent_path());
  }
  io::StagedDirectory staged(dir);
  io::write_bytes_atomic(staged.path() / kPayload, payload);
  io::write_json_atomic(staged.path() / kManifest, manifest);
  staged.commit();
}

Checkpoint load_checkpoint(fs::path const &dir)
{
  if (!fs::is_directory(dir) || !fs::exists(dir / kManifest)) {
    throw IoError("no checkpoint at " + dir.string());
  }
  auto const manifest = io::read_json(dir / kManifest);
  try {
    int const version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw FormatVersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kCheckpointFormatVersion) + ")");
    }
    auto const payload = io::read_bytes(dir / kPayload);
    if (payload.size() != manifest.at("payload_bytes").get<std::size_t>() ||
        hex(fnv1a(payload)) != manifest.at("payload_fnv1a").get<std::string>()) {
      throw DataError("checkpoint payload is truncated or corrupt");
    }
    Checkpoint ckpt;
    ckpt.config = manifest.at("config");
    ckpt.epoch = manifest.at("epoch").get<int>();
    ckpt.step = manifest.at("step").get<std::int64_t>();
    ckpt.rng_key = manifest.at("rng").at("key").get<std::uint64_t>();
    ckpt.rng_counter = manifest.at("rng").at("counter").get<std::uint64_t>();
    ckpt.adam_steps = manifest.at("adam_steps").get<std::map<std::string, std::int64_t>>();
    for (auto const &entry : manifest.at("tensors")) {
      TensorRecord t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<int>>();
      auto const offset = entry.at("offset").get<std::size_t>();
      auto const count = entry.at("count").get<std::size_t>();
      if (offset + 4 * count > payload.size()) {
        throw DataError("tensor " + t.name + " lies outside the payload");
      }
      t.data.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, payload.data() + offset + 4 * i, 4);
        if constexpr (std::endian::native == std::endian::big) {
          bits = __builtin_bswap32(bits);
        }
        t.data[i] = std::bit_cast<float>(bits);
      }
      auto const group = entry.at("group").get<std::string>();
      if (group == "param") {
        ckpt.parameters.push_back(std::move(t));
      } else if (group == "adam_m") {
        ckpt.adam_m.push_back(std::move(t));
      } else if (group == "adam_v") {
        ckpt.adam_v.push_back(std::move(t));
      } else {
        throw DataError("unknown tensor group '" + group + "'");
      }
    }
    return ckpt;
  } catch (json::exception const &e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

} // namespace kinr
