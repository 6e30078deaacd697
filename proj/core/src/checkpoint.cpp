#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "yoho/config.hpp"
#include "yoho/error.hpp"
#include "yoho/eunet.hpp"
#include "yoho/hash.hpp"

namespace yoho::nn {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint arrays are stored little-endian");

namespace {

constexpr char kMagic[8] = {'Y', 'O', 'H', 'O', 'C', 'K', 'P', 'T'};

std::string group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Encoder: return "encoder";
    case ParamGroup::Decoder: return "decoder";
    case ParamGroup::Edge: return "edge";
    case ParamGroup::Fusion: return "fusion";
  }
  return "?";
}

json shape_of(const Tensor& t) { return json::array({t.channels(), t.batch(), t.height(), t.width()}); }

struct Archive {
  json header;
  std::map<std::string, std::vector<float>> arrays;
  std::map<std::string, std::array<int, 4>> shapes;
};

Archive read_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw Error(ErrorCode::CheckpointMismatch, path.string() + " is not a yoho checkpoint");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::CheckpointMismatch, "unsupported checkpoint version " + std::to_string(version));
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  Archive ar;
  try {
    ar.header = json::parse(header);
    for (const auto& entry : ar.header.at("arrays")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::array<int, 4>>();
      const auto count = entry.at("count").get<std::size_t>();
      std::vector<float> data(count);
      in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
      ar.arrays.emplace(name, std::move(data));
      ar.shapes.emplace(name, shape);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointMismatch, "corrupt checkpoint header: " + std::string(e.what()));
  }
  if (!in) throw Error(ErrorCode::IoFailure, "truncated checkpoint " + path.string());
  return ar;
}

}  // namespace

std::string parameter_hash(EUNet& net, std::optional<ParamGroup> group) {
  Sha256 sha;
  for (const auto& p : net.params()) {
    if (!p.trainable() || (group && p.group != *group)) continue;
    sha.update(p.name);
    sha.update(shape_of(*p.value).dump());
    sha.update(std::span(reinterpret_cast<const std::uint8_t*>(p.value->data()), p.value->size() * sizeof(float)));
  }
  return sha.hex_digest();
}

void save_checkpoint(EUNet& net, const fs::path& path, const std::string& metadata_json) {
  json arrays = json::array();
  std::size_t offset = 0;
  const ParamList params = net.params();
  for (const auto& p : params) {
    arrays.push_back({{"name", p.name},
                      {"shape", shape_of(*p.value)},
                      {"count", p.value->size()},
                      {"offset", offset},
                      {"group", group_name(p.group)},
                      {"trainable", p.trainable()}});
    offset += p.value->size() * sizeof(float);
  }
  json meta;
  try {
    meta = json::parse(metadata_json);
  } catch (const json::exception&) {
    meta = metadata_json;
  }
  const json header{{"format_version", kCheckpointVersion},
                    {"net", json::parse(to_json(net.config()))},
                    {"arrays", arrays},
                    {"metadata", meta}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> bytes;
  bytes.reserve(8 + 4 + 8 + text.size() + offset);
  auto append = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  };
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t header_len = text.size();
  append(kMagic, 8);
  append(&version, sizeof version);
  append(&header_len, sizeof header_len);
  append(text.data(), text.size());
  for (const auto& p : params) append(p.value->data(), p.value->size() * sizeof(float));
  write_file_atomic(path, bytes);
}

void load_arrays(EUNet& net, const fs::path& path, const std::string& prefix) {
  const Archive ar = read_archive(path);
  for (auto& p : net.params()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    auto it = ar.arrays.find(p.name);
    if (it == ar.arrays.end()) throw Error(ErrorCode::CheckpointMismatch, "checkpoint lacks array " + p.name);
    const auto& shape = ar.shapes.at(p.name);
    const Tensor& t = *p.value;
    if (shape != std::array<int, 4>{t.channels(), t.batch(), t.height(), t.width()}) {
      throw Error(ErrorCode::CheckpointMismatch, "shape mismatch for " + p.name);
    }
    std::copy(it->second.begin(), it->second.end(), p.value->data());
  }
}

EUNet load_checkpoint(const fs::path& path) {
  const Archive ar = read_archive(path);
  NetworkConfig cfg = network_config_from_json(ar.header.at("net").dump());
  cfg.use_pretrained_encoder = false;
  EUNet net(cfg);
  load_arrays(net, path);
  return net;
}

std::string checkpoint_metadata(const fs::path& path) { return read_archive(path).header.value("metadata", json::object()).dump(); }

}  // namespace yoho::nn
