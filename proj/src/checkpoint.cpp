#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include <json.hpp>

#include "roboka/errors.hpp"
#include "roboka/model.hpp"

namespace roboka {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'B', 'K', 'A'};

using nlohmann::json;

json header_json(const ModelParams& p) {
  const ModelConfig& c = p.config();
  json h;
  h["arch"] = to_string(c.arch);
  h["objective"] = to_string(c.objective);
  h["d_audio"] = c.d_audio;
  h["d_text"] = c.d_text;
  h["grid"] = {{"lo", c.grid.lo}, {"hi", c.grid.hi}, {"intervals", c.grid.intervals}};
  h["kan_base"] = c.kan_base;
  h["unimodal_head"] = to_string(c.unimodal_head);
  h["tau"] = c.tau;
  json params = json::array();
  p.visit([&params](const std::string& name, const auto& m) {
    params.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  h["params"] = std::move(params);
  return h;
}

ModelConfig config_from_json(const json& h) {
  ModelConfig c;
  c.arch = parse_arch(h.at("arch").get<std::string>());
  c.objective = parse_objective(h.at("objective").get<std::string>());
  c.d_audio = h.at("d_audio").get<int>();
  c.d_text = h.at("d_text").get<int>();
  c.grid.lo = h.at("grid").at("lo").get<double>();
  c.grid.hi = h.at("grid").at("hi").get<double>();
  c.grid.intervals = h.at("grid").at("intervals").get<int>();
  c.kan_base = h.at("kan_base").get<bool>();
  c.unimodal_head = parse_classifier_head(h.at("unimodal_head").get<std::string>());
  c.tau = h.at("tau").get<double>();
  return c;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw CheckpointError("checkpoint is truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::uint32_t crc(std::span<const std::uint8_t> bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(c);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint16_t>(out, kCheckpointVersion);
  const std::string header = header_json(params).dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  params.visit([&out](const std::string&, const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) put<double>(out, m.data()[i]);
  });
  put<std::uint32_t>(out, crc(out));
  return out;
}

ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) + 2 + 4 + 4) throw CheckpointError("checkpoint is truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint (bad magic bytes)");

  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint16_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  const auto header_len = get<std::uint32_t>(bytes, pos);
  if (pos + header_len + 4 > bytes.size()) throw CheckpointError("checkpoint is truncated");

  // Verify integrity before trusting any length field beyond the header.
  std::size_t tail = bytes.size() - 4;
  const auto stored_crc = get<std::uint32_t>(bytes, tail);
  if (stored_crc != crc(bytes.first(bytes.size() - 4)))
    throw CheckpointError("checkpoint checksum mismatch");

  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += header_len;

  ModelConfig cfg;
  try {
    cfg = config_from_json(header);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is incomplete: ") + e.what());
  }
  ModelParams params(cfg);

  const json& declared = header.at("params");
  auto views = param_views(params);
  if (declared.size() != views.size())
    throw CheckpointError("checkpoint parameter list does not match its architecture");
  for (std::size_t k = 0; k < views.size(); ++k) {
    const auto& d = declared[k];
    if (d.at("name").get<std::string>() != views[k].name ||
        d.at("rows").get<Eigen::Index>() != views[k].rows ||
        d.at("cols").get<Eigen::Index>() != views[k].cols)
      throw CheckpointError("checkpoint tensor '" + views[k].name + "' has unexpected shape");
  }
  for (auto& v : views) {
    if (pos + sizeof(double) * static_cast<std::size_t>(v.size) > bytes.size() - 4)
      throw CheckpointError("checkpoint is truncated");
    std::memcpy(v.data, bytes.data() + pos, sizeof(double) * static_cast<std::size_t>(v.size));
    pos += sizeof(double) * static_cast<std::size_t>(v.size);
  }
  if (pos != bytes.size() - 4) throw CheckpointError("checkpoint has trailing bytes");
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace roboka
