#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include <json.hpp>

#include "roboka/data.hpp"
#include "roboka/errors.hpp"
#include "roboka/parallel.hpp"

namespace roboka {

static_assert(std::endian::native == std::endian::little,
              "embedding blobs are little-endian float32");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ManifestRow {
  CallRecord meta;
  std::string audio_path, text_path;
  std::array<Eigen::Index, 2> audio_shape{}, text_shape{};
};

std::array<Eigen::Index, 2> parse_shape(const json& j, const std::string& id, const char* what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    throw DataError("record '" + id + "': " + what + " must be [T, d]");
  const auto t = j[0].get<Eigen::Index>(), d = j[1].get<Eigen::Index>();
  if (t < 1 || d < 1)
    throw DataError("record '" + id + "': " + what + " must have T >= 1 and d >= 1");
  return {t, d};
}

ManifestRow parse_row(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("manifest line " + std::to_string(line_no) + " is not valid JSON: " + e.what());
  }
  ManifestRow row;
  try {
    row.meta.id = j.at("id").get<std::string>();
    const json& label = j.at("label");
    if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1))
      throw DataError("record '" + row.meta.id + "': unknown label " + label.dump());
    row.meta.label = label.get<int>();
    row.meta.speaker = j.at("speaker").get<std::string>();
    row.meta.engine = j.at("engine").get<std::string>();
    row.meta.emotion = j.at("emotion").get<std::string>();
    row.meta.transcript_id = j.at("transcript_id").get<std::string>();
    row.audio_path = j.at("audio_path").get<std::string>();
    row.text_path = j.at("text_path").get<std::string>();
    row.audio_shape = parse_shape(j.at("audio_shape"), row.meta.id, "audio_shape");
    row.text_shape = parse_shape(j.at("text_shape"), row.meta.id, "text_shape");
  } catch (const json::exception& e) {
    throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
  }
  return row;
}

EmbeddingSequence read_blob(const fs::path& path, std::array<Eigen::Index, 2> shape,
                            const std::string& id, const char* what) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw DataError("record '" + id + "': missing " + what + " blob " + path.string());
  const auto expected = static_cast<std::uintmax_t>(shape[0] * shape[1]) * sizeof(float);
  if (size != expected)
    throw DataError("record '" + id + "': " + what + " blob has " + std::to_string(size) +
                    " bytes but shape [" + std::to_string(shape[0]) + ", " +
                    std::to_string(shape[1]) + "] needs " + std::to_string(expected));
  EmbeddingSequence m(shape[0], shape[1]);
  std::ifstream f(path, std::ios::binary);
  f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
  if (!f) throw DataError("record '" + id + "': failed reading " + path.string());
  return m;
}

void write_blob(const fs::path& path, const EmbeddingSequence& m) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!f) throw DataError("failed writing " + path.string());
}

}  // namespace

Dataset load_dataset(const fs::path& dir, int threads) {
  const fs::path manifest = dir / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open " + manifest.string());

  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    rows.push_back(parse_row(line, line_no));
    if (!seen.insert(rows.back().meta.id).second)
      throw DataError("duplicate record id '" + rows.back().meta.id + "'");
  }

  for (const auto& r : rows) {
    if (r.audio_shape[1] != rows.front().audio_shape[1] ||
        r.text_shape[1] != rows.front().text_shape[1])
      throw DataError("record '" + r.meta.id + "': embedding width differs from the dataset's");
  }

  Dataset out(rows.size());
  parallel_for(static_cast<int>(rows.size()), threads, [&](int i) {
    const auto& r = rows[i];
    out[i] = r.meta;
    out[i].audio = read_blob(dir / r.audio_path, r.audio_shape, r.meta.id, "audio");
    out[i].text = read_blob(dir / r.text_path, r.text_shape, r.meta.id, "text");
  });
  return out;
}

void write_dataset(const Dataset& records, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "blobs", ec);
  if (ec) throw DataError("cannot create " + (dir / "blobs").string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& r : records) {
    const std::string audio_path = "blobs/" + r.id + ".audio.f32";
    const std::string text_path = "blobs/" + r.id + ".text.f32";
    write_blob(dir / audio_path, r.audio);
    write_blob(dir / text_path, r.text);
    json j = {{"id", r.id},
              {"label", r.label},
              {"speaker", r.speaker},
              {"engine", r.engine},
              {"emotion", r.emotion},
              {"transcript_id", r.transcript_id},
              {"audio_path", audio_path},
              {"audio_shape", {r.audio.rows(), r.audio.cols()}},
              {"text_path", text_path},
              {"text_shape", {r.text.rows(), r.text.cols()}}};
    manifest << j.dump() << '\n';
  }
  if (!manifest) throw DataError("failed writing manifest in " + dir.string());
}

std::string dataset_hash(const Dataset& records) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  auto feed_str = [ctx](const std::string& s) {
    const std::uint64_t n = s.size();
    EVP_DigestUpdate(ctx, &n, sizeof n);
    EVP_DigestUpdate(ctx, s.data(), s.size());
  };
  auto feed_seq = [ctx](const EmbeddingSequence& m) {
    const std::int64_t shape[2] = {m.rows(), m.cols()};
    EVP_DigestUpdate(ctx, shape, sizeof shape);
    EVP_DigestUpdate(ctx, m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
  };
  for (const auto& r : records) {
    feed_str(r.id);
    const std::int32_t label = r.label;
    EVP_DigestUpdate(ctx, &label, sizeof label);
    feed_str(r.speaker);
    feed_str(r.engine);
    feed_str(r.emotion);
    feed_str(r.transcript_id);
    feed_seq(r.audio);
    feed_seq(r.text);
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

std::vector<const CallRecord*> select(const Dataset& records, std::span<const std::string> ids) {
  std::map<std::string_view, const CallRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  std::vector<const CallRecord*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("split refers to unknown record id '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace roboka
