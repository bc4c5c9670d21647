#include "tinyclap/store.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "tinyclap/hash.hpp"
#include "tinyclap/io_util.hpp"

namespace tinyclap {

namespace {

constexpr std::size_t kFixedHeader = 16;

std::size_t align8(std::size_t n) { return (n + 7) & ~std::size_t{7}; }

}  // namespace

std::vector<std::byte> encode_checkpoint(const StudentEncoder& encoder, const CheckpointMeta& meta) {
  ByteWriter payload;
  nlohmann::json directory = nlohmann::json::object();
  for (const auto& [name, t] : encoder.named_tensors()) {
    payload.pad_to(8);
    const std::size_t offset = payload.size();
    for (Index i = 0; i < t->size(); ++i) payload.put_f32((*t)[i]);
    directory[name] = {{"dtype", "f32"}, {"shape", t->shape()}, {"offset", offset}, {"length", payload.size() - offset}};
  }
  Fnv1a64 checksum;
  checksum.update(payload.bytes());

  nlohmann::json header;
  header["config"] = encoder.config();
  header["preset"] = meta.preset;
  header["seed"] = encoder.seed();
  header["init"] = meta.init;
  header["frontend"] = meta.frontend;
  if (const auto& p = encoder.prune_info()) {
    header["prune"] = {{"r", p->r()}, {"original_dim", p->original_dim}, {"indices", p->kept},
                       {"ranking_fingerprint", meta.ranking_fingerprint}};
  } else {
    header["prune"] = nullptr;
  }
  header["payload_fnv1a64"] = to_hex(checksum.digest());
  header["tensors"] = std::move(directory);
  const std::string text = header.dump();

  ByteWriter out;
  out.raw("TCLP");
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint64_t>(text.size());
  out.raw(text);
  out.pad_to(8);
  out.raw(payload.bytes());
  return std::move(out).bytes();
}

LoadedCheckpoint decode_checkpoint(std::span<const std::byte> bytes, const std::string& source) {
  ByteReader in(bytes, source);
  if (in.get_string(4, "magic") != "TCLP") in.fail_at(0, "bad magic (expected \"TCLP\")");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    in.fail_at(4, "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const auto header_len = in.get<std::uint64_t>("header length");
  if (header_len > in.remaining())
    in.fail_at(8, "truncated file: header length " + std::to_string(header_len) + " exceeds the " +
                      std::to_string(in.remaining()) + " remaining bytes");
  const std::string text = in.get_string(static_cast<std::size_t>(header_len), "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    in.fail_at(kFixedHeader + e.byte, std::string("malformed JSON header: ") + e.what());
  }

  const std::size_t payload_start = align8(kFixedHeader + static_cast<std::size_t>(header_len));
  if (payload_start > bytes.size()) in.fail_at(bytes.size(), "truncated file: payload padding missing");
  const std::span<const std::byte> payload = bytes.subspan(payload_start);

  LoadedCheckpoint out;
  PhiNetConfig config;
  std::uint64_t seed = 0;
  std::optional<PruneInfo> prune;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, length;
  };
  std::vector<Entry> entries;
  std::string expected_checksum;
  try {
    config = header.at("config").get<PhiNetConfig>();
    seed = header.at("seed").get<std::uint64_t>();
    out.meta.preset = header.at("preset").get<std::string>();
    out.meta.init = header.at("init").get<std::string>();
    out.meta.frontend = header.at("frontend").get<FrontendSettings>();
    const nlohmann::json& p = header.at("prune");
    if (!p.is_null()) {
      PruneInfo info;
      info.original_dim = p.at("original_dim").get<Index>();
      info.kept = p.at("indices").get<std::vector<Index>>();
      if (p.at("r").get<Index>() != info.r())
        in.fail_at(kFixedHeader, "prune metadata: r does not match the number of indices");
      out.meta.ranking_fingerprint = p.value("ranking_fingerprint", "");
      prune = std::move(info);
    }
    expected_checksum = header.at("payload_fnv1a64").get<std::string>();
    for (const auto& [name, e] : header.at("tensors").items()) {
      if (e.at("dtype").get<std::string>() != "f32")
        in.fail_at(kFixedHeader, "tensor '" + name + "' has unsupported dtype " + e.at("dtype").dump());
      entries.push_back({name, e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>(),
                         e.at("length").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    in.fail_at(kFixedHeader, std::string("invalid header field: ") + e.what());
  }
  try {
    config.validate();
  } catch (const ContractError& e) {
    in.fail_at(kFixedHeader, std::string("invalid config in header: ") + e.what());
  }

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
  std::size_t end = 0;
  const Entry* prev = nullptr;
  for (const Entry& e : entries) {
    const std::size_t abs = payload_start + e.offset;
    for (Index d : e.shape)
      if (d < 0) in.fail_at(kFixedHeader, "tensor '" + e.name + "' has a negative dimension");
    if (e.offset % 8 != 0) in.fail_at(abs, "tensor '" + e.name + "' offset is not 8-byte aligned");
    if (e.length != static_cast<std::size_t>(shape_size(e.shape)) * 4)
      in.fail_at(abs, "tensor '" + e.name + "' length " + std::to_string(e.length) + " does not match shape " +
                          to_string(e.shape));
    if (prev && e.offset < end)
      in.fail_at(abs, "tensor '" + e.name + "' overlaps tensor '" + prev->name + "'");
    if (e.offset + e.length > payload.size())
      in.fail_at(bytes.size(), "truncated file: tensor '" + e.name + "' needs bytes up to " +
                                   std::to_string(abs + e.length));
    end = e.offset + e.length;
    prev = &e;
  }
  if (end != payload.size())
    in.fail_at(payload_start + end, std::to_string(payload.size() - end) + " unexpected trailing bytes");

  Fnv1a64 checksum;
  checksum.update(payload);
  if (to_hex(checksum.digest()) != expected_checksum)
    in.fail_at(payload_start, "payload checksum mismatch (expected " + expected_checksum + ", found " +
                                  to_hex(checksum.digest()) + ")");

  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  for (const Entry& e : entries) {
    Tensor<float> t(e.shape);
    const std::byte* p = payload.data() + e.offset;
    for (Index i = 0; i < t.size(); ++i) t[i] = f32_from_bits(le_load<std::uint32_t>(p + 4 * i));
    if (!t.all_finite()) in.fail_at(payload_start + e.offset, "tensor '" + e.name + "' contains non-finite values");
    tensors.emplace_back(e.name, std::move(t));
  }
  out.encoder = StudentEncoder::from_tensors(config, seed, std::move(prune), tensors);
  return out;
}

void save_checkpoint(const StudentEncoder& encoder, const CheckpointMeta& meta, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(encoder, meta));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = read_file(path);
  return decode_checkpoint(bytes, path.string());
}

const EmbeddingRecord* EmbeddingTable::find(std::string_view id) const {
  for (const EmbeddingRecord& r : records)
    if (r.id == id) return &r;
  return nullptr;
}

void EmbeddingTable::require_unique_ids() const {
  std::set<std::string_view> seen;
  for (const EmbeddingRecord& r : records)
    if (!seen.insert(r.id).second) throw FormatError("embedding file: duplicate id '" + r.id + "'");
}

std::vector<std::byte> encode_embeddings(const EmbeddingTable& table) {
  table.require_unique_ids();
  ByteWriter w;
  w.raw("TEMB");
  w.put<std::uint32_t>(kEmbeddingVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table.dim));
  w.put<std::uint64_t>(table.records.size());
  for (const EmbeddingRecord& r : table.records) {
    if (r.vector.size() != table.dim)
      throw ContractError("embedding '" + r.id + "' has dimension " + std::to_string(r.vector.size()) + ", table has " +
                          std::to_string(table.dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.id.size()));
    w.raw(r.id);
    for (Index i = 0; i < r.vector.size(); ++i) w.put_f32(r.vector[i]);
  }
  return std::move(w).bytes();
}

EmbeddingTable decode_embeddings(std::span<const std::byte> bytes, const std::string& source,
                                 std::optional<Index> expected_dim) {
  ByteReader in(bytes, source);
  if (in.get_string(4, "magic") != "TEMB") in.fail_at(0, "bad magic (expected \"TEMB\")");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kEmbeddingVersion)
    in.fail_at(4, "unsupported embedding file version " + std::to_string(version) + " (expected " +
                      std::to_string(kEmbeddingVersion) + ")");
  EmbeddingTable table;
  table.dim = in.get<std::uint32_t>("dim");
  const auto count = in.get<std::uint64_t>("count");
  if (expected_dim && *expected_dim != table.dim)
    throw ContractError(source + ": embedding dimension " + std::to_string(table.dim) + " does not match expected " +
                        std::to_string(*expected_dim));
  // Each record needs at least 4 + 4 * dim bytes; reject absurd counts early.
  if (count > in.remaining() / (4 + 4 * static_cast<std::uint64_t>(table.dim)))
    in.fail("truncated file: " + std::to_string(count) + " records cannot fit in " + std::to_string(in.remaining()) +
            " bytes");
  std::set<std::string> seen;
  table.records.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::size_t record_pos = in.position();
    const auto id_len = in.get<std::uint32_t>("id length");
    EmbeddingRecord r;
    r.id = in.get_string(id_len, "id");
    if (!seen.insert(r.id).second) in.fail_at(record_pos, "duplicate id '" + r.id + "'");
    r.vector.resize(table.dim);
    for (Index i = 0; i < table.dim; ++i) r.vector[i] = in.get_f32("vector");
    if (!r.vector.allFinite()) in.fail_at(record_pos, "embedding '" + r.id + "' contains non-finite values");
    table.records.push_back(std::move(r));
  }
  if (in.remaining() != 0) in.fail(std::to_string(in.remaining()) + " unexpected trailing bytes");
  return table;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  write_file_atomic(path, encode_embeddings(table));
}

EmbeddingTable read_embeddings(const std::filesystem::path& path, std::optional<Index> expected_dim) {
  const std::vector<std::byte> bytes = read_file(path);
  return decode_embeddings(bytes, path.string(), expected_dim);
}

std::uint64_t DatasetManifest::fingerprint() const {
  Fnv1a64 h;
  for (const ManifestEntry& e : entries) {
    h.update(e.id);
    h.update(std::string_view("\x1f"));
    h.update(e.stored_path.empty() ? e.wav_path.generic_string() : e.stored_path);
    h.update(std::string_view("\x1f"));
    if (e.label) h.update(*e.label);
    h.update(std::string_view("\x1e"));
  }
  return h.digest();
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir, const std::string& source) {
  DatasetManifest manifest;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto fail = [&](const std::string& what) {
      return FormatError(source + ": line " + std::to_string(line_no) + ": " + what);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw fail("expected a JSON object");
    ManifestEntry entry;
    try {
      entry.id = j.at("id").get<std::string>();
      entry.stored_path = j.at("wav_path").get<std::string>();
      const std::filesystem::path p = entry.stored_path;
      entry.wav_path = p.is_absolute() ? p : base_dir / p;
      if (j.contains("label") && !j["label"].is_null()) entry.label = j["label"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("invalid entry: ") + e.what());
    }
    if (entry.id.empty()) throw fail("empty id");
    if (!ids.insert(entry.id).second) throw fail("duplicate id '" + entry.id + "'");
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = read_file(path);
  const std::string text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  return parse_manifest(text, path.parent_path(), path.string());
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const ManifestEntry& e : manifest.entries) {
    nlohmann::json j{{"id", e.id}, {"wav_path", e.stored_path.empty() ? e.wav_path.generic_string() : e.stored_path}};
    if (e.label) j["label"] = *e.label;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  write_text_atomic(path, format_manifest(manifest));
}

}  // namespace tinyclap
