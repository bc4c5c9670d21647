#pragma once

// On-disk formats. All integers little-endian.
//
// Checkpoint (.tclp)
//   0   "TCLP"
//   4   u32 version (1)
//   8   u64 header length H
//   16  H bytes of UTF-8 JSON header
//       zero padding to the next multiple of 8 -> payload start P
//   P   tensors as raw f32, each at an 8-byte aligned offset relative to P
// The header carries config, preset, seed, initialization scheme, front-end
// settings, prune metadata, an FNV-1a-64 checksum of the payload, and the
// tensor directory name -> {dtype, shape, offset, length}.
//
// Embedding file (.temb)
//   "TEMB", u32 version (1), u32 dim, u64 count,
//   then count x {u32 id length, id bytes, dim x f32}
//
// Dataset manifest: JSON lines {"id": ..., "wav_path": ..., "label": ...};
// relative paths resolve against the manifest's directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyclap/encoder.hpp"
#include "tinyclap/mel.hpp"

namespace tinyclap {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kEmbeddingVersion = 1;

struct CheckpointMeta {
  std::string preset;  // empty for custom configurations
  FrontendSettings frontend;
  std::string init = "kaiming-uniform fan-in (gain sqrt 2); zero biases; norm weight 1, bias 0";
  /// Ranking fingerprint the prune step consumed, if any.
  std::string ranking_fingerprint;
};

struct LoadedCheckpoint {
  StudentEncoder encoder;
  CheckpointMeta meta;
};

std::vector<std::byte> encode_checkpoint(const StudentEncoder& encoder, const CheckpointMeta& meta);
LoadedCheckpoint decode_checkpoint(std::span<const std::byte> bytes, const std::string& source = "<memory>");
void save_checkpoint(const StudentEncoder& encoder, const CheckpointMeta& meta, const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

struct EmbeddingRecord {
  std::string id;
  Eigen::VectorXf vector;
};

struct EmbeddingTable {
  Index dim = 0;
  std::vector<EmbeddingRecord> records;

  const EmbeddingRecord* find(std::string_view id) const;
  /// Throws FormatError naming the first duplicated id.
  void require_unique_ids() const;
};

std::vector<std::byte> encode_embeddings(const EmbeddingTable& table);
/// Validates every invariant; `expected_dim` mismatches are ContractErrors.
EmbeddingTable decode_embeddings(std::span<const std::byte> bytes, const std::string& source = "<memory>",
                                 std::optional<Index> expected_dim = std::nullopt);
void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embeddings(const std::filesystem::path& path, std::optional<Index> expected_dim = std::nullopt);

struct ManifestEntry {
  std::string id;
  std::filesystem::path wav_path;  // resolved
  std::string stored_path;         // as written in the manifest
  std::optional<std::string> label;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  /// Hash of the ids, stored paths and labels in order.
  std::uint64_t fingerprint() const;
};

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir,
                               const std::string& source = "<memory>");
DatasetManifest read_manifest(const std::filesystem::path& path);
/// One JSON object per line, paths written as stored.
std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace tinyclap
