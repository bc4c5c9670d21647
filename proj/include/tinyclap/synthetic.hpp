#pragma once

// Seeded synthetic audio for desk-scale experiments: random tonal/noise
// mixtures for self-distillation and a small labeled tone-class corpus for
// zero-shot evaluation.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tinyclap/dataset.hpp"
#include "tinyclap/zeroshot.hpp"

namespace tinyclap {

/// `count` unlabeled clips of `seconds` at the model rate, ids
/// "<prefix>_000", "<prefix>_001", ...
AudioDataset make_mixture_corpus(std::size_t count, std::uint64_t seed, double seconds = 1.5,
                                 const std::string& prefix = "clip");

/// "hum", "whistle", "chirp", "static".
const std::vector<std::string>& tone_labels();

AudioClip synth_tone_clip(const std::string& label, Rng& rng, double seconds);

struct LabeledCorpus {
  AudioDataset train;
  AudioDataset test;
  std::vector<std::string> labels;
};

LabeledCorpus make_tone_corpus(std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed,
                               double seconds = 1.5);

/// First `n_train` items vs the rest, order preserved.
std::pair<AudioDataset, AudioDataset> split_dataset(const AudioDataset& dataset, std::size_t n_train);

/// Writes <dir>/audio/<id>.wav (float32) and <dir>/<manifest_name>; returns
/// the manifest as written.
DatasetManifest write_dataset(const AudioDataset& dataset, const std::filesystem::path& dir,
                              const std::string& manifest_name);

/// Normalized per-class mean of the teacher's normalized embeddings, a
/// stand-in for class text embeddings.
ClassEmbeddingSet prototype_classes(const StudentEncoder& teacher, const AudioDataset& labeled,
                                    const std::vector<std::string>& labels, const FrontendSettings& frontend,
                                    const InferenceOptions& options = {});

/// Normalized teacher embeddings keyed by sample id.
EmbeddingTable teacher_table(const StudentEncoder& teacher, const AudioDataset& dataset,
                             const FrontendSettings& frontend, const InferenceOptions& options = {});

}  // namespace tinyclap
