#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tinyclap/audio.hpp"
#include "tinyclap/encoder.hpp"
#include "tinyclap/mel.hpp"
#include "tinyclap/store.hpp"

namespace tinyclap {

struct AudioItem {
  std::string id;
  std::optional<std::string> label;
  AudioClip clip;  // mono, model sample rate
};

struct AudioDataset {
  std::vector<AudioItem> items;
  std::uint64_t fingerprint = 0;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
};

/// Decodes and resamples every clip. Missing or unreadable files raise a
/// DataError naming the sample id.
AudioDataset load_dataset(const DatasetManifest& manifest, int threads = 1);
AudioDataset load_dataset(const std::filesystem::path& manifest_path, int threads = 1);

/// In-memory dataset; clips are resampled to the model rate if needed.
AudioDataset make_dataset(std::vector<AudioItem> items);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Crop -> log-mel -> frequency normalization.
MelSpectrogram prepare_mel(const AudioClip& cropped, const MelFrontend& frontend);

/// Center-crop features for every item, in dataset order.
std::vector<MelSpectrogram> center_crop_mels(const AudioDataset& dataset, const MelFrontend& frontend,
                                             double crop_seconds, int threads = 1);

struct InferenceOptions {
  double crop_seconds = 5.0;
  int batch_size = 32;
  int threads = 1;
};

/// Un-normalized projections (D x output_dim) over center crops.
Eigen::MatrixXf project_dataset(const StudentEncoder& encoder, const AudioDataset& dataset,
                                const FrontendSettings& frontend, const InferenceOptions& options = {});

}  // namespace tinyclap
