#include "tinyclap/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "tinyclap/errors.hpp"

namespace tinyclap {

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

AudioDataset load_dataset(const DatasetManifest& manifest, int threads) {
  AudioDataset out;
  out.items.resize(manifest.size());
  parallel_for(manifest.size(), threads, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    AudioClip clip;
    try {
      clip = read_wav(e.wav_path);
    } catch (const Error& err) {
      throw DataError("sample '" + e.id + "': " + err.what());
    }
    if (clip.sample_rate != kModelSampleRate) clip = resample(clip);
    out.items[i] = AudioItem{e.id, e.label, std::move(clip)};
  });
  out.fingerprint = manifest.fingerprint();
  return out;
}

AudioDataset load_dataset(const std::filesystem::path& manifest_path, int threads) {
  return load_dataset(read_manifest(manifest_path), threads);
}

AudioDataset make_dataset(std::vector<AudioItem> items) {
  DatasetManifest manifest;
  for (AudioItem& item : items) {
    item.clip.validate();
    if (item.clip.sample_rate != kModelSampleRate) item.clip = resample(item.clip);
    manifest.entries.push_back({item.id, {}, "audio/" + item.id + ".wav", item.label});
  }
  AudioDataset out{std::move(items), manifest.fingerprint()};
  return out;
}

MelSpectrogram prepare_mel(const AudioClip& cropped, const MelFrontend& frontend) {
  return normalize_freq_axis(frontend.compute(cropped));
}

std::vector<MelSpectrogram> center_crop_mels(const AudioDataset& dataset, const MelFrontend& frontend,
                                             double crop_seconds, int threads) {
  std::vector<MelSpectrogram> mels(dataset.size());
  parallel_for(dataset.size(), threads, [&](std::size_t i) {
    mels[i] = prepare_mel(center_crop(dataset.items[i].clip, crop_seconds), frontend);
  });
  return mels;
}

Eigen::MatrixXf project_dataset(const StudentEncoder& encoder, const AudioDataset& dataset,
                                const FrontendSettings& frontend, const InferenceOptions& options) {
  if (options.batch_size < 1) throw ContractError("batch size must be >= 1");
  const MelFrontend fe(frontend);
  const std::vector<MelSpectrogram> mels = center_crop_mels(dataset, fe, options.crop_seconds, options.threads);
  Eigen::MatrixXf out(static_cast<Index>(mels.size()), encoder.output_dim());
  for (std::size_t start = 0; start < mels.size(); start += static_cast<std::size_t>(options.batch_size)) {
    const std::size_t count = std::min<std::size_t>(options.batch_size, mels.size() - start);
    out.middleRows(static_cast<Index>(start), static_cast<Index>(count)) =
        project_batch(encoder, std::span(mels).subspan(start, count));
  }
  return out;
}

}  // namespace tinyclap
