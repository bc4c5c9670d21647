#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tinyclap/random.hpp"

namespace tinyclap {

inline constexpr int kModelSampleRate = 44100;

/// Mono audio in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kModelSampleRate;

  std::size_t size() const noexcept { return samples.size(); }
  double seconds() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }

  /// Throws ContractError for empty clips or non-positive rates.
  void validate() const;
};

enum class WavEncoding { kPcm16, kPcm24, kPcm32, kFloat32 };

/// Decodes RIFF/WAVE (PCM 16/24/32-bit integer, 32-bit float, little-endian,
/// plain or WAVE_FORMAT_EXTENSIBLE). Multi-channel input is averaged to
/// mono. Anything else raises a FormatError naming the failing chunk.
AudioClip decode_wav(std::span<const std::byte> bytes, const std::string& source = "<memory>");
AudioClip read_wav(const std::filesystem::path& path);

std::vector<std::byte> encode_wav(const AudioClip& clip, WavEncoding encoding = WavEncoding::kFloat32);
void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding = WavEncoding::kFloat32);

/// Band-limited rational resampling with a Kaiser-windowed sinc (64 taps per
/// polyphase branch). Output length is ceil(n * target / source). A clip
/// already at the target rate is returned unchanged.
AudioClip resample(const AudioClip& clip, int target_rate = kModelSampleRate);

/// Number of samples for a crop of `seconds` at `sample_rate`.
std::size_t crop_length(double seconds, int sample_rate);

/// Exactly crop_length(seconds) samples. Longer clips yield a contiguous
/// window at a uniformly drawn offset; shorter clips are tiled cyclically and
/// cut from offset 0.
AudioClip random_crop(const AudioClip& clip, double seconds, Rng& rng);

/// Deterministic variant of random_crop taking the middle window.
AudioClip center_crop(const AudioClip& clip, double seconds);

}  // namespace tinyclap
