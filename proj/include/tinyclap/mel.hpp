#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyclap/audio.hpp"
#include "tinyclap/tensor.hpp"

namespace tinyclap {

/// Front-end configuration. Defaults: 44.1 kHz, 1024-point Hann STFT with
/// hop 320 and 512-sample reflect centering, 64 HTK mel bands over
/// [0, 22050] Hz, natural log with 1e-10 floor.
struct FrontendSettings {
  int sample_rate = kModelSampleRate;
  int n_fft = 1024;
  int hop = 320;
  int n_mels = 64;
  double f_min = 0.0;
  double f_max = 22050.0;
  double log_eps = 1e-10;
  double norm_eps = 1e-5;
  std::string window = "hann";
  std::string mel_scale = "htk";
  std::string normalization = "per-sample per-mel-bin z-score over time";

  void validate() const;
  friend bool operator==(const FrontendSettings&, const FrontendSettings&) = default;
};

void to_json(nlohmann::json& j, const FrontendSettings& s);
void from_json(const nlohmann::json& j, FrontendSettings& s);

/// F x T log-mel matrix (row f = mel band, column t = frame).
struct MelSpectrogram {
  RowMajorMatrix<float> values;
  FrontendSettings settings;
  bool normalized = false;

  Index bins() const noexcept { return values.rows(); }
  Index frames() const noexcept { return values.cols(); }
};

/// T = floor(n / hop) + 1 under reflect centering.
Index frame_count(std::size_t num_samples, int hop = 320);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangle peak frequencies: n_mels + 2 points evenly spaced on the mel
/// scale; band m peaks at point m + 1.
std::vector<double> mel_band_edges(const FrontendSettings& s);

/// n_mels x (n_fft / 2 + 1) triangular filterbank with unit peaks.
RowMajorMatrix<double> mel_filterbank(const FrontendSettings& s);

/// Periodic Hann window of length n.
std::vector<double> hann_window(int n);

/// One-sided power spectrum |X_k|^2, k = 0..n/2, of a Hann-windowed frame.
std::vector<double> frame_power_spectrum(std::span<const float> frame);

/// Precomputes the window and filterbank for repeated use. Immutable after
/// construction; compute() may run concurrently.
class MelFrontend {
 public:
  explicit MelFrontend(FrontendSettings settings = {});

  const FrontendSettings& settings() const noexcept { return settings_; }
  const RowMajorMatrix<double>& filterbank() const noexcept { return filterbank_; }

  /// Log-mel features of a clip already at settings().sample_rate.
  MelSpectrogram compute(const AudioClip& clip) const;

 private:
  FrontendSettings settings_;
  std::vector<double> window_;
  RowMajorMatrix<double> filterbank_;
};

MelSpectrogram mel_spectrogram(const AudioClip& clip, const FrontendSettings& settings = {});

/// Per-band z-score over time: (x - mean) / (std + norm_eps), population std.
MelSpectrogram normalize_freq_axis(MelSpectrogram mel);

}  // namespace tinyclap
