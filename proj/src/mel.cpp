#include "tinyclap/mel.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>

#include "tinyclap/errors.hpp"

namespace tinyclap {

namespace {
constexpr double kTwoPi = 6.283185307179586476925;
}

void FrontendSettings::validate() const {
  if (sample_rate <= 0 || n_fft < 2 || hop < 1 || n_mels < 1)
    throw ContractError("front-end settings: rate, n_fft, hop and n_mels must be positive");
  if (!(f_min >= 0.0 && f_max > f_min && f_max <= sample_rate / 2.0))
    throw ContractError("front-end settings: need 0 <= f_min < f_max <= sample_rate / 2");
  if (window != "hann") throw ContractError("front-end settings: unsupported window '" + window + "'");
  if (mel_scale != "htk") throw ContractError("front-end settings: unsupported mel scale '" + mel_scale + "'");
}

void to_json(nlohmann::json& j, const FrontendSettings& s) {
  j = nlohmann::json{{"sample_rate", s.sample_rate}, {"n_fft", s.n_fft},         {"hop", s.hop},
                     {"n_mels", s.n_mels},           {"f_min", s.f_min},         {"f_max", s.f_max},
                     {"log_eps", s.log_eps},         {"norm_eps", s.norm_eps},   {"window", s.window},
                     {"mel_scale", s.mel_scale},     {"normalization", s.normalization}};
}

void from_json(const nlohmann::json& j, FrontendSettings& s) {
  j.at("sample_rate").get_to(s.sample_rate);
  j.at("n_fft").get_to(s.n_fft);
  j.at("hop").get_to(s.hop);
  j.at("n_mels").get_to(s.n_mels);
  j.at("f_min").get_to(s.f_min);
  j.at("f_max").get_to(s.f_max);
  j.at("log_eps").get_to(s.log_eps);
  j.at("norm_eps").get_to(s.norm_eps);
  j.at("window").get_to(s.window);
  j.at("mel_scale").get_to(s.mel_scale);
  j.at("normalization").get_to(s.normalization);
}

Index frame_count(std::size_t num_samples, int hop) { return static_cast<Index>(num_samples / hop) + 1; }

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_edges(const FrontendSettings& s) {
  const double lo = hz_to_mel(s.f_min), hi = hz_to_mel(s.f_max);
  std::vector<double> edges(static_cast<std::size_t>(s.n_mels + 2));
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(s.n_mels + 1));
  return edges;
}

RowMajorMatrix<double> mel_filterbank(const FrontendSettings& s) {
  s.validate();
  const int bins = s.n_fft / 2 + 1;
  const std::vector<double> edges = mel_band_edges(s);
  RowMajorMatrix<double> fb = RowMajorMatrix<double>::Zero(s.n_mels, bins);
  for (int m = 0; m < s.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * s.sample_rate / s.n_fft;
      const double rising = (f - left) / (center - left);
      const double falling = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(rising, falling));
    }
  }
  return fb;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(kTwoPi * i / n);
  return w;
}

namespace {

void power_of(const std::vector<double>& windowed, Eigen::FFT<double>& fft, std::vector<std::complex<double>>& spec,
              double* out) {
  fft.fwd(spec, windowed);
  const std::size_t bins = windowed.size() / 2 + 1;
  for (std::size_t k = 0; k < bins; ++k) out[k] = std::norm(spec[k]);
}

/// numpy-style 'reflect' index (edge not repeated), periodic for long pads.
std::size_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  std::int64_t m = i % period;
  if (m < 0) m += period;
  if (m >= n) m = period - m;
  return static_cast<std::size_t>(m);
}

}  // namespace

std::vector<double> frame_power_spectrum(std::span<const float> frame) {
  const int n = static_cast<int>(frame.size());
  if (n < 2) throw ContractError("power spectrum needs at least two samples");
  const std::vector<double> w = hann_window(n);
  std::vector<double> windowed(frame.size());
  for (int i = 0; i < n; ++i) windowed[i] = w[i] * frame[i];
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spec;
  std::vector<double> power(static_cast<std::size_t>(n / 2 + 1));
  power_of(windowed, fft, spec, power.data());
  return power;
}

MelFrontend::MelFrontend(FrontendSettings settings)
    : settings_(std::move(settings)), window_(hann_window(settings_.n_fft)), filterbank_(mel_filterbank(settings_)) {}

MelSpectrogram MelFrontend::compute(const AudioClip& clip) const {
  clip.validate();
  if (clip.sample_rate != settings_.sample_rate)
    throw ContractError("mel_spectrogram: clip at " + std::to_string(clip.sample_rate) + " Hz, expected " +
                        std::to_string(settings_.sample_rate) + " Hz (resample first)");
  const std::int64_t n = static_cast<std::int64_t>(clip.samples.size());
  const int n_fft = settings_.n_fft;
  const std::int64_t pad = n_fft / 2;
  const Index frames = frame_count(clip.samples.size(), settings_.hop);
  const int bins = n_fft / 2 + 1;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> windowed(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spec;
  Eigen::VectorXd power(bins);

  MelSpectrogram mel;
  mel.settings = settings_;
  mel.values.resize(settings_.n_mels, frames);
  for (Index t = 0; t < frames; ++t) {
    const std::int64_t start = t * settings_.hop - pad;
    for (int i = 0; i < n_fft; ++i) {
      const std::int64_t src = start + i;
      const float s = (src >= 0 && src < n) ? clip.samples[static_cast<std::size_t>(src)]
                                            : clip.samples[reflect_index(src, n)];
      windowed[i] = window_[i] * s;
    }
    power_of(windowed, fft, spec, power.data());
    const Eigen::VectorXd bands = filterbank_ * power;
    for (int m = 0; m < settings_.n_mels; ++m)
      mel.values(m, t) = static_cast<float>(std::log(bands[m] + settings_.log_eps));
  }
  if (!mel.values.allFinite()) throw NumericError("mel_spectrogram: non-finite log-mel values");
  return mel;
}

MelSpectrogram mel_spectrogram(const AudioClip& clip, const FrontendSettings& settings) {
  return MelFrontend(settings).compute(clip);
}

MelSpectrogram normalize_freq_axis(MelSpectrogram mel) {
  if (mel.normalized) throw ContractError("normalize_freq_axis: spectrogram is already normalized");
  if (mel.frames() < 1) throw ContractError("normalize_freq_axis: spectrogram has no frames");
  const double eps = mel.settings.norm_eps;
  for (Index f = 0; f < mel.bins(); ++f) {
    auto row = mel.values.row(f);
    const double mean = row.cast<double>().mean();
    const double var = (row.cast<double>().array() - mean).square().mean();
    const double denom = std::sqrt(var) + eps;
    for (Index t = 0; t < mel.frames(); ++t) row[t] = static_cast<float>((row[t] - mean) / denom);
  }
  mel.normalized = true;
  return mel;
}

}  // namespace tinyclap
