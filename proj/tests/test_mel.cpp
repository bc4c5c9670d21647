#include <doctest.h>

#include <cmath>
#include <numbers>

#include "tinyclap/errors.hpp"
#include "tinyclap/mel.hpp"

using namespace tinyclap;

namespace {

AudioClip tone(double hz, double seconds) {
  AudioClip c;
  c.samples.resize(crop_length(seconds, kModelSampleRate));
  for (std::size_t i = 0; i < c.samples.size(); ++i)
    c.samples[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / kModelSampleRate));
  return c;
}

/// Band with the largest triangle weight at `hz`, from the HTK formula.
int expected_band(double hz) {
  const auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  const auto inv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double top = mel(22050.0);
  int best = -1;
  double best_w = -1.0;
  for (int m = 0; m < 64; ++m) {
    const double lo = inv(top * m / 65.0), mid = inv(top * (m + 1) / 65.0), hi = inv(top * (m + 2) / 65.0);
    double w = 0.0;
    if (hz > lo && hz <= mid) w = (hz - lo) / (mid - lo);
    else if (hz > mid && hz < hi) w = (hi - hz) / (hi - mid);
    if (w > best_w) {
      best_w = w;
      best = m;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("frame count") {
  CHECK(frame_count(220500) == 690);
  CHECK(frame_count(1) == 1);
  CHECK(frame_count(320) == 2);
  const MelSpectrogram mel = mel_spectrogram(tone(440, 5.0));
  CHECK(mel.bins() == 64);
  CHECK(mel.frames() == 690);
}

TEST_CASE("mel scale") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  CHECK(mel_to_hz(hz_to_mel(1234.5)) == doctest::Approx(1234.5));
  const auto edges = mel_band_edges(FrontendSettings{});
  CHECK(edges.size() == 66);
  CHECK(edges.front() == 0.0);
  CHECK(edges.back() == doctest::Approx(22050.0));
  const auto fb = mel_filterbank(FrontendSettings{});
  CHECK(fb.rows() == 64);
  CHECK(fb.cols() == 513);
  CHECK(fb.maxCoeff() <= 1.0);
}

TEST_CASE("periodic hann window") {
  const auto w = hann_window(8);
  CHECK(w[0] == 0.0);
  CHECK(w[4] == doctest::Approx(1.0));
  CHECK(w[2] == doctest::Approx(0.5));
}

TEST_CASE("440 Hz sine peaks in the analytically expected band") {
  const MelSpectrogram mel = mel_spectrogram(tone(440, 1.0));
  const Eigen::VectorXf mean = mel.values.rowwise().mean();
  Eigen::Index arg = 0;
  mean.maxCoeff(&arg);
  CHECK(arg == expected_band(440.0));
  CHECK(expected_band(440.0) == 8);
}

TEST_CASE("silence maps to the log floor") {
  AudioClip silence;
  silence.samples.assign(crop_length(5.0, kModelSampleRate), 0.f);
  const MelSpectrogram mel = mel_spectrogram(silence);
  const float floor = static_cast<float>(std::log(1e-10));
  CHECK((mel.values.array() == floor).all());
  const MelSpectrogram norm = normalize_freq_axis(mel);
  CHECK(norm.normalized);
  CHECK(norm.values.cwiseAbs().maxCoeff() == 0.f);
}

TEST_CASE("per-bin z-score normalization") {
  MelSpectrogram m;
  m.values.resize(2, 3);
  m.values << 1, 2, 3, 5, 5, 5;
  const MelSpectrogram z = normalize_freq_axis(m);
  const double s = 1.0 / (std::sqrt(2.0 / 3.0) + 1e-5);
  CHECK(z.values(0, 0) == doctest::Approx(-s).epsilon(1e-6));
  CHECK(z.values(0, 1) == doctest::Approx(0.0));
  CHECK(z.values(0, 2) == doctest::Approx(s).epsilon(1e-6));
  CHECK(z.values(0, 0) == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(z.values(1, 0) == 0.f);
  CHECK_THROWS_AS(normalize_freq_axis(z), ContractError);
}

TEST_CASE("front end rejects wrong sample rates and empty clips") {
  AudioClip c = tone(440, 0.1);
  c.sample_rate = 16000;
  CHECK_THROWS_AS(mel_spectrogram(c), ContractError);
  CHECK_THROWS_AS(mel_spectrogram(AudioClip{}), ContractError);
}

TEST_CASE("front end is deterministic") {
  const AudioClip c = tone(1000, 0.5);
  CHECK(mel_spectrogram(c).values == mel_spectrogram(c).values);
}
