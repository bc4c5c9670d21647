#include "tinyclap/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

#include "tinyclap/errors.hpp"
#include "tinyclap/io_util.hpp"

namespace tinyclap {

void AudioClip::validate() const {
  if (samples.empty()) throw ContractError("audio clip is empty");
  if (sample_rate <= 0) throw ContractError("audio clip has non-positive sample rate " + std::to_string(sample_rate));
}

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  std::uint16_t block_align = 0;
};

std::string fourcc(const std::byte* p) { return std::string(reinterpret_cast<const char*>(p), 4); }

float decode_sample(const std::byte* p, const FmtChunk& fmt) {
  switch (fmt.bits) {
    case 16:
      return static_cast<float>(static_cast<std::int16_t>(le_load<std::uint16_t>(p))) / 32768.0f;
    case 24: {
      std::int32_t v = static_cast<std::int32_t>(static_cast<std::uint32_t>(p[0]) |
                                                 (static_cast<std::uint32_t>(p[1]) << 8) |
                                                 (static_cast<std::uint32_t>(p[2]) << 16));
      if (v & 0x800000) v -= 0x1000000;
      return static_cast<float>(v) / 8388608.0f;
    }
    case 32:
      if (fmt.format == kFormatFloat) {
        const std::uint32_t bits = le_load<std::uint32_t>(p);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
      }
      return static_cast<float>(static_cast<double>(static_cast<std::int32_t>(le_load<std::uint32_t>(p))) /
                                2147483648.0);
    default:
      return 0.0f;
  }
}

}  // namespace

AudioClip decode_wav(std::span<const std::byte> bytes, const std::string& source) {
  auto fail = [&](const std::string& chunk, const std::string& what) -> FormatError {
    return FormatError(source + ": WAV chunk '" + chunk + "': " + what);
  };
  if (bytes.size() < 12) throw fail("RIFF", "file shorter than the 12-byte RIFF header");
  if (fourcc(bytes.data()) != "RIFF") throw fail("RIFF", "missing RIFF magic");
  if (fourcc(bytes.data() + 8) != "WAVE") throw fail("RIFF", "form type is not WAVE");

  FmtChunk fmt;
  bool have_fmt = false;
  std::span<const std::byte> data;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = fourcc(bytes.data() + pos);
    const std::uint32_t len = le_load<std::uint32_t>(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      // Some writers leave a streaming placeholder length on the data chunk.
      if (id != "data") throw fail(id, "chunk length " + std::to_string(len) + " runs past end of file");
    }
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (id == "fmt ") {
      if (avail < 16) throw fail(id, "fmt chunk shorter than 16 bytes");
      const std::byte* p = bytes.data() + body;
      fmt.format = le_load<std::uint16_t>(p);
      fmt.channels = le_load<std::uint16_t>(p + 2);
      fmt.rate = le_load<std::uint32_t>(p + 4);
      fmt.block_align = le_load<std::uint16_t>(p + 12);
      fmt.bits = le_load<std::uint16_t>(p + 14);
      if (fmt.format == kFormatExtensible) {
        if (avail < 26) throw fail(id, "extensible fmt chunk shorter than 26 bytes");
        fmt.format = le_load<std::uint16_t>(p + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (id == "data") {
      data = bytes.subspan(body, avail);
      have_data = true;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) throw fail("fmt ", "missing fmt chunk");
  if (!have_data) throw fail("data", "missing data chunk");
  if (fmt.format != kFormatPcm && fmt.format != kFormatFloat)
    throw fail("fmt ", "unsupported codec tag " + std::to_string(fmt.format) + " (only PCM and IEEE float)");
  const bool ok_bits = fmt.format == kFormatFloat ? fmt.bits == 32 : (fmt.bits == 16 || fmt.bits == 24 || fmt.bits == 32);
  if (!ok_bits) throw fail("fmt ", "unsupported bit depth " + std::to_string(fmt.bits));
  if (fmt.channels == 0) throw fail("fmt ", "zero channels");
  if (fmt.rate == 0) throw fail("fmt ", "zero sample rate");
  const std::size_t width = fmt.bits / 8;
  if (fmt.block_align != width * fmt.channels)
    throw fail("fmt ", "block align " + std::to_string(fmt.block_align) + " inconsistent with " +
                           std::to_string(fmt.channels) + " channels of " + std::to_string(fmt.bits) + " bits");

  const std::size_t frames = data.size() / fmt.block_align;
  AudioClip clip;
  clip.sample_rate = static_cast<int>(fmt.rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::byte* frame = data.data() + i * fmt.block_align;
    if (fmt.channels == 1) {
      clip.samples[i] = decode_sample(frame, fmt);
      continue;
    }
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) acc += decode_sample(frame + c * width, fmt);
    clip.samples[i] = static_cast<float>(acc / fmt.channels);
  }
  return clip;
}

AudioClip read_wav(const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = read_file(path);
  return decode_wav(bytes, path.string());
}

std::vector<std::byte> encode_wav(const AudioClip& clip, WavEncoding encoding) {
  clip.validate();
  const std::uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : encoding == WavEncoding::kPcm24 ? 24 : 32;
  const std::uint16_t format = encoding == WavEncoding::kFloat32 ? kFormatFloat : kFormatPcm;
  const std::uint32_t width = bits / 8;
  const std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * width);
  ByteWriter w;
  w.raw("RIFF");
  w.put<std::uint32_t>(36 + data_len);
  w.raw("WAVE");
  w.raw("fmt ");
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(format);
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate) * width);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(width));
  w.put<std::uint16_t>(bits);
  w.raw("data");
  w.put<std::uint32_t>(data_len);
  for (float s : clip.samples) {
    const double c = std::clamp(static_cast<double>(s), -1.0, 1.0);
    switch (encoding) {
      case WavEncoding::kPcm16:
        w.put<std::uint16_t>(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
        break;
      case WavEncoding::kPcm24: {
        const auto v = static_cast<std::uint32_t>(static_cast<std::int32_t>(std::lround(c * 8388607.0)));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(v));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(v >> 8));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(v >> 16));
        break;
      }
      case WavEncoding::kPcm32:
        w.put<std::uint32_t>(static_cast<std::uint32_t>(static_cast<std::int32_t>(std::llround(c * 2147483647.0))));
        break;
      case WavEncoding::kFloat32:
        w.put_f32(s);
        break;
    }
  }
  return std::move(w).bytes();
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding) {
  write_file_atomic(path, encode_wav(clip, encoding));
}

namespace {

constexpr int kTaps = 64;
constexpr int kHalfTaps = kTaps / 2;
constexpr double kKaiserBeta = 8.6;
constexpr double kCutoffFraction = 0.95;
constexpr double kPi = 3.14159265358979323846;

double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x); }

/// Taps for the fractional offset `phase` in [0, 1): tap k (0..63) weighs
/// input sample base + k - 31.
void design_branch(double phase, double cutoff, double* taps) {
  const double norm = std::cyl_bessel_i(0.0, kKaiserBeta);
  double sum = 0.0;
  for (int k = 0; k < kTaps; ++k) {
    const double t = static_cast<double>(k - (kHalfTaps - 1)) - phase;
    const double r = t / kHalfTaps;
    const double window = std::abs(r) >= 1.0 ? 0.0 : std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / norm;
    taps[k] = cutoff * sinc(cutoff * t) * window;
    sum += taps[k];
  }
  for (int k = 0; k < kTaps; ++k) taps[k] /= sum;
}

}  // namespace

AudioClip resample(const AudioClip& clip, int target_rate) {
  clip.validate();
  if (target_rate <= 0) throw ContractError("resample: target rate must be positive");
  if (clip.sample_rate == target_rate) return clip;

  const std::int64_t g = std::gcd(clip.sample_rate, target_rate);
  const std::int64_t up = target_rate / g;
  const std::int64_t down = clip.sample_rate / g;
  const double cutoff = kCutoffFraction * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const std::int64_t n_in = static_cast<std::int64_t>(clip.samples.size());
  const std::int64_t n_out = (n_in * up + down - 1) / down;

  // One branch per distinct phase; cached when the phase count is modest.
  const bool cache = up <= 4096;
  std::vector<double> table;
  if (cache) {
    table.resize(static_cast<std::size_t>(up * kTaps));
    for (std::int64_t p = 0; p < up; ++p)
      design_branch(static_cast<double>(p) / static_cast<double>(up), cutoff, table.data() + p * kTaps);
  }
  std::vector<double> scratch(kTaps);

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t n = 0; n < n_out; ++n) {
    const std::int64_t num = n * down;
    const std::int64_t base = num / up;
    const std::int64_t phase = num % up;
    const double* taps = nullptr;
    if (cache) {
      taps = table.data() + phase * kTaps;
    } else {
      design_branch(static_cast<double>(phase) / static_cast<double>(up), cutoff, scratch.data());
      taps = scratch.data();
    }
    double acc = 0.0;
    for (int k = 0; k < kTaps; ++k) {
      const std::int64_t i = base + k - (kHalfTaps - 1);
      if (i >= 0 && i < n_in) acc += taps[k] * clip.samples[static_cast<std::size_t>(i)];
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(acc);
  }
  return out;
}

std::size_t crop_length(double seconds, int sample_rate) {
  if (!(seconds > 0.0)) throw ContractError("crop length must be positive, got " + std::to_string(seconds) + " s");
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

namespace {

AudioClip window_at(const AudioClip& clip, std::size_t offset, std::size_t length) {
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.resize(length);
  const std::size_t n = clip.samples.size();
  for (std::size_t i = 0; i < length; ++i) out.samples[i] = clip.samples[(offset + i) % n];
  return out;
}

}  // namespace

AudioClip random_crop(const AudioClip& clip, double seconds, Rng& rng) {
  clip.validate();
  const std::size_t length = crop_length(seconds, clip.sample_rate);
  if (clip.samples.size() <= length) return window_at(clip, 0, length);
  const std::size_t offset = uniform_index(rng, clip.samples.size() - length + 1);
  return window_at(clip, offset, length);
}

AudioClip center_crop(const AudioClip& clip, double seconds) {
  clip.validate();
  const std::size_t length = crop_length(seconds, clip.sample_rate);
  if (clip.samples.size() <= length) return window_at(clip, 0, length);
  return window_at(clip, (clip.samples.size() - length) / 2, length);
}

}  // namespace tinyclap
