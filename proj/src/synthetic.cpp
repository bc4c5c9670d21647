#include "tinyclap/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "tinyclap/errors.hpp"

namespace tinyclap {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string numbered(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%03zu", i);
  return prefix + buf;
}

AudioClip blank(double seconds) {
  AudioClip c;
  c.samples.assign(crop_length(seconds, kModelSampleRate), 0.f);
  return c;
}

void add_tone(AudioClip& c, double hz, double amp, double phase, double vibrato_hz = 0.0, double vibrato_depth = 0.0) {
  const double rate = c.sample_rate;
  double ph = phase;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f = hz * (1.0 + vibrato_depth * std::sin(kTwoPi * vibrato_hz * t));
    ph += kTwoPi * f / rate;
    c.samples[i] += static_cast<float>(amp * std::sin(ph));
  }
}

void add_noise(AudioClip& c, Rng& rng, double amp, double smoothing) {
  double state = 0.0;
  for (float& s : c.samples) {
    state = smoothing * state + (1.0 - smoothing) * uniform(rng, -1.0, 1.0);
    s += static_cast<float>(amp * (smoothing > 0.0 ? state / (1.0 - smoothing) * 0.1 : state));
  }
}

void apply_envelope(AudioClip& c, double rate_hz, double depth, double phase) {
  const double rate = c.sample_rate;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    c.samples[i] *= static_cast<float>(1.0 - depth * 0.5 * (1.0 + std::sin(kTwoPi * rate_hz * t + phase)));
  }
}

double log_uniform(Rng& rng, double lo, double hi) { return std::exp(uniform(rng, std::log(lo), std::log(hi))); }

AudioClip mixture_clip(Rng& rng, double seconds) {
  AudioClip c = blank(seconds);
  const int tones = 1 + static_cast<int>(uniform_index(rng, 3));
  for (int k = 0; k < tones; ++k)
    add_tone(c, log_uniform(rng, 80.0, 8000.0), uniform(rng, 0.05, 0.3), uniform(rng, 0.0, kTwoPi),
             uniform(rng, 0.5, 6.0), uniform(rng, 0.0, 0.03));
  add_noise(c, rng, uniform(rng, 0.0, 0.2), uniform01(rng) < 0.5 ? 0.0 : uniform(rng, 0.5, 0.95));
  apply_envelope(c, uniform(rng, 0.3, 4.0), uniform(rng, 0.0, 0.9), uniform(rng, 0.0, kTwoPi));
  return c;
}

}  // namespace

AudioDataset make_mixture_corpus(std::size_t count, std::uint64_t seed, double seconds, const std::string& prefix) {
  std::vector<AudioItem> items;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 0x6d6978, i));
    items.push_back({numbered(prefix, i), std::nullopt, mixture_clip(rng, seconds)});
  }
  return make_dataset(std::move(items));
}

const std::vector<std::string>& tone_labels() {
  static const std::vector<std::string> labels = {"hum", "whistle", "chirp", "static"};
  return labels;
}

AudioClip synth_tone_clip(const std::string& label, Rng& rng, double seconds) {
  AudioClip c = blank(seconds);
  if (label == "hum") {
    const double f0 = uniform(rng, 90.0, 180.0);
    for (int h = 1; h <= 4; ++h) add_tone(c, f0 * h, uniform(rng, 0.15, 0.3) / h, uniform(rng, 0.0, kTwoPi));
  } else if (label == "whistle") {
    add_tone(c, uniform(rng, 1800.0, 3200.0), uniform(rng, 0.2, 0.4), uniform(rng, 0.0, kTwoPi),
             uniform(rng, 3.0, 7.0), uniform(rng, 0.01, 0.04));
  } else if (label == "chirp") {
    const double f_lo = uniform(rng, 300.0, 600.0), f_hi = uniform(rng, 3000.0, 6000.0);
    const double period = uniform(rng, 0.25, 0.5);
    const double amp = uniform(rng, 0.2, 0.4);
    double ph = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double t = static_cast<double>(i) / c.sample_rate;
      const double u = std::fmod(t, period) / period;
      ph += kTwoPi * f_lo * std::pow(f_hi / f_lo, u) / c.sample_rate;
      c.samples[i] += static_cast<float>(amp * std::sin(ph));
    }
  } else if (label == "static") {
    add_noise(c, rng, uniform(rng, 0.2, 0.4), 0.0);
    apply_envelope(c, uniform(rng, 2.0, 8.0), uniform(rng, 0.3, 0.8), uniform(rng, 0.0, kTwoPi));
  } else {
    throw ContractError("unknown synthetic class '" + label + "'");
  }
  add_noise(c, rng, uniform(rng, 0.005, 0.03), 0.0);
  return c;
}

LabeledCorpus make_tone_corpus(std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed,
                               double seconds) {
  LabeledCorpus out;
  out.labels = tone_labels();
  std::vector<AudioItem> train, test;
  for (std::size_t c = 0; c < out.labels.size(); ++c) {
    const std::string& label = out.labels[c];
    for (std::size_t i = 0; i < train_per_class + test_per_class; ++i) {
      Rng rng(derive_seed(seed, 0x746f6e65 + c, i));
      const bool is_train = i < train_per_class;
      const std::size_t k = is_train ? i : i - train_per_class;
      AudioItem item{numbered(label + (is_train ? "_train" : "_test"), k), label, synth_tone_clip(label, rng, seconds)};
      (is_train ? train : test).push_back(std::move(item));
    }
  }
  out.train = make_dataset(std::move(train));
  out.test = make_dataset(std::move(test));
  return out;
}

std::pair<AudioDataset, AudioDataset> split_dataset(const AudioDataset& dataset, std::size_t n_train) {
  if (n_train > dataset.size()) throw ContractError("split larger than the dataset");
  std::vector<AudioItem> a(dataset.items.begin(), dataset.items.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<AudioItem> b(dataset.items.begin() + static_cast<std::ptrdiff_t>(n_train), dataset.items.end());
  return {make_dataset(std::move(a)), make_dataset(std::move(b))};
}

DatasetManifest write_dataset(const AudioDataset& dataset, const std::filesystem::path& dir,
                              const std::string& manifest_name) {
  std::filesystem::create_directories(dir / "audio");
  DatasetManifest manifest;
  for (const AudioItem& item : dataset.items) {
    const std::string stored = "audio/" + item.id + ".wav";
    write_wav(dir / stored, item.clip, WavEncoding::kFloat32);
    manifest.entries.push_back({item.id, dir / stored, stored, item.label});
  }
  write_manifest(dir / manifest_name, manifest);
  return manifest;
}

ClassEmbeddingSet prototype_classes(const StudentEncoder& teacher, const AudioDataset& labeled,
                                    const std::vector<std::string>& labels, const FrontendSettings& frontend,
                                    const InferenceOptions& options) {
  const Eigen::MatrixXf proj = project_dataset(teacher, labeled, frontend, options);
  ClassEmbeddingSet out;
  for (const std::string& label : labels) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(proj.cols());
    std::size_t n = 0;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      if (labeled.items[i].label != label) continue;
      const Eigen::VectorXd row = proj.row(static_cast<Index>(i)).transpose().cast<double>();
      acc += row / std::max(row.norm(), kernels::kNormalizeEps);
      ++n;
    }
    if (n == 0) throw DataError("no samples with label '" + label + "'");
    out.labels.push_back(label);
    out.vectors.push_back((acc / acc.norm()).cast<float>());
  }
  out.validate();
  return out;
}

EmbeddingTable teacher_table(const StudentEncoder& teacher, const AudioDataset& dataset,
                             const FrontendSettings& frontend, const InferenceOptions& options) {
  const Eigen::MatrixXf proj = project_dataset(teacher, dataset, frontend, options);
  EmbeddingTable out;
  out.dim = proj.cols();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Eigen::VectorXf row = proj.row(static_cast<Index>(i)).transpose();
    const float norm = row.norm();
    if (norm > 0.f) row /= norm;
    out.records.push_back({dataset.items[i].id, row});
  }
  return out;
}

}  // namespace tinyclap
