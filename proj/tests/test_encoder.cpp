#include <doctest.h>

#include <algorithm>

#include "test_support.hpp"
#include "tinyclap/encoder.hpp"
#include "tinyclap/errors.hpp"

using namespace tinyclap;
using namespace tinyclap::testing;

namespace {

MelSpectrogram random_mel(Index frames, Rng& rng) {
  MelSpectrogram m;
  m.values.resize(64, frames);
  for (Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = static_cast<float>(normal01(rng));
  m.normalized = true;
  return m;
}

}  // namespace

TEST_CASE("presets bind the family rows") {
  const PhiNetConfig p4 = preset("phinet_4");
  CHECK(p4.alpha == 1.5);
  CHECK(p4.beta == 0.75);
  CHECK(p4.t_zero == 6);
  CHECK(p4.depth_n == 7);
  CHECK(p4.latent_dim == 1024);
  CHECK_THROWS_AS(preset("phinet_8"), ContractError);
  CHECK_THROWS_AS(PhiNetConfig{.alpha = 0.0}.validate(), ContractError);
  CHECK_THROWS_AS(PhiNetConfig{.beta = 1.5}.validate(), ContractError);
}

TEST_CASE("shape rules") {
  CHECK(round_channels(4.0) == 8);
  CHECK(round_channels(12.0) == 16);
  CHECK(round_channels(48.0) == 48);
  const PhiNetConfig one{.alpha = 1.0, .beta = 0.5, .t_zero = 6, .depth_n = 1};
  CHECK(expansion_factor(one, 0) == 6);
  const PhiNetConfig p1 = preset("phinet_1");
  CHECK(expansion_factor(p1, 0) == 6);
  CHECK(expansion_factor(p1, 6) == 5);
  const auto schedule = block_schedule(p1);
  CHECK(schedule.size() == 7);
  CHECK(std::count_if(schedule.begin(), schedule.end(), [](const BlockSpec& b) { return b.stride == 2; }) == 4);
  CHECK(feature_dim(p1) == 48 * 16);
}

TEST_CASE("tiny config parameter count from a layer-by-layer tally") {
  // c0 = 8; stem 72 + bn 16 = 88
  // block 0 (8 -> 16 -> 8, stride 1): 128+32 + 144+32 + 64+4+64+16 + 128+16 = 628
  // block 1 (8 -> 16 -> 16, stride 2): 128+32 + 144+32 + 148 + 256+32 = 772
  // projection 16 -> 8 with bias: 136
  CHECK(param_count(preset("tiny")) == 1624);
  CHECK(body_param_count(preset("tiny")) == 1488);
}

TEST_CASE("analytic and enumerated parameter counts agree") {
  for (const NamedPreset& p : presets()) {
    INFO(p.name);
    CHECK(StudentEncoder::build(p.config, 0).parameter_count() == param_count(p.config));
  }
}

TEST_CASE("family ordering of parameter counts") {
  const std::vector<std::string> order = {"phinet_6", "phinet_7", "phinet_5", "phinet_4",
                                          "phinet_3", "phinet_1", "phinet_2"};
  for (std::size_t i = 1; i < order.size(); ++i) {
    INFO(order[i - 1] << " < " << order[i]);
    CHECK(param_count(preset(order[i - 1])) < param_count(preset(order[i])));
  }
}

TEST_CASE("parameter count is monotone in alpha, t0 and depth") {
  const PhiNetConfig base{.alpha = 0.5, .beta = 0.75, .t_zero = 3, .depth_n = 3, .latent_dim = 64};
  Index prev = 0;
  for (double a : {0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0}) {
    PhiNetConfig c = base;
    c.alpha = a;
    CHECK(param_count(c) >= prev);
    prev = param_count(c);
  }
  prev = 0;
  for (int t = 1; t <= 8; ++t) {
    PhiNetConfig c = base;
    c.t_zero = t;
    CHECK(param_count(c) >= prev);
    prev = param_count(c);
  }
  prev = 0;
  for (int n = 1; n <= 10; ++n) {
    PhiNetConfig c = base;
    c.depth_n = n;
    CHECK(param_count(c) >= prev);
    prev = param_count(c);
  }
}

TEST_CASE("build is deterministic in the seed") {
  const auto a = StudentEncoder::build(preset("tiny"), 11);
  const auto b = StudentEncoder::build(preset("tiny"), 11);
  const auto c = StudentEncoder::build(preset("tiny"), 12);
  const auto ta = a.named_tensors(), tb = b.named_tensors(), tc = c.named_tensors();
  bool differs = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(*ta[i].second == *tb[i].second);
    differs = differs || !(*ta[i].second == *tc[i].second);
  }
  CHECK(differs);
  CHECK(fingerprint(a) == fingerprint(b));
  CHECK(fingerprint(a) != fingerprint(c));
}

TEST_CASE("embeddings are unit norm, deterministic and time-length independent") {
  Rng rng(1);
  for (const char* name : {"tiny", "micro", "phinet_6"}) {
    const auto enc = StudentEncoder::build(preset(name), 3);
    for (Index frames : {100, 1000}) {
      const MelSpectrogram mel = random_mel(frames, rng);
      const LatentVector e = embed(enc, mel);
      INFO(name << " T=" << frames);
      CHECK(e.dim() == preset(name).latent_dim);
      CHECK(e.values.norm() == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(embed(enc, mel).values == e.values);
    }
  }
}

TEST_CASE("eval mode leaves the encoder untouched") {
  Rng rng(2);
  const auto enc = StudentEncoder::build(preset("tiny"), 0);
  const std::uint64_t before = fingerprint(enc);
  embed(enc, random_mel(200, rng));
  CHECK(fingerprint(enc) == before);
}

TEST_CASE("silence and noise embed differently at initialization") {
  AudioClip silence, noise;
  silence.samples.assign(crop_length(5.0, kModelSampleRate), 0.f);
  Rng rng(0);
  noise.samples.resize(silence.size());
  for (float& s : noise.samples) s = static_cast<float>(uniform(rng, -1.0, 1.0));
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto enc = StudentEncoder::build(preset("micro"), seed);
    const LatentVector a = embed(enc, normalize_freq_axis(mel_spectrogram(silence)));
    const LatentVector b = embed(enc, normalize_freq_axis(mel_spectrogram(noise)));
    CHECK(a.values.dot(b.values) < 0.999f);
  }
}

TEST_CASE("embed requires normalized spectrograms") {
  Rng rng(4);
  MelSpectrogram mel = random_mel(100, rng);
  mel.normalized = false;
  CHECK_THROWS_AS(embed(StudentEncoder::build(preset("tiny"), 0), mel), ContractError);
}

TEST_CASE("pruned encoder keeps the selected projection rows") {
  Rng rng(5);
  const auto enc = StudentEncoder::build(preset("tiny"), 1);
  const std::vector<Index> kept = {5, 2, 7};
  const auto small = enc.pruned(kept);
  CHECK(small.output_dim() == 3);
  REQUIRE(small.prune_info());
  CHECK(small.prune_info()->kept == kept);
  CHECK(small.parameter_count() == body_param_count(enc.config()) + 3 * (enc.feature_dim() + 1));
  const MelSpectrogram mel = random_mel(120, rng);
  const Eigen::MatrixXf full = project_batch(enc, std::span(&mel, 1));
  const Eigen::MatrixXf part = project_batch(small, std::span(&mel, 1));
  for (std::size_t i = 0; i < kept.size(); ++i) CHECK(part(0, static_cast<Index>(i)) == full(0, kept[i]));
  const auto twice = small.pruned(std::vector<Index>{2, 0});
  CHECK(twice.prune_info()->kept == std::vector<Index>{7, 5});
  CHECK_THROWS_AS(enc.pruned(std::vector<Index>{8}), ContractError);
}

TEST_CASE("double and float encoders agree") {
  Rng rng(6);
  const auto enc = StudentEncoder::build(preset("tiny"), 2);
  const auto enc64 = enc.cast<double>();
  const MelSpectrogram mel = random_mel(80, rng);
  const auto y32 = enc.forward_eval(mel_batch<float>(std::span(&mel, 1)));
  const auto y64 = enc64.forward_eval(mel_batch<double>(std::span(&mel, 1)));
  CHECK((y32.cast<double>().data() - y64.data()).cwiseAbs().maxCoeff() < 1e-4);
}
