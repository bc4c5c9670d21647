#include "tinyclap/encoder.hpp"

#include <cmath>

#include "tinyclap/hash.hpp"

namespace tinyclap {

template class BasicStudentEncoder<float>;
template class BasicStudentEncoder<double>;

void PhiNetConfig::validate() const {
  if (!(alpha > 0.0)) throw ContractError("PhiNet config: alpha must be > 0, got " + std::to_string(alpha));
  if (!(beta > 0.0 && beta <= 1.0)) throw ContractError("PhiNet config: beta must lie in (0, 1], got " + std::to_string(beta));
  if (t_zero < 1) throw ContractError("PhiNet config: t0 must be >= 1, got " + std::to_string(t_zero));
  if (depth_n < 1) throw ContractError("PhiNet config: N must be >= 1, got " + std::to_string(depth_n));
  if (latent_dim < 1) throw ContractError("PhiNet config: latent dimension must be >= 1");
}

void to_json(nlohmann::json& j, const PhiNetConfig& c) {
  j = nlohmann::json{{"alpha", c.alpha}, {"beta", c.beta}, {"t_zero", c.t_zero}, {"depth_n", c.depth_n},
                     {"latent_dim", c.latent_dim}};
}

void from_json(const nlohmann::json& j, PhiNetConfig& c) {
  j.at("alpha").get_to(c.alpha);
  j.at("beta").get_to(c.beta);
  j.at("t_zero").get_to(c.t_zero);
  j.at("depth_n").get_to(c.depth_n);
  j.at("latent_dim").get_to(c.latent_dim);
}

const std::vector<NamedPreset>& presets() {
  static const std::vector<NamedPreset> table = {
      {"phinet_1", {3.0, 0.75, 6, 7, 1024}},  {"phinet_2", {3.0, 0.75, 6, 9, 1024}},
      {"phinet_3", {3.0, 0.75, 4, 7, 1024}},  {"phinet_4", {1.5, 0.75, 6, 7, 1024}},
      {"phinet_5", {0.75, 0.75, 4, 7, 1024}}, {"phinet_6", {0.75, 0.75, 4, 4, 1024}},
      {"phinet_7", {0.75, 0.75, 6, 4, 1024}}, {"tiny", {0.25, 0.75, 2, 2, 8}},
      {"micro", {0.5, 0.75, 3, 3, 128}},
  };
  return table;
}

PhiNetConfig preset(std::string_view name) {
  for (const NamedPreset& p : presets())
    if (p.name == name) return p.config;
  std::string known;
  for (const NamedPreset& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ContractError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

int round_channels(double channels) {
  return std::max(8, 8 * static_cast<int>(std::round(channels / 8.0)));
}

int stem_channels(const PhiNetConfig& config) { return round_channels(16.0 * config.alpha); }

int expansion_factor(const PhiNetConfig& config, int block) {
  if (config.depth_n == 1) return config.t_zero;
  const double frac = static_cast<double>(block) / static_cast<double>(config.depth_n - 1);
  const double e = config.t_zero * (1.0 - (1.0 - config.beta) * frac);
  return std::max(2, static_cast<int>(std::round(e)));
}

std::vector<BlockSpec> block_schedule(const PhiNetConfig& config) {
  config.validate();
  std::vector<BlockSpec> out;
  int channels = stem_channels(config);
  int downsamples = 0;
  for (int k = 0; k < config.depth_n; ++k) {
    const bool down = (k == 1 || k == 2 || k == 4 || k == 6) && downsamples < 4;
    const int out_channels = down ? 2 * channels : channels;
    if (down) ++downsamples;
    const int hidden = channels * expansion_factor(config, k);
    out.push_back({channels, hidden, out_channels, down ? 2 : 1, !down});
    channels = out_channels;
  }
  return out;
}

Index feature_dim(const PhiNetConfig& config) {
  const auto schedule = block_schedule(config);
  return schedule.empty() ? stem_channels(config) : schedule.back().out_channels;
}

Index body_param_count(const PhiNetConfig& config) {
  const Index c0 = stem_channels(config);
  Index total = 9 * c0 + 2 * c0;
  for (const BlockSpec& b : block_schedule(config)) {
    const Index h = b.hidden_channels, se = h / 4;
    total += b.in_channels * h + 2 * h;         // expand + BN
    total += 9 * h + 2 * h;                     // depthwise + BN
    total += se * h + se + h * se + h;          // squeeze-excite
    total += h * b.out_channels + 2 * b.out_channels;  // project + BN
  }
  return total;
}

Index param_count(const PhiNetConfig& config) {
  return body_param_count(config) + feature_dim(config) * config.latent_dim + config.latent_dim;
}

Eigen::MatrixXf project_batch(const StudentEncoder& encoder, std::span<const MelSpectrogram> mels) {
  for (const MelSpectrogram& m : mels)
    if (!m.normalized) throw ContractError("embed: spectrogram must be frequency-normalized first");
  const Tensor<float> out = encoder.forward_eval(mel_batch<float>(mels));
  const Index n = out.dim(0), d = out.dim(1);
  return out.matrix(n, d);
}

LatentVector embed(const StudentEncoder& encoder, const MelSpectrogram& mel) {
  const Eigen::MatrixXf proj = project_batch(encoder, std::span(&mel, 1));
  const Tensor<float> unit = kernels::l2_normalize(Tensor<float>({proj.cols()}, proj.row(0).transpose()), 0);
  return {unit.data(), true};
}

std::uint64_t fingerprint(const StudentEncoder& encoder) {
  Fnv1a64 h;
  h.update(nlohmann::json(encoder.config()).dump());
  if (const auto& p = encoder.prune_info()) {
    h.update_value(p->original_dim);
    for (Index i : p->kept) h.update_value(i);
  }
  for (const auto& [name, t] : encoder.named_tensors()) {
    h.update(name);
    for (Index d : t->shape()) h.update_value(d);
    h.update(std::as_bytes(std::span(t->raw(), static_cast<std::size_t>(t->size()))));
  }
  return h.digest();
}

}  // namespace tinyclap
