#pragma once

// Student audio encoder: a PhiNet-style stack of inverted-residual blocks
// scaled by (alpha, beta, t0, N), followed by global average pooling and a
// linear projection into the shared latent space.
//
// Architecture, all derived from PhiNetConfig:
//   stem      3x3 conv, stride 2, c0 = round8(16 * alpha) channels, BN, hswish
//   block k   1x1 expand (x e_k) -> BN -> hswish
//             3x3 depthwise (stride 2 at blocks 1, 2, 4, 6) -> BN -> hswish
//             squeeze-excite (reduction 4, relu / sigmoid)
//             1x1 project -> BN, residual add when shape is preserved
//             channels double at every stride-2 block
//   head      global average pool -> linear (U -> d, with bias)
// with e_k = max(2, round(t0 * (1 - (1 - beta) * k / (N - 1)))) and e_0 = t0
// when N = 1, and round8(x) = max(8, 8 * round(x / 8)).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyclap/autodiff.hpp"
#include "tinyclap/mel.hpp"
#include "tinyclap/random.hpp"

namespace tinyclap {

struct PhiNetConfig {
  double alpha = 1.0;
  double beta = 0.75;
  int t_zero = 6;
  int depth_n = 7;
  Index latent_dim = 1024;

  void validate() const;
  friend bool operator==(const PhiNetConfig&, const PhiNetConfig&) = default;
};

void to_json(nlohmann::json& j, const PhiNetConfig& c);
void from_json(const nlohmann::json& j, PhiNetConfig& c);

struct NamedPreset {
  std::string name;
  PhiNetConfig config;
};

/// phinet_1 ... phinet_7, plus the small test configurations "tiny" and "micro".
const std::vector<NamedPreset>& presets();
PhiNetConfig preset(std::string_view name);

int round_channels(double channels);
int stem_channels(const PhiNetConfig& config);
int expansion_factor(const PhiNetConfig& config, int block);

struct BlockSpec {
  int in_channels;
  int hidden_channels;
  int out_channels;
  int stride;
  bool residual;
};

std::vector<BlockSpec> block_schedule(const PhiNetConfig& config);

/// Width U of the pooled features fed to the projection.
Index feature_dim(const PhiNetConfig& config);

/// Trainable scalars of the full (unpruned) encoder, from the shape rules
/// alone. Includes the projection layer.
Index param_count(const PhiNetConfig& config);

/// Trainable scalars outside the projection layer.
Index body_param_count(const PhiNetConfig& config);

/// Latent dimensions kept by pruning, in ranking order.
struct PruneInfo {
  Index original_dim = 0;
  std::vector<Index> kept;  // I^(r); size r
  Index r() const noexcept { return static_cast<Index>(kept.size()); }
  friend bool operator==(const PruneInfo&, const PruneInfo&) = default;
};

/// Unit-norm (or zero, for a zero projection) latent vector.
struct LatentVector {
  Eigen::VectorXf values;
  bool normalized = false;
  Index dim() const noexcept { return values.size(); }
};

/// (N, 1, F, T) batch from equally sized spectrograms.
template <typename Scalar>
Tensor<Scalar> mel_batch(std::span<const MelSpectrogram> mels);

template <typename Scalar>
struct BatchNormLayer {
  Parameter<Scalar> gamma, beta;
  Tensor<Scalar> running_mean, running_var;
};

template <typename Scalar>
struct InvertedResidualBlock {
  BlockSpec spec{};
  Parameter<Scalar> expand;
  BatchNormLayer<Scalar> expand_bn;
  Parameter<Scalar> depthwise;
  BatchNormLayer<Scalar> depthwise_bn;
  Parameter<Scalar> se_reduce_w, se_reduce_b, se_expand_w, se_expand_b;
  Parameter<Scalar> project;
  BatchNormLayer<Scalar> project_bn;
};

template <typename Scalar>
class BasicStudentEncoder {
 public:
  BasicStudentEncoder() = default;

  /// Kaiming-uniform (fan-in) weights, zero biases, unit/zero norm affine.
  /// Deterministic in `seed`.
  static BasicStudentEncoder build(const PhiNetConfig& config, std::uint64_t seed);

  const PhiNetConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  Index feature_dim() const noexcept { return projection_w_.value.dim(1); }
  Index output_dim() const noexcept { return projection_w_.value.dim(0); }
  const std::optional<PruneInfo>& prune_info() const noexcept { return prune_; }

  /// Trainable parameters in a fixed order: body first, projection last.
  std::vector<Parameter<Scalar>*> parameters();
  std::vector<Parameter<Scalar>*> body_parameters();
  std::vector<Parameter<Scalar>*> projection_parameters() { return {&projection_w_, &projection_b_}; }
  std::vector<const Parameter<Scalar>*> parameters() const;

  /// Enumerated count of trainable scalars.
  Index parameter_count() const;

  /// Every tensor that defines the model (parameters and normalization
  /// statistics) under stable dotted names.
  std::vector<std::pair<std::string, const Tensor<Scalar>*>> named_tensors() const;
  std::vector<std::pair<std::string, Tensor<Scalar>*>> named_tensors();

  /// Freezing the body makes its parameters constants on the tape.
  void set_body_trainable(bool trainable);
  void zero_grad();

  /// Pooled features (N, U). In train mode BN uses batch statistics and
  /// updates its running statistics.
  Var<Scalar> features(Tape<Scalar>& tape, Var<Scalar> input, BatchNormMode mode);
  /// Un-normalized latent projection (N, output_dim).
  Var<Scalar> project(Tape<Scalar>& tape, Var<Scalar> features);
  Var<Scalar> forward(Tape<Scalar>& tape, Var<Scalar> input, BatchNormMode mode) {
    return project(tape, features(tape, input, mode));
  }

  /// Eval-mode passes on a call-local tape; safe to call concurrently.
  Tensor<Scalar> features_eval(const Tensor<Scalar>& input) const;
  Tensor<Scalar> project_eval(const Tensor<Scalar>& features) const;
  Tensor<Scalar> forward_eval(const Tensor<Scalar>& input) const { return project_eval(features_eval(input)); }

  /// Copy whose projection keeps only rows `kept` (in that order).
  BasicStudentEncoder pruned(std::span<const Index> kept) const;

  template <typename To>
  BasicStudentEncoder<To> cast() const;

  /// Assembles an encoder from loaded tensors (checkpoint path). Shapes are
  /// validated against the config.
  static BasicStudentEncoder from_tensors(const PhiNetConfig& config, std::uint64_t seed,
                                          std::optional<PruneInfo> prune,
                                          const std::vector<std::pair<std::string, Tensor<Scalar>>>& tensors);

 private:
  template <typename>
  friend class BasicStudentEncoder;

  Var<Scalar> bind(Tape<Scalar>& tape, Parameter<Scalar>& p, bool track) {
    return track ? tape.parameter(p) : tape.constant_ref(p.value);
  }
  Var<Scalar> batchnorm(Tape<Scalar>& tape, Var<Scalar> x, BatchNormLayer<Scalar>& bn, BatchNormMode mode, bool track);
  Var<Scalar> run_features(Tape<Scalar>& tape, Var<Scalar> input, BatchNormMode mode, bool track);
  Var<Scalar> run_project(Tape<Scalar>& tape, Var<Scalar> features, bool track);

  PhiNetConfig config_{};
  std::uint64_t seed_ = 0;
  std::optional<PruneInfo> prune_;
  Parameter<Scalar> stem_;
  BatchNormLayer<Scalar> stem_bn_;
  std::vector<InvertedResidualBlock<Scalar>> blocks_;
  Parameter<Scalar> projection_w_, projection_b_;
};

using StudentEncoder = BasicStudentEncoder<float>;

/// Embeds one normalized spectrogram: eval mode, L2-normalized output.
LatentVector embed(const StudentEncoder& encoder, const MelSpectrogram& mel);

/// Un-normalized projections for a batch of equally sized spectrograms.
Eigen::MatrixXf project_batch(const StudentEncoder& encoder, std::span<const MelSpectrogram> mels);

/// Stable fingerprint of config, prune metadata and every tensor's bytes.
std::uint64_t fingerprint(const StudentEncoder& encoder);

extern template class BasicStudentEncoder<float>;
extern template class BasicStudentEncoder<double>;

}  // namespace tinyclap

#include "tinyclap/encoder_impl.hpp"
