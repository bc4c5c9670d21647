#pragma once

// Template definitions for encoder.hpp. float and double are instantiated
// once in encoder.cpp.

#include <cmath>
#include <map>

namespace tinyclap {

namespace encoder_detail {

template <typename Scalar>
Tensor<Scalar> kaiming_uniform(Shape shape, Index fan_in, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
  return t;
}

template <typename Scalar>
BatchNormLayer<Scalar> make_bn(const std::string& prefix, Index channels) {
  BatchNormLayer<Scalar> bn;
  bn.gamma = Parameter<Scalar>(prefix + ".weight", Tensor<Scalar>::constant({channels}, Scalar(1)));
  bn.beta = Parameter<Scalar>(prefix + ".bias", Tensor<Scalar>({channels}));
  bn.running_mean = Tensor<Scalar>({channels});
  bn.running_var = Tensor<Scalar>::constant({channels}, Scalar(1));
  return bn;
}

template <typename Scalar>
void append_bn(std::vector<std::pair<std::string, const Tensor<Scalar>*>>& out, const std::string& prefix,
               const BatchNormLayer<Scalar>& bn) {
  out.emplace_back(prefix + ".weight", &bn.gamma.value);
  out.emplace_back(prefix + ".bias", &bn.beta.value);
  out.emplace_back(prefix + ".running_mean", &bn.running_mean);
  out.emplace_back(prefix + ".running_var", &bn.running_var);
}

/// Re-raises numeric failures with the layer that produced them.
template <typename F>
auto in_layer(const std::string& layer, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError("layer '" + layer + "': " + e.what());
  }
}

template <typename From, typename To>
Parameter<To> cast_param(const Parameter<From>& p) {
  Parameter<To> out(p.name, p.value.template cast<To>());
  out.trainable = p.trainable;
  return out;
}

template <typename From, typename To>
BatchNormLayer<To> cast_bn(const BatchNormLayer<From>& bn) {
  return {cast_param<From, To>(bn.gamma), cast_param<From, To>(bn.beta), bn.running_mean.template cast<To>(),
          bn.running_var.template cast<To>()};
}

}  // namespace encoder_detail

template <typename Scalar>
Tensor<Scalar> mel_batch(std::span<const MelSpectrogram> mels) {
  if (mels.empty()) throw ContractError("mel_batch: empty batch");
  const Index f = mels[0].bins(), t = mels[0].frames();
  Tensor<Scalar> batch({static_cast<Index>(mels.size()), 1, f, t});
  for (std::size_t i = 0; i < mels.size(); ++i) {
    if (mels[i].bins() != f || mels[i].frames() != t)
      throw ContractError("mel_batch: spectrogram " + std::to_string(i) + " is " + std::to_string(mels[i].bins()) +
                          "x" + std::to_string(mels[i].frames()) + ", expected " + std::to_string(f) + "x" +
                          std::to_string(t));
    batch.matrix(static_cast<Index>(mels.size()), f * t).row(static_cast<Index>(i)) =
        Eigen::Map<const Eigen::Matrix<float, 1, Eigen::Dynamic>>(mels[i].values.data(), f * t).template cast<Scalar>();
  }
  return batch;
}

template <typename Scalar>
BasicStudentEncoder<Scalar> BasicStudentEncoder<Scalar>::build(const PhiNetConfig& config, std::uint64_t seed) {
  using encoder_detail::kaiming_uniform;
  using encoder_detail::make_bn;
  config.validate();
  Rng rng(seed);
  BasicStudentEncoder enc;
  enc.config_ = config;
  enc.seed_ = seed;
  const Index c0 = stem_channels(config);
  enc.stem_ = Parameter<Scalar>("stem.conv.weight", kaiming_uniform<Scalar>({c0, 1, 3, 3}, 9, rng));
  enc.stem_bn_ = make_bn<Scalar>("stem.bn", c0);
  const std::vector<BlockSpec> schedule = block_schedule(config);
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const BlockSpec& s = schedule[k];
    const std::string p = "blocks." + std::to_string(k);
    const Index h = s.hidden_channels, se = s.hidden_channels / 4;
    InvertedResidualBlock<Scalar> b;
    b.spec = s;
    b.expand = Parameter<Scalar>(p + ".expand.weight", kaiming_uniform<Scalar>({h, s.in_channels, 1, 1}, s.in_channels, rng));
    b.expand_bn = make_bn<Scalar>(p + ".expand_bn", h);
    b.depthwise = Parameter<Scalar>(p + ".depthwise.weight", kaiming_uniform<Scalar>({h, 1, 3, 3}, 9, rng));
    b.depthwise_bn = make_bn<Scalar>(p + ".depthwise_bn", h);
    b.se_reduce_w = Parameter<Scalar>(p + ".se.reduce.weight", kaiming_uniform<Scalar>({se, h}, h, rng));
    b.se_reduce_b = Parameter<Scalar>(p + ".se.reduce.bias", Tensor<Scalar>({se}));
    b.se_expand_w = Parameter<Scalar>(p + ".se.expand.weight", kaiming_uniform<Scalar>({h, se}, se, rng));
    b.se_expand_b = Parameter<Scalar>(p + ".se.expand.bias", Tensor<Scalar>({h}));
    b.project = Parameter<Scalar>(p + ".project.weight", kaiming_uniform<Scalar>({s.out_channels, h, 1, 1}, h, rng));
    b.project_bn = make_bn<Scalar>(p + ".project_bn", s.out_channels);
    enc.blocks_.push_back(std::move(b));
  }
  const Index u = tinyclap::feature_dim(config);
  enc.projection_w_ = Parameter<Scalar>("projection.weight", kaiming_uniform<Scalar>({config.latent_dim, u}, u, rng));
  enc.projection_b_ = Parameter<Scalar>("projection.bias", Tensor<Scalar>({config.latent_dim}));
  return enc;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> BasicStudentEncoder<Scalar>::body_parameters() {
  std::vector<Parameter<Scalar>*> out{&stem_, &stem_bn_.gamma, &stem_bn_.beta};
  for (auto& b : blocks_) {
    for (Parameter<Scalar>* p :
         {&b.expand, &b.expand_bn.gamma, &b.expand_bn.beta, &b.depthwise, &b.depthwise_bn.gamma, &b.depthwise_bn.beta,
          &b.se_reduce_w, &b.se_reduce_b, &b.se_expand_w, &b.se_expand_b, &b.project, &b.project_bn.gamma,
          &b.project_bn.beta})
      out.push_back(p);
  }
  return out;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> BasicStudentEncoder<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out = body_parameters();
  out.push_back(&projection_w_);
  out.push_back(&projection_b_);
  return out;
}

template <typename Scalar>
std::vector<const Parameter<Scalar>*> BasicStudentEncoder<Scalar>::parameters() const {
  auto mut = const_cast<BasicStudentEncoder*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename Scalar>
Index BasicStudentEncoder<Scalar>::parameter_count() const {
  Index n = 0;
  for (const Parameter<Scalar>* p : parameters()) n += p->value.size();
  return n;
}

template <typename Scalar>
std::vector<std::pair<std::string, const Tensor<Scalar>*>> BasicStudentEncoder<Scalar>::named_tensors() const {
  using encoder_detail::append_bn;
  std::vector<std::pair<std::string, const Tensor<Scalar>*>> out;
  out.emplace_back(stem_.name, &stem_.value);
  append_bn(out, "stem.bn", stem_bn_);
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const auto& b = blocks_[k];
    const std::string p = "blocks." + std::to_string(k);
    out.emplace_back(b.expand.name, &b.expand.value);
    append_bn(out, p + ".expand_bn", b.expand_bn);
    out.emplace_back(b.depthwise.name, &b.depthwise.value);
    append_bn(out, p + ".depthwise_bn", b.depthwise_bn);
    for (const Parameter<Scalar>* q : {&b.se_reduce_w, &b.se_reduce_b, &b.se_expand_w, &b.se_expand_b})
      out.emplace_back(q->name, &q->value);
    out.emplace_back(b.project.name, &b.project.value);
    append_bn(out, p + ".project_bn", b.project_bn);
  }
  out.emplace_back(projection_w_.name, &projection_w_.value);
  out.emplace_back(projection_b_.name, &projection_b_.value);
  return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>*>> BasicStudentEncoder<Scalar>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<Scalar>*>> out;
  for (auto& [name, t] : std::as_const(*this).named_tensors()) out.emplace_back(name, const_cast<Tensor<Scalar>*>(t));
  return out;
}

template <typename Scalar>
void BasicStudentEncoder<Scalar>::set_body_trainable(bool trainable) {
  for (Parameter<Scalar>* p : body_parameters()) p->trainable = trainable;
}

template <typename Scalar>
void BasicStudentEncoder<Scalar>::zero_grad() {
  for (Parameter<Scalar>* p : parameters()) p->zero_grad();
}

template <typename Scalar>
Var<Scalar> BasicStudentEncoder<Scalar>::batchnorm(Tape<Scalar>& tape, Var<Scalar> x, BatchNormLayer<Scalar>& bn,
                                                   BatchNormMode mode, bool track) {
  return tinyclap::batchnorm2d(x, bind(tape, bn.gamma, track), bind(tape, bn.beta, track), bn.running_mean,
                               bn.running_var, mode);
}

template <typename Scalar>
Var<Scalar> BasicStudentEncoder<Scalar>::run_features(Tape<Scalar>& tape, Var<Scalar> input, BatchNormMode mode,
                                                      bool track) {
  using encoder_detail::in_layer;
  if (input.shape().size() != 4 || input.shape()[1] != 1)
    throw ContractError("encoder input must be (N, 1, F, T), got " + to_string(input.shape()));
  Var<Scalar> x = in_layer("stem", [&] {
    Var<Scalar> y = conv2d(input, bind(tape, stem_, track), 2, 1);
    return hswish(batchnorm(tape, y, stem_bn_, mode, track));
  });
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    auto& b = blocks_[k];
    const std::string name = "blocks." + std::to_string(k);
    x = in_layer(name, [&] {
      Var<Scalar> h = hswish(batchnorm(tape, conv2d(x, bind(tape, b.expand, track), 1, 0), b.expand_bn, mode, track));
      h = hswish(batchnorm(tape, depthwise_conv2d(h, bind(tape, b.depthwise, track), b.spec.stride, 1), b.depthwise_bn,
                           mode, track));
      Var<Scalar> s = global_avg_pool(h);
      s = relu(linear(s, bind(tape, b.se_reduce_w, track), bind(tape, b.se_reduce_b, track)));
      s = sigmoid(linear(s, bind(tape, b.se_expand_w, track), bind(tape, b.se_expand_b, track)));
      h = mul(h, s);
      Var<Scalar> y = batchnorm(tape, conv2d(h, bind(tape, b.project, track), 1, 0), b.project_bn, mode, track);
      return b.spec.residual ? add(y, x) : y;
    });
  }
  return in_layer("pool", [&] { return global_avg_pool(x); });
}

template <typename Scalar>
Var<Scalar> BasicStudentEncoder<Scalar>::run_project(Tape<Scalar>& tape, Var<Scalar> features, bool track) {
  return encoder_detail::in_layer("projection", [&] {
    return linear(features, bind(tape, projection_w_, track), bind(tape, projection_b_, track));
  });
}

template <typename Scalar>
Var<Scalar> BasicStudentEncoder<Scalar>::features(Tape<Scalar>& tape, Var<Scalar> input, BatchNormMode mode) {
  return run_features(tape, input, mode, true);
}

template <typename Scalar>
Var<Scalar> BasicStudentEncoder<Scalar>::project(Tape<Scalar>& tape, Var<Scalar> features) {
  return run_project(tape, features, true);
}

// The eval paths bind parameters as borrowed constants and never write the
// running statistics, so the const_cast does not mutate observable state.
template <typename Scalar>
Tensor<Scalar> BasicStudentEncoder<Scalar>::features_eval(const Tensor<Scalar>& input) const {
  Tape<Scalar> tape;
  auto* self = const_cast<BasicStudentEncoder*>(this);
  return self->run_features(tape, tape.constant_ref(input), BatchNormMode::kEval, false).value();
}

template <typename Scalar>
Tensor<Scalar> BasicStudentEncoder<Scalar>::project_eval(const Tensor<Scalar>& features) const {
  Tape<Scalar> tape;
  auto* self = const_cast<BasicStudentEncoder*>(this);
  return self->run_project(tape, tape.constant_ref(features), false).value();
}

template <typename Scalar>
BasicStudentEncoder<Scalar> BasicStudentEncoder<Scalar>::pruned(std::span<const Index> kept) const {
  const Index d = output_dim(), u = feature_dim();
  if (kept.empty() || static_cast<Index>(kept.size()) > d)
    throw ContractError("prune: r must lie in [1, " + std::to_string(d) + "], got " + std::to_string(kept.size()));
  std::vector<bool> seen(static_cast<std::size_t>(d), false);
  for (Index i : kept) {
    if (i < 0 || i >= d) throw ContractError("prune: index " + std::to_string(i) + " outside [0, " + std::to_string(d) + ")");
    if (seen[static_cast<std::size_t>(i)]) throw ContractError("prune: duplicate index " + std::to_string(i));
    seen[static_cast<std::size_t>(i)] = true;
  }
  BasicStudentEncoder out = *this;
  const Index r = static_cast<Index>(kept.size());
  Tensor<Scalar> w({r, u}), b({r});
  for (Index j = 0; j < r; ++j) {
    w.matrix(r, u).row(j) = projection_w_.value.matrix(d, u).row(kept[j]);
    b[j] = projection_b_.value[kept[j]];
  }
  out.projection_w_ = Parameter<Scalar>(projection_w_.name, std::move(w));
  out.projection_b_ = Parameter<Scalar>(projection_b_.name, std::move(b));
  PruneInfo info;
  if (prune_) {
    // Compose with an earlier pruning: map back to original dimensions.
    info.original_dim = prune_->original_dim;
    for (Index j : kept) info.kept.push_back(prune_->kept[static_cast<std::size_t>(j)]);
  } else {
    info.original_dim = d;
    info.kept.assign(kept.begin(), kept.end());
  }
  out.prune_ = std::move(info);
  return out;
}

template <typename Scalar>
template <typename To>
BasicStudentEncoder<To> BasicStudentEncoder<Scalar>::cast() const {
  using encoder_detail::cast_bn;
  using encoder_detail::cast_param;
  BasicStudentEncoder<To> out;
  out.config_ = config_;
  out.seed_ = seed_;
  out.prune_ = prune_;
  out.stem_ = cast_param<Scalar, To>(stem_);
  out.stem_bn_ = cast_bn<Scalar, To>(stem_bn_);
  for (const auto& b : blocks_) {
    InvertedResidualBlock<To> c;
    c.spec = b.spec;
    c.expand = cast_param<Scalar, To>(b.expand);
    c.expand_bn = cast_bn<Scalar, To>(b.expand_bn);
    c.depthwise = cast_param<Scalar, To>(b.depthwise);
    c.depthwise_bn = cast_bn<Scalar, To>(b.depthwise_bn);
    c.se_reduce_w = cast_param<Scalar, To>(b.se_reduce_w);
    c.se_reduce_b = cast_param<Scalar, To>(b.se_reduce_b);
    c.se_expand_w = cast_param<Scalar, To>(b.se_expand_w);
    c.se_expand_b = cast_param<Scalar, To>(b.se_expand_b);
    c.project = cast_param<Scalar, To>(b.project);
    c.project_bn = cast_bn<Scalar, To>(b.project_bn);
    out.blocks_.push_back(std::move(c));
  }
  out.projection_w_ = cast_param<Scalar, To>(projection_w_);
  out.projection_b_ = cast_param<Scalar, To>(projection_b_);
  return out;
}

template <typename Scalar>
BasicStudentEncoder<Scalar> BasicStudentEncoder<Scalar>::from_tensors(
    const PhiNetConfig& config, std::uint64_t seed, std::optional<PruneInfo> prune,
    const std::vector<std::pair<std::string, Tensor<Scalar>>>& tensors) {
  // Build the architecture for its shapes, then overwrite every tensor.
  PhiNetConfig shape_config = config;
  BasicStudentEncoder enc = build(shape_config, seed);
  if (prune) {
    std::vector<Index> identity(prune->kept.size());
    for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = static_cast<Index>(i);
    enc = enc.pruned(identity);
    enc.prune_ = std::move(prune);
  }
  std::map<std::string, const Tensor<Scalar>*> by_name;
  for (const auto& [name, t] : tensors) {
    if (!by_name.emplace(name, &t).second) throw FormatError("checkpoint: duplicate tensor '" + name + "'");
  }
  auto slots = enc.named_tensors();
  if (slots.size() != by_name.size())
    throw FormatError("checkpoint: expected " + std::to_string(slots.size()) + " tensors for this configuration, found " +
                      std::to_string(by_name.size()));
  for (auto& [name, slot] : slots) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (it->second->shape() != slot->shape())
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + to_string(it->second->shape()) +
                        ", configuration requires " + to_string(slot->shape()));
    *slot = *it->second;
  }
  for (Parameter<Scalar>* p : enc.parameters()) p->zero_grad();
  return enc;
}

}  // namespace tinyclap
