#pragma once

// Reverse-mode differentiation over a linear tape. Every op below computes
// its value eagerly through kernels.hpp and, when any input needs a
// gradient, records a closure that pushes the output gradient back to its
// inputs. Tapes are single-owner and not thread-safe.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tinyclap/kernels.hpp"

namespace tinyclap {

using kernels::BatchNormMode;

/// A named tensor that an optimizer may update, with its gradient slot.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<Scalar> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape())
      grad = Tensor<Scalar>(value.shape());
    else
      grad.data().setZero();
  }
};

template <typename Scalar>
class Tape;

/// Handle to a node on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tape<Scalar>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  /// Receives the tape and the id of the node being differentiated.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) { return push(Node{std::move(value), nullptr, {}, {}, nullptr, false}); }

  /// Leaf that borrows `value`; the referent must outlive the tape.
  Var<Scalar> constant_ref(const Tensor<Scalar>& value) { return push(Node{{}, &value, {}, {}, nullptr, false}); }

  /// Leaf whose gradient is kept on the tape (read it back with grad()).
  Var<Scalar> variable(Tensor<Scalar> value) { return push(Node{std::move(value), nullptr, {}, {}, nullptr, true}); }

  /// Leaf bound to a parameter. backward() accumulates into param.grad when
  /// the parameter is trainable; frozen parameters act as constants.
  Var<Scalar> parameter(Parameter<Scalar>& param) {
    return push(Node{{}, &param.value, {}, {}, &param, param.trainable});
  }

  /// Appends an op output. The node needs a gradient iff some input does.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var<Scalar>& in : inputs) {
      if (in.tape() != this) throw ContractError("op inputs recorded on a different tape");
      needs = needs || requires_grad(in.id());
    }
    return push(Node{std::move(value), nullptr, {}, needs ? std::move(fn) : BackwardFn{}, nullptr, needs});
  }

  const Tensor<Scalar>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.borrowed ? *n.borrowed : n.own;
  }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient accumulated at a node; zeros when nothing flowed there.
  Tensor<Scalar> grad(Var<Scalar> v) const {
    const Node& n = nodes_.at(v.id());
    return n.grad.shape() == value(v.id()).shape() && n.grad.size() ? n.grad : Tensor<Scalar>(value(v.id()).shape());
  }

  /// Gradient slot of a node, zero-initialized on first access. Only for use
  /// inside backward closures.
  Tensor<Scalar>& grad_slot(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.size() != value(id).size() || n.grad.shape() != value(id).shape()) n.grad = Tensor<Scalar>(value(id).shape());
    return n.grad;
  }

  /// Propagates d(loss)/d(node) to every node that requires a gradient.
  void backward(Var<Scalar> loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
    if (loss.value().size() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
    if (!requires_grad(loss.id())) return;
    grad_slot(loss.id()).data().setConstant(Scalar(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        n.param->grad.data() += n.grad.data();
      }
    }
  }

 private:
  struct Node {
    Tensor<Scalar> own;
    const Tensor<Scalar>* borrowed;
    Tensor<Scalar> grad;
    BackwardFn backward;
    Parameter<Scalar>* param;
    bool requires_grad;
  };

  Var<Scalar> push(Node n) {
    if (n.param && n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar>* slot_if(Tape<Scalar>& tape, Var<Scalar> v) {
  return v.requires_grad() ? &tape.grad_slot(v.id()) : nullptr;
}

template <typename Scalar>
Tape<Scalar>& tape_of(Var<Scalar> v) {
  if (!v.tape()) throw ContractError("op applied to an unbound variable");
  return *v.tape();
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> w, Index stride, Index padding) {
  Tape<Scalar>& tape = detail::tape_of(x);
  Tensor<Scalar> y = kernels::conv2d(x.value(), w.value(), stride, padding);
  require_finite(y, "conv2d");
  return tape.record(std::move(y), {x, w}, [x, w, stride, padding](Tape<Scalar>& t, std::size_t self) {
    kernels::conv2d_backward(x.value(), w.value(), stride, padding, t.grad_slot(self), detail::slot_if(t, x),
                             detail::slot_if(t, w));
  });
}

template <typename Scalar>
Var<Scalar> depthwise_conv2d(Var<Scalar> x, Var<Scalar> w, Index stride, Index padding) {
  Tape<Scalar>& tape = detail::tape_of(x);
  Tensor<Scalar> y = kernels::depthwise_conv2d(x.value(), w.value(), stride, padding);
  require_finite(y, "depthwise_conv2d");
  return tape.record(std::move(y), {x, w}, [x, w, stride, padding](Tape<Scalar>& t, std::size_t self) {
    kernels::depthwise_conv2d_backward(x.value(), w.value(), stride, padding, t.grad_slot(self),
                                       detail::slot_if(t, x), detail::slot_if(t, w));
  });
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, std::optional<Var<Scalar>> b = std::nullopt) {
  Tape<Scalar>& tape = detail::tape_of(x);
  Tensor<Scalar> y = kernels::linear(x.value(), w.value(), b ? &b->value() : nullptr);
  require_finite(y, "linear");
  auto fn = [x, w, b](Tape<Scalar>& t, std::size_t self) {
    kernels::linear_backward(x.value(), w.value(), t.grad_slot(self), detail::slot_if(t, x), detail::slot_if(t, w),
                             b ? detail::slot_if(t, *b) : nullptr);
  };
  if (b) return tape.record(std::move(y), {x, w, *b}, fn);
  return tape.record(std::move(y), {x, w}, fn);
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  return linear(x, w, std::optional<Var<Scalar>>(b));
}

/// Running statistics are read in eval mode and updated in train mode.
template <typename Scalar>
Var<Scalar> batchnorm2d(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, Tensor<Scalar>& running_mean,
                        Tensor<Scalar>& running_var, BatchNormMode mode, const kernels::BatchNormOptions& opts = {}) {
  Tape<Scalar>& tape = detail::tape_of(x);
  const bool needs = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  auto cache = needs ? std::make_shared<kernels::BatchNormCache<Scalar>>() : nullptr;
  Tensor<Scalar> y =
      kernels::batchnorm2d(x.value(), gamma.value(), beta.value(), running_mean, running_var, mode, opts, cache.get());
  require_finite(y, "batchnorm2d");
  return tape.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, cache](Tape<Scalar>& t, std::size_t self) {
    kernels::batchnorm2d_backward(gamma.value(), *cache, t.grad_slot(self), detail::slot_if(t, x),
                                  detail::slot_if(t, gamma), detail::slot_if(t, beta));
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  return detail::tape_of(x).record(kernels::relu(x.value()), {x}, [x](Tape<Scalar>& t, std::size_t self) {
    t.grad_slot(x.id()).data() += kernels::relu_grad(x.value(), t.grad_slot(self)).data();
  });
}

template <typename Scalar>
Var<Scalar> hswish(Var<Scalar> x) {
  return detail::tape_of(x).record(kernels::hswish(x.value()), {x}, [x](Tape<Scalar>& t, std::size_t self) {
    t.grad_slot(x.id()).data() += kernels::hswish_grad(x.value(), t.grad_slot(self)).data();
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  return detail::tape_of(x).record(kernels::sigmoid(x.value()), {x}, [x](Tape<Scalar>& t, std::size_t self) {
    t.grad_slot(x.id()).data() += kernels::sigmoid_grad(t.value(self), t.grad_slot(self)).data();
  });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(Var<Scalar> x) {
  return detail::tape_of(x).record(kernels::global_avg_pool(x.value()), {x}, [x](Tape<Scalar>& t, std::size_t self) {
    kernels::global_avg_pool_backward(x.shape(), t.grad_slot(self), t.grad_slot(x.id()));
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> x, Var<Scalar> y) {
  require_same_shape(x.shape(), y.shape(), "add");
  Tensor<Scalar> out(x.shape(), x.value().data() + y.value().data());
  require_finite(out, "add");
  return detail::tape_of(x).record(std::move(out), {x, y}, [x, y](Tape<Scalar>& t, std::size_t self) {
    const Tensor<Scalar>& g = t.grad_slot(self);
    if (x.requires_grad()) t.grad_slot(x.id()).data() += g.data();
    if (y.requires_grad()) t.grad_slot(y.id()).data() += g.data();
  });
}

/// Elementwise product. Besides equal shapes, y of shape (N, C) broadcasts
/// over the spatial axes of an NCHW x (channel gating).
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> x, Var<Scalar> y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (xs == ys) {
    Tensor<Scalar> out(xs, x.value().data().cwiseProduct(y.value().data()));
    require_finite(out, "mul");
    return detail::tape_of(x).record(std::move(out), {x, y}, [x, y](Tape<Scalar>& t, std::size_t self) {
      const Tensor<Scalar>& g = t.grad_slot(self);
      if (x.requires_grad()) t.grad_slot(x.id()).data() += g.data().cwiseProduct(y.value().data());
      if (y.requires_grad()) t.grad_slot(y.id()).data() += g.data().cwiseProduct(x.value().data());
    });
  }
  if (xs.size() != 4 || ys.size() != 2 || xs[0] != ys[0] || xs[1] != ys[1])
    throw ContractError("mul: shape mismatch " + to_string(xs) + " vs " + to_string(ys));
  const Index nc = xs[0] * xs[1], plane = xs[2] * xs[3];
  Tensor<Scalar> out(xs);
  out.matrix(nc, plane) = x.value().matrix(nc, plane).array().colwise() * y.value().data().array();
  require_finite(out, "mul");
  return detail::tape_of(x).record(std::move(out), {x, y}, [x, y, nc, plane](Tape<Scalar>& t, std::size_t self) {
    const auto g = t.grad_slot(self).matrix(nc, plane);
    if (x.requires_grad())
      t.grad_slot(x.id()).matrix(nc, plane).array() += g.array().colwise() * y.value().data().array();
    if (y.requires_grad())
      t.grad_slot(y.id()).data() += (g.array() * x.value().matrix(nc, plane).array()).rowwise().sum().matrix();
  });
}

template <typename Scalar>
Var<Scalar> l2_normalize(Var<Scalar> x, int axis) {
  Tensor<Scalar> y = kernels::l2_normalize(x.value(), axis);
  require_finite(y, "l2_normalize");
  return detail::tape_of(x).record(std::move(y), {x}, [x, axis](Tape<Scalar>& t, std::size_t self) {
    kernels::l2_normalize_backward(x.value(), axis, t.grad_slot(self), t.grad_slot(x.id()));
  });
}

/// Sum of all elements, as a rank-0 tensor.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> y = Tensor<Scalar>::scalar(x.value().data().sum());
  require_finite(y, "sum");
  return detail::tape_of(x).record(std::move(y), {x}, [x](Tape<Scalar>& t, std::size_t self) {
    t.grad_slot(x.id()).data().array() += t.grad_slot(self)[0];
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  Tensor<Scalar> y(x.shape(), x.value().data() * factor);
  require_finite(y, "scale");
  return detail::tape_of(x).record(std::move(y), {x}, [x, factor](Tape<Scalar>& t, std::size_t self) {
    t.grad_slot(x.id()).data() += t.grad_slot(self).data() * factor;
  });
}

/// Identity in the forward pass; blocks all gradient flow.
template <typename Scalar>
Var<Scalar> stop_gradient(Var<Scalar> x) {
  return detail::tape_of(x).constant(x.value());
}

}  // namespace tinyclap
