#pragma once

#include "geoprompt/tensor.hpp"

#include <functional>
#include <span>
#include <unordered_map>

namespace geoprompt {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<Scalar>& tape() const { return *tape_; }
  int id() const noexcept { return id_; }

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  /// Gradient after backward(); zeros when the node was not reached.
  Tensor<Scalar> grad() const { return tape_->grad(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape for one forward pass.
///
/// Nodes are appended in evaluation order, so replaying them backwards is a
/// valid topological order. Parameters enter as leaves; after backward() their
/// gradients can be added into Parameter::grad or collected per tape for an
/// ordered reduction across samples.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), false, nullptr); }
  Var<Scalar> variable(Tensor<Scalar> value) { return push(std::move(value), true, nullptr); }

  /// Leaf for a parameter; repeated calls return the same node.
  Var<Scalar> parameter(Parameter<Scalar>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var<Scalar>(this, it->second);
    const bool tracked = !p.frozen || track_frozen_;
    Var<Scalar> v = push(p.value, tracked, nullptr);
    param_nodes_.emplace(&p, v.id());
    param_order_.push_back(&p);
    return v;
  }

  /// When set, frozen parameters are also differentiated (used by audits).
  void set_track_frozen(bool on) noexcept { track_frozen_ = on; }

  /// Records an op output. The node requires grad if any input does.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    bool any = false;
    for (const auto& in : inputs) any = any || requires_grad(in.id());
    return push(std::move(value), any, any ? std::move(fn) : BackwardFn{});
  }
  Var<Scalar> record(Tensor<Scalar> value, std::span<const Var<Scalar>> inputs, BackwardFn fn) {
    bool any = false;
    for (const auto& in : inputs) any = any || requires_grad(in.id());
    return push(std::move(value), any, any ? std::move(fn) : BackwardFn{});
  }

  const Tensor<Scalar>& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

  Tensor<Scalar> grad(int id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.grad.empty() && n.value.size() != 0 ? Tensor<Scalar>(n.value.shape()) : n.grad;
  }

  /// Mutable gradient buffer for an input, allocated on first use.
  /// Returns nullptr when the input does not require grad.
  Tensor<Scalar>* grad_buffer(const Var<Scalar>& v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id())];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty() && n.value.size() != 0) n.grad = Tensor<Scalar>(n.value.shape());
    return &n.grad;
  }

  void backward(const Var<Scalar>& loss) {
    if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
    const Tensor<Scalar>& lv = value(loss.id());
    if (lv.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_string(lv.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<Scalar>();
    if (!requires_grad(loss.id())) return;
    Tensor<Scalar>* seed = grad_buffer(loss);
    seed->values().setOnes();
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Adds this tape's parameter gradients into Parameter::grad.
  void accumulate_parameter_grads() const {
    for (Parameter<Scalar>* p : param_order_) {
      const Node& n = nodes_[static_cast<std::size_t>(param_nodes_.at(p))];
      if (n.grad.empty()) continue;
      if (p->grad.shape() != p->value.shape()) p->grad = Tensor<Scalar>(p->value.shape());
      p->grad.values() += n.grad.values();
    }
  }

  /// Parameter gradients of this tape in first-use order (empty tensors skipped).
  std::vector<std::pair<Parameter<Scalar>*, Tensor<Scalar>>> parameter_grads() const {
    std::vector<std::pair<Parameter<Scalar>*, Tensor<Scalar>>> out;
    for (Parameter<Scalar>* p : param_order_) {
      const Node& n = nodes_[static_cast<std::size_t>(param_nodes_.at(p))];
      if (!n.grad.empty()) out.emplace_back(p, n.grad);
    }
    return out;
  }

  /// Folds a discrete selection (sampling, neighbor or argmax indices) into a
  /// digest, so callers can detect when a perturbation changed a selection.
  void note_selection(std::span<const Index> indices) {
    for (Index i : indices) mix(static_cast<std::uint64_t>(i));
    mix(0x9e3779b97f4a7c15ULL ^ indices.size());
  }
  std::uint64_t selection_digest() const noexcept { return digest_; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(Tensor<Scalar> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<Scalar>(), requires_grad, std::move(fn)});
    return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1));
  }

  void mix(std::uint64_t x) {
    digest_ ^= x + 0x9e3779b97f4a7c15ULL + (digest_ << 6) + (digest_ >> 2);
    digest_ *= 0xbf58476d1ce4e5b9ULL;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, int> param_nodes_;
  std::vector<Parameter<Scalar>*> param_order_;
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
  bool track_frozen_ = false;
};

}  // namespace geoprompt
