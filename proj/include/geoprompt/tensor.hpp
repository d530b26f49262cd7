#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace geoprompt {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using IndexMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Dense row-major array of rank >= 0. Rank-0 tensors hold one value.
///
/// Most kernels treat a tensor as a matrix whose rows span every leading
/// dimension and whose columns are the last dimension, so a C x K x F group
/// tensor is viewed as (C*K) x F.
template <typename Scalar>
class Tensor {
 public:
  using Values = Vector<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() : shape_{0} {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(Values::Zero(shape_size(shape_))) {}

  Tensor(Shape shape, Values values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_size(shape_) != values_.size()) {
      throw std::invalid_argument("tensor shape " + shape_string(shape_) + " does not match " +
                                  std::to_string(values_.size()) + " values");
    }
  }

  static Tensor scalar(Scalar value) {
    Values v(1);
    v[0] = value;
    return Tensor(Shape{}, std::move(v));
  }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  static Tensor full(Shape shape, Scalar value) {
    const Index n = shape_size(shape);
    return Tensor(std::move(shape), Values::Constant(n, value));
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index size() const noexcept { return values_.size(); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  bool empty() const noexcept { return values_.size() == 0; }

  Index cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const noexcept {
    const Index c = cols();
    return c == 0 ? 0 : values_.size() / c;
  }

  Values& values() noexcept { return values_; }
  const Values& values() const noexcept { return values_; }
  Scalar* data() noexcept { return values_.data(); }
  const Scalar* data() const noexcept { return values_.data(); }

  MatrixMap matrix() { return MatrixMap(values_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(values_.data(), rows(), cols()); }

  Scalar item() const {
    if (values_.size() != 1) {
      throw std::invalid_argument("item() on tensor of shape " + shape_string(shape_));
    }
    return values_[0];
  }

  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), values_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>());
  }

  bool all_finite() const { return values_.allFinite(); }

  void set_zero() { values_.setZero(); }

 private:
  Shape shape_;
  Values values_;
};

/// A named trainable array. Frozen parameters are never written by an optimizer.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool frozen = false;

  bool trainable() const noexcept { return !frozen; }
  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<Scalar>(value.shape());
    else grad.set_zero();
  }
};

/// Ordered registry of parameters with stable addresses and unique names.
template <typename Scalar>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<Scalar>& add(std::string name, Tensor<Scalar> init) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
    auto p = std::make_unique<Parameter<Scalar>>();
    p->name = name;
    p->grad = Tensor<Scalar>(init.shape());
    p->value = std::move(init);
    by_name_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<Scalar>* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<Scalar>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : params_[it->second].get();
  }
  Parameter<Scalar>& at(const std::string& name) {
    auto* p = find(name);
    if (!p) throw std::out_of_range("no parameter named " + name);
    return *p;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return *params_[i]; }

  template <typename F>
  void for_each(F&& f) {
    for (auto& p : params_) f(*p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& p : params_) f(*p);
  }

  std::vector<Parameter<Scalar>*> trainable() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& p : params_)
      if (!p->frozen) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

}  // namespace geoprompt
