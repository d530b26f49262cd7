#pragma once

#include "geoprompt/ops.hpp"
#include "geoprompt/random.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>

namespace geoprompt {

enum class Init { xavier, zeros };

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, double bound, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = static_cast<Scalar>(u(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> normal_tensor(Shape shape, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = static_cast<Scalar>(n(rng));
  return t;
}

/// y = x w (+ b), w stored in x out.
template <typename Scalar>
struct Linear {
  Parameter<Scalar>* w = nullptr;
  Parameter<Scalar>* b = nullptr;

  static Linear create(ParameterStore<Scalar>& store, const std::string& name, Index in, Index out, std::uint64_t seed,
                       Init init = Init::xavier, bool bias = true) {
    Linear l;
    const std::string wn = name + ".w";
    Tensor<Scalar> w0 = init == Init::zeros
                            ? Tensor<Scalar>(Shape{in, out})
                            : uniform_tensor<Scalar>(Shape{in, out}, std::sqrt(6.0 / static_cast<double>(in + out)),
                                                     name_seed(seed, wn));
    l.w = &store.add(wn, std::move(w0));
    if (bias) l.b = &store.add(name + ".b", Tensor<Scalar>(Shape{out}));
    return l;
  }

  Index in() const { return w->value.dim(0); }
  Index out() const { return w->value.dim(1); }

  Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) const {
    Var<Scalar> y = matmul(x, t.parameter(*w));
    return b ? add(y, t.parameter(*b)) : y;
  }
};

/// Two linear layers with a GELU between them.
template <typename Scalar>
struct Mlp {
  Linear<Scalar> fc1;
  Linear<Scalar> fc2;

  static Mlp create(ParameterStore<Scalar>& store, const std::string& name, Index in, Index hidden, Index out,
                    std::uint64_t seed, Init last = Init::xavier) {
    return Mlp{Linear<Scalar>::create(store, name + ".fc1", in, hidden, seed),
               Linear<Scalar>::create(store, name + ".fc2", hidden, out, seed, last)};
  }

  Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) const { return fc2(t, gelu(fc1(t, x))); }
};

/// Classification head: an Mlp, or one linear layer "<name>.fc" when
/// `hidden` is 0.
template <typename Scalar>
struct Classifier {
  std::optional<Mlp<Scalar>> mlp;
  Linear<Scalar> fc;

  static Classifier create(ParameterStore<Scalar>& store, const std::string& name, Index in, Index hidden, Index out,
                           std::uint64_t seed) {
    Classifier c;
    if (hidden > 0) c.mlp = Mlp<Scalar>::create(store, name, in, hidden, out, seed);
    else c.fc = Linear<Scalar>::create(store, name + ".fc", in, out, seed);
    return c;
  }

  Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) const { return mlp ? (*mlp)(t, x) : fc(t, x); }
};

template <typename Scalar>
struct LayerNorm {
  Parameter<Scalar>* gamma = nullptr;
  Parameter<Scalar>* beta = nullptr;

  static LayerNorm create(ParameterStore<Scalar>& store, const std::string& name, Index dim) {
    Tensor<Scalar> ones(Shape{dim});
    ones.values().setOnes();
    LayerNorm n;
    n.gamma = &store.add(name + ".gamma", std::move(ones));
    n.beta = &store.add(name + ".beta", Tensor<Scalar>(Shape{dim}));
    return n;
  }

  Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) const {
    return layernorm(x, t.parameter(*gamma), t.parameter(*beta));
  }
};

}  // namespace geoprompt
