#pragma once

// Plain-Eigen reference implementations, written independently of the tape
// ops, for oracle comparisons in double precision.

#include "geoprompt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace geoprompt::oracle {

inline RowMatrix<double> gelu(RowMatrix<double> x) {
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    x.data()[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  }
  return x;
}

inline RowMatrix<double> linear(const ParameterStore<double>& store, const std::string& name, const RowMatrix<double>& x) {
  RowMatrix<double> y = x * store.find(name + ".w")->value.matrix();
  if (const auto* b = store.find(name + ".b")) y.rowwise() += b->value.values().transpose();
  return y;
}

inline RowMatrix<double> mlp(const ParameterStore<double>& store, const std::string& name, const RowMatrix<double>& x) {
  return linear(store, name + ".fc2", gelu(linear(store, name + ".fc1", x)));
}

inline RowMatrix<double> layernorm(const ParameterStore<double>& store, const std::string& name,
                                   const RowMatrix<double>& x, double eps = 1e-5) {
  const auto g = store.find(name + ".gamma")->value.values();
  const auto b = store.find(name + ".beta")->value.values();
  RowMatrix<double> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    for (Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mu) / std::sqrt(var + eps) * g[c] + b[c];
  }
  return out;
}

inline RowMatrix<double> softmax_rows(const RowMatrix<double>& s) {
  RowMatrix<double> out(s.rows(), s.cols());
  for (Index r = 0; r < s.rows(); ++r) {
    double m = s(r, 0);
    for (Index c = 1; c < s.cols(); ++c) m = std::max(m, s(r, c));
    double z = 0;
    for (Index c = 0; c < s.cols(); ++c) z += std::exp(s(r, c) - m);
    for (Index c = 0; c < s.cols(); ++c) out(r, c) = std::exp(s(r, c) - m) / z;
  }
  return out;
}

/// Inverse-distance interpolation over the k nearest centers, found by a full
/// sort (ties by index), weights 1 / (d + eps)^2.
inline RowMatrix<double> idw(const RowMatrix<double>& query, const RowMatrix<double>& centers,
                             const RowMatrix<double>& feat, Index k, double eps = 1e-8) {
  k = std::min<Index>(k, centers.rows());
  RowMatrix<double> out = RowMatrix<double>::Zero(query.rows(), feat.cols());
  std::vector<Index> order(static_cast<std::size_t>(centers.rows()));
  for (Index i = 0; i < query.rows(); ++i) {
    std::vector<double> d(static_cast<std::size_t>(centers.rows()));
    for (Index c = 0; c < centers.rows(); ++c) {
      double s = 0;
      for (Index a = 0; a < query.cols(); ++a) s += (query(i, a) - centers(c, a)) * (query(i, a) - centers(c, a));
      d[static_cast<std::size_t>(c)] = std::sqrt(s);
    }
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return d[static_cast<std::size_t>(a)] < d[static_cast<std::size_t>(b)]; });
    double total = 0;
    std::vector<double> w(static_cast<std::size_t>(k));
    for (Index j = 0; j < k; ++j) {
      const double dj = d[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
      w[static_cast<std::size_t>(j)] = 1.0 / ((dj + eps) * (dj + eps));
      total += w[static_cast<std::size_t>(j)];
    }
    for (Index j = 0; j < k; ++j)
      out.row(i) += w[static_cast<std::size_t>(j)] / total * feat.row(order[static_cast<std::size_t>(j)]);
  }
  return out;
}

}  // namespace geoprompt::oracle
