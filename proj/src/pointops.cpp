#include "geoprompt/pointops.hpp"

#include "geoprompt/ops.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace geoprompt {

template <typename Scalar>
PointCloud<Scalar>::PointCloud(RowMatrix<Scalar> coords) : coords_(std::move(coords)) {
  if (coords_.cols() != 3) throw std::invalid_argument("point cloud must have 3 columns, got " + std::to_string(coords_.cols()));
  if (coords_.rows() < 1) throw std::invalid_argument("point cloud must hold at least one point");
  if (!coords_.allFinite()) throw std::invalid_argument("point cloud has non-finite coordinates");
}

void NeighborIndex::validate(Index reference_size) const {
  auto bad = [&](Index i) { return i < 0 || i >= reference_size; };
  for (Index c : centers) {
    if (bad(c)) throw std::invalid_argument("stale center index " + std::to_string(c) + " for reference of size " + std::to_string(reference_size));
  }
  for (Index i = 0; i < neighbors.size(); ++i) {
    if (bad(neighbors.data()[i])) {
      throw std::invalid_argument("stale neighbor index " + std::to_string(neighbors.data()[i]) +
                                  " for reference of size " + std::to_string(reference_size));
    }
  }
  if (!centers.empty() && static_cast<Index>(centers.size()) != neighbors.rows()) {
    throw std::invalid_argument("neighbor index has " + std::to_string(centers.size()) + " centers but " +
                                std::to_string(neighbors.rows()) + " rows");
  }
}

std::vector<Index> NeighborIndex::flat_neighbors() const {
  return std::vector<Index>(neighbors.data(), neighbors.data() + neighbors.size());
}

std::vector<Index> NeighborIndex::repeated_centers() const {
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(neighbors.size()));
  for (Index c : centers)
    for (Index j = 0; j < k(); ++j) out.push_back(c);
  return out;
}

void InterpConfig::validate() const {
  if (k_interp < 1) throw std::invalid_argument("k_interp must be >= 1");
  if (!(power > 0)) throw std::invalid_argument("interpolation power must be > 0");
  if (!(epsilon > 0)) throw std::invalid_argument("interpolation epsilon must be > 0");
}

template <typename Scalar>
std::vector<Index> farthest_point_sample_from(const RowMatrix<Scalar>& positions, Index m, Index first) {
  const Index n = positions.rows();
  if (m < 1 || m > n) {
    throw std::invalid_argument("farthest_point_sample: m=" + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");
  }
  if (first < 0 || first >= n) throw std::invalid_argument("farthest_point_sample: first index out of range");
  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(m));
  picked.push_back(first);
  Vector<Scalar> min_dist = (positions.rowwise() - positions.row(first)).rowwise().squaredNorm();
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  taken[static_cast<std::size_t>(first)] = 1;
  for (Index s = 1; s < m; ++s) {
    Index best = -1;
    Scalar best_d = 0;
    for (Index i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || min_dist[i] > best_d) {
        best = i;
        best_d = min_dist[i];
      }
    }
    picked.push_back(best);
    taken[static_cast<std::size_t>(best)] = 1;
    min_dist = min_dist.cwiseMin((positions.rowwise() - positions.row(best)).rowwise().squaredNorm());
  }
  return picked;
}

template <typename Scalar>
std::vector<Index> farthest_point_sample(const RowMatrix<Scalar>& positions, Index m, std::uint64_t seed) {
  if (positions.rows() < 1) throw std::invalid_argument("farthest_point_sample: empty point set");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, positions.rows() - 1);
  return farthest_point_sample_from<Scalar>(positions, m, pick(rng));
}

namespace {

template <typename Scalar>
void nearest_row(const RowMatrix<Scalar>& reference, const auto& q, Index k, std::vector<Index>& order,
                 Vector<Scalar>& dist, IndexMatrix& out, Index out_row) {
  dist = (reference.rowwise() - q).rowwise().squaredNorm();
  std::iota(order.begin(), order.end(), Index{0});
  auto less = [&](Index a, Index b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), less);
  for (Index j = 0; j < k; ++j) out(out_row, j) = order[static_cast<std::size_t>(j)];
}

}  // namespace

template <typename Scalar>
NeighborIndex k_nearest(const RowMatrix<Scalar>& query, const RowMatrix<Scalar>& reference, Index k) {
  const Index n = reference.rows();
  if (k < 1 || k > n) throw std::invalid_argument("k_nearest: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  if (query.cols() != reference.cols()) throw std::invalid_argument("k_nearest: dimension mismatch");
  NeighborIndex out;
  out.neighbors.resize(query.rows(), k);
  std::vector<Index> order(static_cast<std::size_t>(n));
  Vector<Scalar> dist(n);
  for (Index i = 0; i < query.rows(); ++i) {
    nearest_row<Scalar>(reference, query.row(i), k, order, dist, out.neighbors, i);
  }
  return out;
}

template <typename Scalar>
NeighborIndex k_nearest_centers(const RowMatrix<Scalar>& reference, const std::vector<Index>& centers, Index k) {
  const Index n = reference.rows();
  if (k < 1 || k > n) throw std::invalid_argument("k_nearest: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  NeighborIndex out;
  out.centers = centers;
  out.neighbors.resize(static_cast<Index>(centers.size()), k);
  std::vector<Index> order(static_cast<std::size_t>(n));
  Vector<Scalar> dist(n);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (centers[i] < 0 || centers[i] >= n) throw std::invalid_argument("k_nearest: center index out of range");
    nearest_row<Scalar>(reference, reference.row(centers[i]), k, order, dist, out.neighbors, static_cast<Index>(i));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> group_relative(const RowMatrix<Scalar>& reference, const NeighborIndex& idx) {
  idx.validate(reference.rows());
  if (idx.centers.empty()) throw std::invalid_argument("group_relative: neighbor index has no centers");
  const Index d = reference.cols();
  Tensor<Scalar> out(Shape{idx.count(), idx.k(), d});
  auto m = out.matrix();
  for (Index c = 0; c < idx.count(); ++c) {
    for (Index j = 0; j < idx.k(); ++j) {
      m.row(c * idx.k() + j) = reference.row(idx.neighbors(c, j)) - reference.row(idx.centers[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> group_relative(const Var<Scalar>& reference, const NeighborIndex& idx) {
  idx.validate(reference.value().dim(0));
  if (idx.centers.empty()) throw std::invalid_argument("group_relative: neighbor index has no centers");
  const Index d = reference.value().cols();
  Var<Scalar> nb = gather(reference, idx.flat_neighbors());
  Var<Scalar> ct = gather(reference, idx.repeated_centers());
  return reshape(sub(nb, ct), Shape{idx.count(), idx.k(), d});
}

template <typename Scalar>
InterpolationWeights<Scalar> interpolation_weights(const RowMatrix<Scalar>& query_pos, const RowMatrix<Scalar>& center_pos,
                                                   const InterpConfig& cfg) {
  cfg.validate();
  const Index c = center_pos.rows();
  if (c < 1) throw std::invalid_argument("interpolate_features: no centers");
  if (query_pos.cols() != center_pos.cols()) throw std::invalid_argument("interpolate_features: position dimension mismatch");
  const Index k = std::min(cfg.k_interp, c);
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  const Scalar power = static_cast<Scalar>(cfg.power);
  InterpolationWeights<Scalar> w;
  w.neighbors = k_nearest<Scalar>(query_pos, center_pos, k).neighbors;
  const Index q = query_pos.rows();
  w.distances.resize(q, k);
  w.raw.resize(q, k);
  w.normalized.resize(q, k);
  for (Index i = 0; i < q; ++i) {
    for (Index j = 0; j < k; ++j) {
      const Scalar d = (query_pos.row(i) - center_pos.row(w.neighbors(i, j))).norm();
      w.distances(i, j) = d;
      w.raw(i, j) = power == Scalar(2) ? Scalar(1) / ((d + eps) * (d + eps)) : std::pow(d + eps, -power);
    }
    w.normalized.row(i) = w.raw.row(i) / w.raw.row(i).sum();
  }
  return w;
}

template <typename Scalar>
Tensor<Scalar> interpolate_features(const RowMatrix<Scalar>& query_pos, const RowMatrix<Scalar>& center_pos,
                                    const Tensor<Scalar>& center_feat, const InterpConfig& cfg) {
  if (center_feat.rows() != center_pos.rows()) {
    throw std::invalid_argument("interpolate_features: " + std::to_string(center_feat.rows()) + " feature rows for " +
                                std::to_string(center_pos.rows()) + " centers");
  }
  const auto w = interpolation_weights<Scalar>(query_pos, center_pos, cfg);
  Tensor<Scalar> out(Shape{query_pos.rows(), center_feat.cols()});
  auto f = center_feat.matrix();
  for (Index i = 0; i < query_pos.rows(); ++i) {
    for (Index j = 0; j < w.neighbors.cols(); ++j) out.matrix().row(i) += w.normalized(i, j) * f.row(w.neighbors(i, j));
  }
  return out;
}

template <typename Scalar>
Var<Scalar> interpolate_features(const Var<Scalar>& query_pos, const Var<Scalar>& center_pos, const Var<Scalar>& center_feat,
                                 const InterpConfig& cfg) {
  const auto qp = query_pos.value().matrix();
  const auto cp = center_pos.value().matrix();
  if (center_feat.value().rows() != cp.rows()) {
    throw std::invalid_argument("interpolate_features: " + std::to_string(center_feat.value().rows()) +
                                " feature rows for " + std::to_string(cp.rows()) + " centers");
  }
  RowMatrix<Scalar> qm = qp;
  RowMatrix<Scalar> cm = cp;
  auto w = interpolation_weights<Scalar>(qm, cm, cfg);
  query_pos.tape().note_selection(std::span<const Index>(w.neighbors.data(), static_cast<std::size_t>(w.neighbors.size())));

  const Index q = qm.rows();
  const Index k = w.neighbors.cols();
  const auto f = center_feat.value().matrix();
  Tensor<Scalar> out(Shape{q, f.cols()});
  for (Index i = 0; i < q; ++i) {
    for (Index j = 0; j < k; ++j) out.matrix().row(i) += w.normalized(i, j) * f.row(w.neighbors(i, j));
  }
  const int id = static_cast<int>(query_pos.tape().size());
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  const Scalar power = static_cast<Scalar>(cfg.power);
  return query_pos.tape().record(
      std::move(out), {query_pos, center_pos, center_feat},
      [query_pos, center_pos, center_feat, w = std::move(w), id, eps, power](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const auto gm = g.matrix();
        const auto outm = t.value(id).matrix();
        const auto f = center_feat.value().matrix();
        auto* gf = t.grad_buffer(center_feat);
        auto* gq = t.grad_buffer(query_pos);
        auto* gc = t.grad_buffer(center_pos);
        const auto qv = query_pos.value().matrix();
        const auto cv = center_pos.value().matrix();
        for (Index i = 0; i < gm.rows(); ++i) {
          const Scalar total = w.raw.row(i).sum();
          for (Index j = 0; j < w.neighbors.cols(); ++j) {
            const Index c = w.neighbors(i, j);
            if (gf) gf->matrix().row(c) += w.normalized(i, j) * gm.row(i);
            if (!gq && !gc) continue;
            const Scalar d = w.distances(i, j);
            if (d == Scalar(0)) continue;
            const Scalar dl_dw = gm.row(i).dot(f.row(c) - outm.row(i)) / total;
            const Scalar dw_dd = -power * w.raw(i, j) / (d + eps);
            const RowVector<Scalar> dir = (qv.row(i) - cv.row(c)) / d;
            if (gq) gq->matrix().row(i) += dl_dw * dw_dd * dir;
            if (gc) gc->matrix().row(c) -= dl_dw * dw_dd * dir;
          }
        }
      });
}

#define GEOPROMPT_INSTANTIATE_POINTOPS(S)                                                                          \
  template class PointCloud<S>;                                                                                   \
  template std::vector<Index> farthest_point_sample<S>(const RowMatrix<S>&, Index, std::uint64_t);                \
  template std::vector<Index> farthest_point_sample_from<S>(const RowMatrix<S>&, Index, Index);                   \
  template NeighborIndex k_nearest<S>(const RowMatrix<S>&, const RowMatrix<S>&, Index);                           \
  template NeighborIndex k_nearest_centers<S>(const RowMatrix<S>&, const std::vector<Index>&, Index);             \
  template Tensor<S> group_relative<S>(const RowMatrix<S>&, const NeighborIndex&);                                \
  template Var<S> group_relative<S>(const Var<S>&, const NeighborIndex&);                                         \
  template InterpolationWeights<S> interpolation_weights<S>(const RowMatrix<S>&, const RowMatrix<S>&,             \
                                                            const InterpConfig&);                                 \
  template Tensor<S> interpolate_features<S>(const RowMatrix<S>&, const RowMatrix<S>&, const Tensor<S>&,          \
                                             const InterpConfig&);                                                \
  template Var<S> interpolate_features<S>(const Var<S>&, const Var<S>&, const Var<S>&, const InterpConfig&);

GEOPROMPT_INSTANTIATE_POINTOPS(float)
GEOPROMPT_INSTANTIATE_POINTOPS(double)

}  // namespace geoprompt
