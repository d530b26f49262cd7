#pragma once

#include "geoprompt/autodiff.hpp"

#include <cstdint>
#include <vector>

namespace geoprompt {

/// N x 3 coordinates, N >= 1, all finite.
template <typename Scalar>
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(RowMatrix<Scalar> coords);

  Index size() const noexcept { return coords_.rows(); }
  const RowMatrix<Scalar>& coords() const noexcept { return coords_; }
  Tensor<Scalar> tensor() const { return Tensor<Scalar>::from_matrix(coords_); }

  template <typename Other>
  PointCloud<Other> cast() const {
    return PointCloud<Other>(coords_.template cast<Other>());
  }

 private:
  RowMatrix<Scalar> coords_;
};

/// Neighbor rows into a reference set. Row i lists the K nearest reference
/// points to query i, ascending by distance, ties by ascending index.
/// `centers` is filled when the queries are themselves reference rows.
struct NeighborIndex {
  std::vector<Index> centers;
  IndexMatrix neighbors;

  Index count() const noexcept { return neighbors.rows(); }
  Index k() const noexcept { return neighbors.cols(); }
  /// Throws std::invalid_argument when any index is outside [0, reference_size).
  void validate(Index reference_size) const;
  std::vector<Index> flat_neighbors() const;
  /// Each center repeated k times, aligned with flat_neighbors().
  std::vector<Index> repeated_centers() const;
};

struct InterpConfig {
  Index k_interp = 32;
  double power = 2.0;
  double epsilon = 1e-8;

  void validate() const;
};

/// Greedy max-min subset of `m` rows. The first row is drawn uniformly from
/// `seed`; ties go to the lowest index.
template <typename Scalar>
std::vector<Index> farthest_point_sample(const RowMatrix<Scalar>& positions, Index m, std::uint64_t seed);

/// Same as farthest_point_sample with an explicit first pick.
template <typename Scalar>
std::vector<Index> farthest_point_sample_from(const RowMatrix<Scalar>& positions, Index m, Index first);

template <typename Scalar>
NeighborIndex k_nearest(const RowMatrix<Scalar>& query, const RowMatrix<Scalar>& reference, Index k);

/// k_nearest where the queries are the reference rows listed in `centers`.
template <typename Scalar>
NeighborIndex k_nearest_centers(const RowMatrix<Scalar>& reference, const std::vector<Index>& centers, Index k);

/// C x K x d center-relative neighbor coordinates.
template <typename Scalar>
Tensor<Scalar> group_relative(const RowMatrix<Scalar>& reference, const NeighborIndex& idx);

/// Differentiable group_relative over a reference held on a tape.
template <typename Scalar>
Var<Scalar> group_relative(const Var<Scalar>& reference, const NeighborIndex& idx);

template <typename Scalar>
struct InterpolationWeights {
  IndexMatrix neighbors;         // Q x k_eff center indices, nearest first
  RowMatrix<Scalar> distances;   // Q x k_eff Euclidean distances
  RowMatrix<Scalar> raw;         // Q x k_eff, 1 / (d + eps)^p
  RowMatrix<Scalar> normalized;  // raw divided by its row sum
};

template <typename Scalar>
InterpolationWeights<Scalar> interpolation_weights(const RowMatrix<Scalar>& query_pos, const RowMatrix<Scalar>& center_pos,
                                                   const InterpConfig& cfg);

/// Inverse-distance-weighted feature propagation from centers to queries.
template <typename Scalar>
Tensor<Scalar> interpolate_features(const RowMatrix<Scalar>& query_pos, const RowMatrix<Scalar>& center_pos,
                                    const Tensor<Scalar>& center_feat, const InterpConfig& cfg);

/// Differentiable version; gradients flow to the center features and, through
/// the distances, to both position sets. The neighbor selection is constant.
template <typename Scalar>
Var<Scalar> interpolate_features(const Var<Scalar>& query_pos, const Var<Scalar>& center_pos,
                                 const Var<Scalar>& center_feat, const InterpConfig& cfg);

}  // namespace geoprompt
