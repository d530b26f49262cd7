#pragma once

#include "geoprompt/config.hpp"
#include "geoprompt/layers.hpp"
#include "geoprompt/pointops.hpp"

#include <vector>

namespace geoprompt {

/// Shared per-point MLP over (C*K) x F_in rows, max-pooled over each group
/// of K consecutive rows: C x F_out.
template <typename Scalar>
Var<Scalar> pointnet_embed(Tape<Scalar>& t, const Var<Scalar>& groups, Index k, const Mlp<Scalar>& mlp);

template <typename Scalar>
struct PrompterLevel {
  RowMatrix<Scalar> positions;  // C_j x 3
  NeighborIndex groups;         // centers index into the previous level (the raw cloud for level 1)
  Var<Scalar> features;         // C_j x D_j
};

template <typename Scalar>
struct ShapeEncoding {
  std::vector<PrompterLevel<Scalar>> levels;
  Var<Scalar> f;  // 1 x D
};

template <typename Scalar>
struct PrompterOutput {
  Var<Scalar> shifted;  // N x 3
  Var<Scalar> f;        // 1 x D
  ShapeEncoding<Scalar> encoding;
  /// max |shifted - x| over all coordinates.
  double max_shift = 0.0;
};

/// Hierarchical encoder producing a global shape feature and a bounded
/// per-point displacement of the input cloud.
template <typename Scalar>
class ShiftPrompter {
 public:
  ShiftPrompter() = default;
  ShiftPrompter(const ShiftPrompterConfig& cfg, Index dim, ParameterStore<Scalar>& store, const std::string& prefix,
                std::uint64_t seed, bool zero_init);

  const ShiftPrompterConfig& config() const noexcept { return cfg_; }

  /// Throws std::invalid_argument when x has fewer points than level 1 centers.
  ShapeEncoding<Scalar> encode(Tape<Scalar>& t, const RowMatrix<Scalar>& x, std::uint64_t seed) const;
  /// Per-point features (N x D_1) propagated back down from the top level.
  Var<Scalar> decode(Tape<Scalar>& t, const RowMatrix<Scalar>& x, const ShapeEncoding<Scalar>& enc) const;
  /// x + shift_scale * tanh(head([per_point; level-1 feature of the nearest level-1 center])).
  Var<Scalar> shift(Tape<Scalar>& t, const RowMatrix<Scalar>& x, const Var<Scalar>& per_point,
                    const ShapeEncoding<Scalar>& enc) const;
  PrompterOutput<Scalar> run(Tape<Scalar>& t, const RowMatrix<Scalar>& x, std::uint64_t seed) const;

  /// Interpolation settings used between levels with `centers` sources.
  InterpConfig decode_interp(Index centers) const;

 private:
  ShiftPrompterConfig cfg_;
  Index dim_ = 0;
  std::vector<Mlp<Scalar>> embed_;   // one per level
  std::vector<Mlp<Scalar>> refine_;  // level j+1 -> j, for j < k-1
  Mlp<Scalar> refine_points_;        // level 1 -> every input point
  Mlp<Scalar> head_;
};

/// p_raw + beta * f with f (1 x D) broadcast over the rows.
template <typename Scalar>
Var<Scalar> enhance_prompt_tokens(const Var<Scalar>& p_raw, const Var<Scalar>& f, Scalar beta);

}  // namespace geoprompt
