#include "geoprompt/shift_prompter.hpp"

#include <algorithm>

namespace geoprompt {

template <typename Scalar>
Var<Scalar> pointnet_embed(Tape<Scalar>& t, const Var<Scalar>& groups, Index k, const Mlp<Scalar>& mlp) {
  return max_reduce(mlp(t, groups), k);
}

template <typename Scalar>
ShiftPrompter<Scalar>::ShiftPrompter(const ShiftPrompterConfig& cfg, Index dim, ParameterStore<Scalar>& store,
                                     const std::string& prefix, std::uint64_t seed, bool zero_init)
    : cfg_(cfg), dim_(dim) {
  const Index k = cfg_.levels();
  const Index abs_cols = cfg_.absolute_channel ? 3 : 0;
  for (Index j = 0; j < k; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const Index in = 3 + abs_cols + (j > 0 ? cfg_.widths[ju - 1] : 0);
    embed_.push_back(Mlp<Scalar>::create(store, prefix + ".level" + std::to_string(j + 1), in, cfg_.widths[ju],
                                         cfg_.widths[ju], seed));
  }
  for (Index j = 0; j + 1 < k; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const Index in = cfg_.widths[ju + 1] + cfg_.widths[ju];
    refine_.push_back(Mlp<Scalar>::create(store, prefix + ".refine" + std::to_string(j + 1), in, cfg_.widths[ju],
                                          cfg_.widths[ju], seed));
  }
  const Index d1 = cfg_.widths.front();
  refine_points_ = Mlp<Scalar>::create(store, prefix + ".refine_points", d1 + 3, d1, d1, seed);
  head_ = Mlp<Scalar>::create(store, prefix + ".shift_head", 2 * d1, cfg_.head_hidden, 3, seed,
                              zero_init ? Init::zeros : Init::xavier);
}

template <typename Scalar>
InterpConfig ShiftPrompter<Scalar>::decode_interp(Index centers) const {
  InterpConfig c;
  c.k_interp = std::min(cfg_.decode_neighbors, centers);
  return c;
}

template <typename Scalar>
ShapeEncoding<Scalar> ShiftPrompter<Scalar>::encode(Tape<Scalar>& t, const RowMatrix<Scalar>& x,
                                                    std::uint64_t seed) const {
  if (x.rows() < cfg_.centers.front()) {
    throw std::invalid_argument("shift prompter: " + std::to_string(x.rows()) + " points but level 1 needs " +
                                std::to_string(cfg_.centers.front()) + " centers");
  }
  ShapeEncoding<Scalar> enc;
  enc.levels.reserve(static_cast<std::size_t>(cfg_.levels()));  // prev_pos points into it
  const RowMatrix<Scalar>* prev_pos = &x;
  Var<Scalar> prev_feat;
  for (Index j = 0; j < cfg_.levels(); ++j) {
    const auto ju = static_cast<std::size_t>(j);
    PrompterLevel<Scalar> level;
    const auto centers = farthest_point_sample<Scalar>(*prev_pos, cfg_.centers[ju], mix_seed(seed, ju));
    t.note_selection(centers);
    level.groups = k_nearest_centers<Scalar>(*prev_pos, centers, cfg_.neighbors[ju]);
    level.positions.resize(cfg_.centers[ju], 3);
    for (std::size_t c = 0; c < centers.size(); ++c) level.positions.row(static_cast<Index>(c)) = prev_pos->row(centers[c]);

    const Index ck = level.groups.count() * level.groups.k();
    std::vector<Var<Scalar>> parts;
    parts.push_back(t.constant(group_relative<Scalar>(*prev_pos, level.groups).reshaped(Shape{ck, 3})));
    const auto flat = level.groups.flat_neighbors();
    if (cfg_.absolute_channel) {
      Tensor<Scalar> absolute(Shape{ck, 3});
      for (Index r = 0; r < ck; ++r) absolute.matrix().row(r) = prev_pos->row(flat[static_cast<std::size_t>(r)]);
      parts.push_back(t.constant(std::move(absolute)));
    }
    if (j > 0) parts.push_back(gather(prev_feat, flat));
    level.features = pointnet_embed(t, concat(parts, -1), level.groups.k(), embed_[ju]);
    enc.levels.push_back(std::move(level));
    prev_pos = &enc.levels.back().positions;
    prev_feat = enc.levels.back().features;
  }
  enc.f = reshape(prev_feat, Shape{1, dim_});
  return enc;
}

template <typename Scalar>
Var<Scalar> ShiftPrompter<Scalar>::decode(Tape<Scalar>& t, const RowMatrix<Scalar>& x,
                                          const ShapeEncoding<Scalar>& enc) const {
  if (static_cast<Index>(enc.levels.size()) != cfg_.levels()) {
    throw std::invalid_argument("decode: encoding has " + std::to_string(enc.levels.size()) + " levels, expected " +
                                std::to_string(cfg_.levels()));
  }
  Var<Scalar> feat = enc.levels.back().features;
  for (Index j = cfg_.levels() - 2; j >= 0; --j) {
    const auto& lower = enc.levels[static_cast<std::size_t>(j)];
    const auto& upper = enc.levels[static_cast<std::size_t>(j + 1)];
    auto interp = interpolate_features(t.constant(Tensor<Scalar>::from_matrix(lower.positions)),
                                       t.constant(Tensor<Scalar>::from_matrix(upper.positions)), feat,
                                       decode_interp(upper.positions.rows()));
    feat = refine_[static_cast<std::size_t>(j)](t, concat({interp, lower.features}, -1));
  }
  const auto& first = enc.levels.front();
  Var<Scalar> xyz = t.constant(Tensor<Scalar>::from_matrix(x));
  auto interp = interpolate_features(xyz, t.constant(Tensor<Scalar>::from_matrix(first.positions)), feat,
                                     decode_interp(first.positions.rows()));
  return refine_points_(t, concat({interp, xyz}, -1));
}

template <typename Scalar>
Var<Scalar> ShiftPrompter<Scalar>::shift(Tape<Scalar>& t, const RowMatrix<Scalar>& x, const Var<Scalar>& per_point,
                                         const ShapeEncoding<Scalar>& enc) const {
  const auto& first = enc.levels.front();
  const auto nearest = k_nearest<Scalar>(x, first.positions, 1);
  const auto idx = nearest.flat_neighbors();
  t.note_selection(idx);
  auto aligned = gather(first.features, idx);
  auto delta = scale(tanh(head_(t, concat({per_point, aligned}, -1))), static_cast<Scalar>(cfg_.shift_scale));
  return add(t.constant(Tensor<Scalar>::from_matrix(x)), delta);
}

template <typename Scalar>
PrompterOutput<Scalar> ShiftPrompter<Scalar>::run(Tape<Scalar>& t, const RowMatrix<Scalar>& x,
                                                  std::uint64_t seed) const {
  PrompterOutput<Scalar> out;
  out.encoding = encode(t, x, seed);
  out.f = out.encoding.f;
  if (cfg_.shift_scale == 0) {
    out.shifted = t.constant(Tensor<Scalar>::from_matrix(x));
    return out;
  }
  out.shifted = shift(t, x, decode(t, x, out.encoding), out.encoding);
  out.max_shift = static_cast<double>((out.shifted.value().matrix() - x).cwiseAbs().maxCoeff());
  return out;
}

template <typename Scalar>
Var<Scalar> enhance_prompt_tokens(const Var<Scalar>& p_raw, const Var<Scalar>& f, Scalar beta) {
  if (f.value().size() != p_raw.value().cols()) {
    throw std::invalid_argument("enhance_prompt_tokens: prompt width " + std::to_string(p_raw.value().cols()) +
                                " vs shape feature " + shape_string(f.shape()));
  }
  return add(p_raw, scale(f, beta));
}

#define GEOPROMPT_INSTANTIATE_PROMPTER(S)                                                          \
  template Var<S> pointnet_embed<S>(Tape<S>&, const Var<S>&, Index, const Mlp<S>&);               \
  template class ShiftPrompter<S>;                                                                 \
  template Var<S> enhance_prompt_tokens<S>(const Var<S>&, const Var<S>&, S);

GEOPROMPT_INSTANTIATE_PROMPTER(float)
GEOPROMPT_INSTANTIATE_PROMPTER(double)

}  // namespace geoprompt
