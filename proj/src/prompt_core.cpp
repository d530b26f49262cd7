#include "geoprompt/prompt_core.hpp"

#include <algorithm>
#include <random>

namespace geoprompt {

template <typename Scalar>
Tensor<Scalar> init_point_prompt(Index count, double range, PromptInit mode, std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("init_point_prompt: negative point count");
  if (!(range > 0)) throw std::invalid_argument("init_point_prompt: range must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-range, range);
  Tensor<Scalar> out(Shape{count, 3});
  if (mode == PromptInit::uniform) {
    for (Index i = 0; i < out.size(); ++i) out.values()[i] = static_cast<Scalar>(u(rng));
    return out;
  }
  const Index clusters = (count + 4) / 5;
  RowMatrix<double> means(clusters, 3);
  for (Index i = 0; i < means.size(); ++i) means.data()[i] = u(rng);
  std::normal_distribution<double> n(0.0, range / 4);
  for (Index i = 0; i < count; ++i)
    for (Index d = 0; d < 3; ++d)
      out.matrix()(i, d) = static_cast<Scalar>(std::clamp(means(i % clusters, d) + n(rng), -range, range));
  return out;
}

template <typename Scalar>
Var<Scalar> hybridize(const Var<Scalar>& shifted, const Var<Scalar>& prompt) {
  if (!prompt.valid() || prompt.value().rows() == 0) return shifted;
  return concat({shifted, prompt}, 0);
}

template <typename Scalar>
Injected<Scalar> inject(const Var<Scalar>& tokens, const NeighborIndex& idx, const Var<Scalar>& prompts,
                        InjectVariant variant) {
  const Index lt = tokens.value().rows();
  const Index lp = prompts.valid() ? prompts.value().rows() : 0;
  const Index c = idx.count();
  const Index k = idx.k();
  const Index d = tokens.value().cols();
  idx.validate(lt);
  if (c < lp) {
    throw std::invalid_argument("inject: " + std::to_string(c) + " centers cannot hold " + std::to_string(lp) +
                                " prompts");
  }
  if (lp > 0 && prompts.value().cols() != d) throw std::invalid_argument("inject: prompt width mismatch");

  // Both variants reduce to one gather from [tokens; prompts], where row
  // lt + j is prompt j.
  std::vector<Index> center_rows(static_cast<std::size_t>(c));
  std::vector<Index> neighbor_rows(static_cast<std::size_t>(c * k));
  if (variant == InjectVariant::replacement) {
    for (Index i = 0; i < c; ++i) {
      const bool replaced = i >= c - lp;
      center_rows[static_cast<std::size_t>(i)] = replaced ? lt + (i - (c - lp)) : idx.centers[static_cast<std::size_t>(i)];
      for (Index j = 0; j < k; ++j) {
        const bool last = replaced && j == k - 1;
        neighbor_rows[static_cast<std::size_t>(i * k + j)] = last ? lt + (i - (c - lp)) : idx.neighbors(i, j);
      }
    }
  } else {
    auto mixed = [&](Index m) { return m < lp ? lt + m : m - lp; };
    for (Index i = 0; i < c; ++i) {
      center_rows[static_cast<std::size_t>(i)] = mixed(idx.centers[static_cast<std::size_t>(i)]);
      for (Index j = 0; j < k; ++j) neighbor_rows[static_cast<std::size_t>(i * k + j)] = mixed(idx.neighbors(i, j));
    }
  }
  Var<Scalar> pool = lp > 0 ? concat({tokens, prompts}, 0) : tokens;
  Injected<Scalar> out;
  out.centers = gather(pool, std::move(center_rows));
  out.neighbors = reshape(gather(pool, std::move(neighbor_rows)), Shape{c, k, d});
  return out;
}

template <typename Scalar>
Var<Scalar> propagate_tokens(const Var<Scalar>& tokens, bool has_cls, const RowMatrix<Scalar>& centers3d,
                             const PropagationConfig& cfg, Index n_centers, const Var<Scalar>& prompts,
                             std::uint64_t seed) {
  Tape<Scalar>& t = tokens.tape();
  const Index first = has_cls ? 1 : 0;
  const Index lt = tokens.value().rows() - first;
  if (lt < n_centers) {
    throw std::invalid_argument("propagate_tokens: " + std::to_string(lt) + " tokens for " +
                                std::to_string(n_centers) + " centers");
  }
  Var<Scalar> body = has_cls ? slice_rows(tokens, 1, lt) : tokens;
  const bool feature_space = cfg.space == TokenSpace::feature;
  if (!feature_space && centers3d.rows() != lt) {
    throw std::invalid_argument("propagate_tokens: center coordinates do not align with tokens");
  }
  const RowMatrix<Scalar> positions = feature_space ? RowMatrix<Scalar>(body.value().matrix()) : centers3d;

  const auto centers = farthest_point_sample<Scalar>(positions, n_centers, seed);
  t.note_selection(centers);
  const auto idx = k_nearest_centers<Scalar>(positions, centers, std::min(cfg.neighbors, lt));
  t.note_selection(idx.flat_neighbors());
  const auto injected = inject(body, idx, prompts, cfg.variant);

  Var<Scalar> query, center_pos;
  if (feature_space) {
    query = body;
    center_pos = gather(body, centers);
  } else {
    query = t.constant(Tensor<Scalar>::from_matrix(positions));
    RowMatrix<Scalar> cp(n_centers, 3);
    for (Index i = 0; i < n_centers; ++i) cp.row(i) = positions.row(centers[static_cast<std::size_t>(i)]);
    center_pos = t.constant(Tensor<Scalar>::from_matrix(cp));
  }
  Var<Scalar> spread = interpolate_features(query, center_pos, injected.centers, cfg.interp);
  Var<Scalar> out = cfg.residual ? add(body, spread) : spread;
  return has_cls ? concat({slice_rows(tokens, 0, 1), out}, 0) : out;
}

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const auto& bb = cfg_.backbone;
  tokenizer_ = Tokenizer<Scalar>::create(store_, "backbone.tokenizer", bb, seed);
  for (Index i = 0; i < bb.depth; ++i) {
    blocks_.push_back(BlockParams<Scalar>::create(store_, "backbone.block" + std::to_string(i), bb, seed));
  }
  norm_ = LayerNorm<Scalar>::create(store_, "backbone.norm", bb.dim);

  if (cfg_.prompter.enabled) prompter_.emplace(cfg_.prompter, bb.dim, store_, "peft.prompter", seed, cfg_.zero_init);
  if (cfg_.point_prompt.count > 0) {
    point_prompt_ = &store_.add("peft.point_prompt",
                                init_point_prompt<Scalar>(cfg_.point_prompt.count, cfg_.point_prompt.range,
                                                          cfg_.point_prompt.init, name_seed(seed, "peft.point_prompt")));
  }
  for (Index i = 0; i < bb.depth; ++i) {
    const std::string prefix = "peft.block" + std::to_string(i);
    if (cfg_.prompt_tokens.count > 0) {
      const std::string name = prefix + ".prompt";
      const double bound = std::sqrt(6.0 / static_cast<double>(cfg_.prompt_tokens.count + bb.dim));
      prompts_.push_back(
          &store_.add(name, uniform_tensor<Scalar>(Shape{cfg_.prompt_tokens.count, bb.dim}, bound, name_seed(seed, name))));
    }
    if (cfg_.adapter.enabled) {
      adapters_.push_back(
          create_adapter<Scalar>(store_, prefix + ".adapter", bb.dim, cfg_.adapter_bottleneck(), seed, cfg_.zero_init));
    }
  }
  const Index head_in = bb.dim * static_cast<Index>(cfg_.head.inputs.size());
  head_ = Classifier<Scalar>::create(store_, "head", head_in, cfg_.head.hidden, cfg_.num_classes, seed);
}

template <typename Scalar>
ForwardResult<Scalar> Model<Scalar>::forward(Tape<Scalar>& t, const RowMatrix<Scalar>& x, std::uint64_t seed) const {
  ForwardResult<Scalar> r;
  if (prompter_) {
    auto pr = prompter_->run(t, x, mix_seed(seed, 1));
    r.shifted = pr.shifted;
    r.f = pr.f;
    r.max_shift = pr.max_shift;
  } else {
    r.shifted = t.constant(Tensor<Scalar>::from_matrix(x));
  }
  r.hybrid = point_prompt_ ? hybridize(r.shifted, t.parameter(*point_prompt_)) : r.shifted;

  const auto& bb = cfg_.backbone;
  TokenSet<Scalar> ts = tokenizer_(t, r.hybrid, bb.n_patches, bb.patch_size, mix_seed(seed, 2));
  Var<Scalar> h = ts.tokens;
  Var<Scalar> p_hat;
  const Scalar beta_p = static_cast<Scalar>(cfg_.prompter.beta_p);
  const Scalar beta_a = static_cast<Scalar>(cfg_.prompter.beta_a);
  const Index lp = cfg_.prompt_tokens.count;
  for (Index i = 0; i < bb.depth; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    Var<Scalar> p;
    if (lp > 0) {
      p = t.parameter(*prompts_[iu]);
      if (r.f.valid()) p = enhance_prompt_tokens(p, r.f, beta_p);
    }
    // Without prompt tokens there is nothing to inject, so propagation is skipped.
    const bool propagate = lp > 0 && cfg_.propagation.active_in(i);
    const std::uint64_t block_seed = mix_seed(seed, 100 + static_cast<std::uint64_t>(i));
    auto spread = [&](const Var<Scalar>& tokens) {
      return propagate_tokens(tokens, ts.has_cls, ts.centers, cfg_.propagation, cfg_.propagation_centers(), p,
                              block_seed);
    };
    if (propagate && cfg_.propagation.placement == InjectPlacement::before_attn) h = spread(h);
    auto attn = attention_block(t, h, p, blocks_[iu]);
    r.cls_attention.push_back(std::move(attn.row0_attention));
    h = attn.h;
    p_hat = attn.p;
    if (propagate && cfg_.propagation.placement == InjectPlacement::after_attn) h = spread(h);
    if (cfg_.adapter.enabled) h = adapter_apply(t, h, r.f, beta_a, adapters_[iu]);
  }

  Var<Scalar> hn = norm_(t, h);
  std::vector<Var<Scalar>> feats;
  for (HeadInput in : cfg_.head.inputs) {
    switch (in) {
      case HeadInput::cls:
        feats.push_back(slice_rows(hn, 0, 1));
        break;
      case HeadInput::max_patch:
        feats.push_back(max_reduce(slice_rows(hn, 1, ts.patch_count()), ts.patch_count()));
        break;
      case HeadInput::max_prompt:
        feats.push_back(max_reduce(norm_(t, p_hat), lp));
        break;
      case HeadInput::shape_feature:
        feats.push_back(r.f);
        break;
    }
  }
  r.logits = head_(t, feats.size() == 1 ? feats.front() : concat(feats, -1));
  return r;
}

#define GEOPROMPT_INSTANTIATE_PROMPT_CORE(S)                                                                   \
  template Tensor<S> init_point_prompt<S>(Index, double, PromptInit, std::uint64_t);                           \
  template Var<S> hybridize<S>(const Var<S>&, const Var<S>&);                                                  \
  template Injected<S> inject<S>(const Var<S>&, const NeighborIndex&, const Var<S>&, InjectVariant);           \
  template Var<S> propagate_tokens<S>(const Var<S>&, bool, const RowMatrix<S>&, const PropagationConfig&, Index, \
                                      const Var<S>&, std::uint64_t);                                           \
  template class Model<S>;

GEOPROMPT_INSTANTIATE_PROMPT_CORE(float)
GEOPROMPT_INSTANTIATE_PROMPT_CORE(double)

}  // namespace geoprompt
