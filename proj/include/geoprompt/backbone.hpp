#pragma once

#include "geoprompt/config.hpp"
#include "geoprompt/layers.hpp"
#include "geoprompt/pointops.hpp"

#include <vector>

namespace geoprompt {

/// Token rows for one cloud. Row 0 is the [CLS] readout when has_cls is set;
/// `centers` holds the patch centers of the remaining rows.
template <typename Scalar>
struct TokenSet {
  Var<Scalar> tokens;
  RowMatrix<Scalar> centers;
  bool has_cls = true;

  Index first_patch() const noexcept { return has_cls ? 1 : 0; }
  Index patch_count() const { return tokens.value().rows() - first_patch(); }
};

/// Patch embedding: FPS centers, KNN patches, a max-pooled mini-pointnet over
/// center-relative coordinates, an MLP positional code of the centers and a
/// learnable [CLS] row in front.
template <typename Scalar>
struct Tokenizer {
  Mlp<Scalar> embed;
  Mlp<Scalar> position;
  Parameter<Scalar>* cls = nullptr;

  static Tokenizer create(ParameterStore<Scalar>& store, const std::string& prefix, const BackboneConfig& cfg,
                          std::uint64_t seed);

  /// Throws std::invalid_argument when the cloud has fewer than n_patches points.
  TokenSet<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& cloud, Index n_patches, Index patch_size,
                              std::uint64_t seed, bool with_position = true) const;
};

template <typename Scalar>
struct Adapter {
  Linear<Scalar> down;
  Linear<Scalar> up;
};

template <typename Scalar>
struct BlockParams {
  LayerNorm<Scalar> norm1;
  LayerNorm<Scalar> norm2;
  Linear<Scalar> q, k, v;  // no bias
  Linear<Scalar> o;
  Mlp<Scalar> ffn;
  Index heads = 1;

  static BlockParams create(ParameterStore<Scalar>& store, const std::string& prefix, const BackboneConfig& cfg,
                            std::uint64_t seed);
};

template <typename Scalar>
struct AttentionResult {
  Var<Scalar> h;  // updated token rows
  Var<Scalar> p;  // updated prompt rows, invalid when no prompts were given
  /// Attention of row 0 over every key ([h; p] order), averaged over heads.
  std::vector<Scalar> row0_attention;
};

/// Pre-norm multi-head self-attention over [h; p] followed by a pre-norm
/// feed-forward, both residual. `p` may be an invalid Var for no prompts.
template <typename Scalar>
AttentionResult<Scalar> attention_block(Tape<Scalar>& t, const Var<Scalar>& h, const Var<Scalar>& p,
                                        const BlockParams<Scalar>& params);

/// h + up(gelu(down(h + beta * f))), f (1 x D) broadcast over rows. An invalid
/// f means no shape conditioning.
template <typename Scalar>
Var<Scalar> adapter_apply(Tape<Scalar>& t, const Var<Scalar>& h, const Var<Scalar>& f, Scalar beta,
                          const Adapter<Scalar>& params);

template <typename Scalar>
Adapter<Scalar> create_adapter(ParameterStore<Scalar>& store, const std::string& prefix, Index dim, Index bottleneck,
                               std::uint64_t seed, bool zero_up);

struct PromptAttentionSplit {
  RowMatrix<double> lhs;  // attention of h over [p; h]
  RowMatrix<double> rhs;  // sum_k A_ik (p_k W_V) + (1 - sum_k A_ik) o_i
  double max_abs_diff = 0.0;
};

/// Single-head check that prompting mixes the plain attention output with the
/// projected prompts. Scores are scaled by 1/sqrt(D).
PromptAttentionSplit decompose_prompt_attention(const RowMatrix<double>& h, const RowMatrix<double>& p,
                                                const RowMatrix<double>& wq, const RowMatrix<double>& wk,
                                                const RowMatrix<double>& wv);

}  // namespace geoprompt
