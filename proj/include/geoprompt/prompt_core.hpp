#pragma once

#include "geoprompt/backbone.hpp"
#include "geoprompt/config.hpp"
#include "geoprompt/shift_prompter.hpp"

#include <optional>
#include <vector>

namespace geoprompt {

/// P x 3 learnable points. Uniform: i.i.d. U(-r, r) per coordinate. Cluster:
/// point i drawn around mean (i mod ceil(P/5)), means U(-r, r)^3, sigma r/4,
/// clamped to [-r, r]. Throws std::invalid_argument for r <= 0 or P < 0.
template <typename Scalar>
Tensor<Scalar> init_point_prompt(Index count, double range, PromptInit mode, std::uint64_t seed);

/// [shifted; prompt] with the prompt rows last.
template <typename Scalar>
Var<Scalar> hybridize(const Var<Scalar>& shifted, const Var<Scalar>& prompt);

template <typename Scalar>
struct Injected {
  Var<Scalar> centers;    // C x D
  Var<Scalar> neighbors;  // C x K x D
};

/// Center and neighbor token features with prompts injected.
/// Replacement: the last L_p center rows, and the final neighbor row of each
/// of the last L_p groups, become the prompts. Permutation: the prompts are
/// put in front of the tokens, the last L_p tokens dropped, and the mixed
/// list indexed by the same centers and neighbors.
/// Throws std::invalid_argument when there are fewer centers than prompts.
template <typename Scalar>
Injected<Scalar> inject(const Var<Scalar>& tokens, const NeighborIndex& idx, const Var<Scalar>& prompts,
                        InjectVariant variant);

/// Token-space FPS/KNN, prompt injection, then inverse-distance propagation
/// from the injected centers back to every non-CLS token. The CLS row passes
/// through unchanged. `centers3d` is used when the config picks that space.
template <typename Scalar>
Var<Scalar> propagate_tokens(const Var<Scalar>& tokens, bool has_cls, const RowMatrix<Scalar>& centers3d,
                             const PropagationConfig& cfg, Index n_centers, const Var<Scalar>& prompts,
                             std::uint64_t seed);

template <typename Scalar>
struct ForwardResult {
  Var<Scalar> logits;   // 1 x classes
  Var<Scalar> f;        // 1 x D, invalid without the prompter
  Var<Scalar> shifted;  // N x 3
  Var<Scalar> hybrid;   // (N + P) x 3
  double max_shift = 0.0;
  /// Per block, attention of the CLS query over [tokens; prompts].
  std::vector<std::vector<Scalar>> cls_attention;
};

/// Frozen point transformer plus every prompt component the config enables.
/// Parameters are named backbone.*, peft.* and head.*.
template <typename Scalar>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore<Scalar>& parameters() noexcept { return store_; }
  const ParameterStore<Scalar>& parameters() const noexcept { return store_; }
  Parameter<Scalar>* point_prompt() const noexcept { return point_prompt_; }
  const std::optional<ShiftPrompter<Scalar>>& prompter() const noexcept { return prompter_; }

  /// Full prompted pipeline for one cloud; all sampling is keyed by `seed`.
  ForwardResult<Scalar> forward(Tape<Scalar>& t, const RowMatrix<Scalar>& x, std::uint64_t seed) const;

 private:
  ModelConfig cfg_;
  ParameterStore<Scalar> store_;
  Tokenizer<Scalar> tokenizer_;
  std::vector<BlockParams<Scalar>> blocks_;
  LayerNorm<Scalar> norm_;
  std::optional<ShiftPrompter<Scalar>> prompter_;
  Parameter<Scalar>* point_prompt_ = nullptr;
  std::vector<Parameter<Scalar>*> prompts_;
  std::vector<Adapter<Scalar>> adapters_;
  Classifier<Scalar> head_;
};

}  // namespace geoprompt
