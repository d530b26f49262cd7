#pragma once

#include "geoprompt/config_json.hpp"
#include "geoprompt/data.hpp"
#include "geoprompt/prompt_core.hpp"

#include <functional>
#include <iosfwd>
#include <map>

namespace geoprompt {

/// Sets Parameter::frozen for a training mode. pretrain: nothing frozen.
/// adapt: every backbone.* tensor frozen. linear_probe: all but head.*.
template <typename Scalar>
void apply_freeze(ParameterStore<Scalar>& store, TrainMode mode);

/// Linear warmup from 0 to `lr` over `warmup` steps, then cosine decay to 0
/// at `total`. Steps past `total` stay at 0.
double lr_at(Index step, Index total, Index warmup, double lr);

/// Adam moments with decoupled weight decay. Frozen parameters are never
/// touched, moments included.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(ParameterStore<Scalar>& store, double lr);
  Index steps() const noexcept { return t_; }

 private:
  struct Moments {
    Tensor<Scalar> m, v;
  };
  TrainConfig cfg_;
  Index t_ = 0;
  std::map<std::string, Moments> state_;
};

struct MetricRecord {
  Index epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

Json to_json(const MetricRecord& r);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<Index> predictions;
};

struct TrainHistory {
  std::vector<MetricRecord> records;
  /// max |shifted - input| over each batch, in step order.
  std::vector<double> batch_max_shift;
  /// Largest coordinate change of the point prompt since the start of training.
  double prompt_drift = 0.0;
  /// Every epoch's bitwise comparison of frozen tensors against the start.
  bool frozen_intact = true;
};

/// Mean cross-entropy and accuracy. Sample i is run with forward seed
/// mix_seed(eval_seed, i), no augmentation.
template <typename Scalar>
EvalResult evaluate(const Model<Scalar>& model, const std::vector<ShapeSample>& samples, std::uint64_t eval_seed);

using RecordSink = std::function<void(const MetricRecord&)>;

/// Trains whatever is not frozen. Records the test split at epoch 0, then a
/// train and a test record per epoch. Throws std::runtime_error naming the
/// epoch and batch on a non-finite loss, and when a frozen tensor changes.
template <typename Scalar>
TrainHistory train(Model<Scalar>& model, const Dataset& data, const TrainConfig& cfg, std::uint64_t seed,
                   const RecordSink& sink = {});

struct ParameterBudget {
  Index trainable = 0;
  Index total = 0;
  double ratio = 0.0;
  /// Multiply-adds times two, matmul terms only, one forward pass.
  double flops = 0.0;
};

template <typename Scalar>
ParameterBudget count_trainable(const Model<Scalar>& model, Index points);

/// Matmul FLOPs of one forward pass on a cloud of `points` points.
double forward_flops(const ModelConfig& cfg, Index points);

}  // namespace geoprompt
