#include "geoprompt/trainer.hpp"

#include "geoprompt/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <random>

namespace geoprompt {

namespace {

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

template <typename Scalar>
Index argmax_row(const Tensor<Scalar>& logits) {
  Index best = 0;
  for (Index c = 1; c < logits.size(); ++c)
    if (logits.values()[c] > logits.values()[best]) best = c;
  return best;
}

template <typename Scalar>
std::vector<std::pair<const Parameter<Scalar>*, Tensor<Scalar>>> snapshot_frozen(const ParameterStore<Scalar>& store) {
  std::vector<std::pair<const Parameter<Scalar>*, Tensor<Scalar>>> out;
  store.for_each([&](const Parameter<Scalar>& p) {
    if (p.frozen) out.emplace_back(&p, p.value);
  });
  return out;
}

template <typename Scalar>
bool bitwise_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(Scalar)) == 0);
}

// Random per-axis scale and translation.
template <typename Scalar>
RowMatrix<Scalar> augment(const RowMatrix<Scalar>& x, const TrainConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> scale(cfg.scale_low, cfg.scale_high);
  std::uniform_real_distribution<double> shift(-cfg.translate, cfg.translate);
  RowVector<Scalar> s(3), t(3);
  for (int d = 0; d < 3; ++d) s(d) = static_cast<Scalar>(scale(rng));
  for (int d = 0; d < 3; ++d) t(d) = static_cast<Scalar>(shift(rng));
  RowMatrix<Scalar> out = x.array().rowwise() * s.array();
  out.rowwise() += t;
  return out;
}

double mlp_flops(double rows, double in, double hidden, double out) { return 2 * rows * (in * hidden + hidden * out); }

}  // namespace

template <typename Scalar>
void apply_freeze(ParameterStore<Scalar>& store, TrainMode mode) {
  store.for_each([&](Parameter<Scalar>& p) {
    switch (mode) {
      case TrainMode::pretrain:
        p.frozen = false;
        break;
      case TrainMode::adapt:
        p.frozen = starts_with(p.name, "backbone.");
        break;
      case TrainMode::linear_probe:
        p.frozen = !starts_with(p.name, "head.");
        break;
    }
  });
}

double lr_at(Index step, Index total, Index warmup, double lr) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (step >= total) return 0.0;
  if (step < warmup) return lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename Scalar>
void AdamW<Scalar>::step(ParameterStore<Scalar>& store, double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  store.for_each([&](Parameter<Scalar>& p) {
    if (p.frozen) return;
    auto& s = state_[p.name];
    if (s.m.shape() != p.value.shape()) {
      s.m = Tensor<Scalar>(p.value.shape());
      s.v = Tensor<Scalar>(p.value.shape());
    }
    auto& w = p.value.values();
    const auto& g = p.grad.values();
    auto& m = s.m.values();
    auto& v = s.v.values();
    for (Index i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<Scalar>(b1 * m[i] + (1 - b1) * gi);
      v[i] = static_cast<Scalar>(b2 * v[i] + (1 - b2) * gi * gi);
      double wi = w[i];
      wi -= lr * cfg_.weight_decay * wi;
      wi -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      w[i] = static_cast<Scalar>(wi);
    }
  });
}

Json to_json(const MetricRecord& r) {
  return Json{{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}, {"accuracy", r.accuracy}};
}

template <typename Scalar>
EvalResult evaluate(const Model<Scalar>& model, const std::vector<ShapeSample>& samples, std::uint64_t eval_seed) {
  EvalResult r;
  if (samples.empty()) return r;
  Index correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tape<Scalar> t;
    const RowMatrix<Scalar> x = samples[i].cloud.coords().template cast<Scalar>();
    auto out = model.forward(t, x, mix_seed(eval_seed, i));
    loss += static_cast<double>(cross_entropy(out.logits, {samples[i].label}).value().item());
    const Index pred = argmax_row(out.logits.value());
    r.predictions.push_back(pred);
    correct += pred == samples[i].label;
  }
  r.loss = loss / static_cast<double>(samples.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return r;
}

template <typename Scalar>
TrainHistory train(Model<Scalar>& model, const Dataset& data, const TrainConfig& cfg, std::uint64_t seed,
                   const RecordSink& sink) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train: empty training split");
  TrainHistory h;
  auto emit = [&](MetricRecord rec) {
    if (sink) sink(rec);
    h.records.push_back(std::move(rec));
  };
  {
    const auto e = evaluate(model, data.test, cfg.eval_seed);
    emit({0, "test", e.loss, e.accuracy});
  }
  if (cfg.epochs == 0) return h;

  auto& store = model.parameters();
  const auto frozen = snapshot_frozen(store);
  const Tensor<Scalar> prompt_start = model.point_prompt() ? model.point_prompt()->value : Tensor<Scalar>();
  AdamW<Scalar> opt(cfg);

  const auto n = static_cast<Index>(data.train.size());
  const Index per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const Index total = per_epoch * cfg.epochs;
  const Index warmup = per_epoch * cfg.warmup_epochs;
  std::vector<Index> order(static_cast<std::size_t>(n));

  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(seed, static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 shuffler(epoch_seed);
    std::shuffle(order.begin(), order.end(), shuffler);

    double epoch_loss = 0.0;
    Index correct = 0;
    for (Index b = 0; b < per_epoch; ++b) {
      const Index begin = b * cfg.batch_size;
      const Index end = std::min(n, begin + cfg.batch_size);
      const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(end - begin));
      store.zero_grad();
      double batch_loss = 0.0;
      double batch_shift = 0.0;
      for (Index i = begin; i < end; ++i) {
        const auto& sample = data.train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        const std::uint64_t sample_seed = mix_seed(epoch_seed, static_cast<std::uint64_t>(i));
        RowMatrix<Scalar> x = sample.cloud.coords().template cast<Scalar>();
        if (cfg.augment) x = augment(x, cfg, mix_seed(sample_seed, 1));
        Tape<Scalar> t;
        auto out = model.forward(t, x, mix_seed(sample_seed, 2));
        Var<Scalar> loss = cross_entropy(out.logits, {sample.label});
        const double lv = static_cast<double>(loss.value().item());
        if (!std::isfinite(lv)) {
          throw std::runtime_error("non-finite loss in epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                                   " (sample seed " + std::to_string(sample.seed) + ")");
        }
        t.backward(scale(loss, inv));
        t.accumulate_parameter_grads();
        batch_loss += lv;
        batch_shift = std::max(batch_shift, out.max_shift);
        correct += argmax_row(out.logits.value()) == sample.label;
      }
      h.batch_max_shift.push_back(batch_shift);
      epoch_loss += batch_loss;
      // Update s uses the rate at s + 1, so the first update is not wasted at 0.
      const Index step = (epoch - 1) * per_epoch + b;
      opt.step(store, lr_at(step + 1, total + 1, warmup, cfg.lr));
    }

    for (const auto& [p, value] : frozen) {
      if (!bitwise_equal(p->value, value)) {
        h.frozen_intact = false;
        throw std::runtime_error("frozen parameter " + p->name + " changed during epoch " + std::to_string(epoch));
      }
    }
    emit({epoch, "train", epoch_loss / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)});
    const auto e = evaluate(model, data.test, cfg.eval_seed);
    emit({epoch, "test", e.loss, e.accuracy});
  }
  if (model.point_prompt() && prompt_start.size() > 0) {
    h.prompt_drift =
        static_cast<double>((model.point_prompt()->value.values() - prompt_start.values()).cwiseAbs().maxCoeff());
  }
  return h;
}

double forward_flops(const ModelConfig& cfg, Index points) {
  const auto& bb = cfg.backbone;
  const double d = static_cast<double>(bb.dim);
  double f = 0.0;
  if (cfg.prompter.enabled) {
    const auto& pc = cfg.prompter;
    for (Index j = 0; j < pc.levels(); ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const double rows = static_cast<double>(pc.centers[ju] * pc.neighbors[ju]);
      const double in = 3.0 + (pc.absolute_channel ? 3.0 : 0.0) + (j > 0 ? static_cast<double>(pc.widths[ju - 1]) : 0.0);
      f += mlp_flops(rows, in, static_cast<double>(pc.widths[ju]), static_cast<double>(pc.widths[ju]));
      if (j + 1 < pc.levels()) {
        f += mlp_flops(static_cast<double>(pc.centers[ju]), static_cast<double>(pc.widths[ju + 1] + pc.widths[ju]),
                       static_cast<double>(pc.widths[ju]), static_cast<double>(pc.widths[ju]));
      }
    }
    const double d1 = static_cast<double>(pc.widths.front());
    const double n = static_cast<double>(points);
    f += mlp_flops(n, d1 + 3, d1, d1);
    f += mlp_flops(n, 2 * d1, static_cast<double>(pc.head_hidden), 3);
  }
  const double patches = static_cast<double>(bb.n_patches);
  f += mlp_flops(patches * static_cast<double>(bb.patch_size), 3, static_cast<double>(bb.embed_hidden), d);
  f += mlp_flops(patches, 3, static_cast<double>(bb.pos_hidden), d);

  const double tokens = patches + 1;
  const double rows = tokens + static_cast<double>(cfg.prompt_tokens.count);
  for (Index i = 0; i < bb.depth; ++i) {
    f += 2 * rows * d * d * 4;                                       // q, k, v, o
    f += 2 * rows * rows * d * 2;                                    // scores and weighted values
    f += mlp_flops(rows, d, d * static_cast<double>(bb.mlp_ratio), d);  // FFN
    if (cfg.adapter.enabled) f += 2 * tokens * d * static_cast<double>(cfg.adapter_bottleneck()) * 2;
  }
  const double head_in = d * static_cast<double>(cfg.head.inputs.size());
  const double classes = static_cast<double>(cfg.num_classes);
  f += cfg.head.hidden > 0 ? mlp_flops(1, head_in, static_cast<double>(cfg.head.hidden), classes)
                           : 2 * head_in * classes;
  return f;
}

template <typename Scalar>
ParameterBudget count_trainable(const Model<Scalar>& model, Index points) {
  ParameterBudget b;
  model.parameters().for_each([&](const Parameter<Scalar>& p) {
    b.total += p.value.size();
    if (!p.frozen) b.trainable += p.value.size();
  });
  b.ratio = b.total > 0 ? static_cast<double>(b.trainable) / static_cast<double>(b.total) : 0.0;
  b.flops = forward_flops(model.config(), points);
  return b;
}

#define GEOPROMPT_INSTANTIATE_TRAINER(S)                                                                    \
  template void apply_freeze<S>(ParameterStore<S>&, TrainMode);                                             \
  template class AdamW<S>;                                                                                  \
  template EvalResult evaluate<S>(const Model<S>&, const std::vector<ShapeSample>&, std::uint64_t);         \
  template TrainHistory train<S>(Model<S>&, const Dataset&, const TrainConfig&, std::uint64_t,              \
                                 const RecordSink&);                                                        \
  template ParameterBudget count_trainable<S>(const Model<S>&, Index);

GEOPROMPT_INSTANTIATE_TRAINER(float)
GEOPROMPT_INSTANTIATE_TRAINER(double)

}  // namespace geoprompt
