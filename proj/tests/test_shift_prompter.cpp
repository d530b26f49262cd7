#include "geoprompt/shift_prompter.hpp"

#include "geoprompt/gradcheck.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <limits>
#include <random>

using namespace geoprompt;
namespace tu = geoprompt::testing;

namespace {

ShiftPrompterConfig small_config() {
  ShiftPrompterConfig c;
  c.centers = {8, 3};
  c.neighbors = {4, 3};
  c.widths = {12, 8};  // 3 x 8 = 24 = dim
  c.head_hidden = 10;
  c.shift_scale = 0.1;
  return c;
}

constexpr Index kDim = 24;

struct Fixture {
  ParameterStore<double> store;
  ShiftPrompter<double> prompter;

  explicit Fixture(const ShiftPrompterConfig& cfg, bool zero_init = false, std::uint64_t seed = 5)
      : prompter(cfg, kDim, store, "peft.prompter", seed, zero_init) {}
};

RowMatrix<double> permute_rows(const RowMatrix<double>& x, const std::vector<Index>& perm) {
  RowMatrix<double> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

// A permutation of [0, n) that keeps `fixed` in place.
std::vector<Index> permutation_fixing(Index n, Index fixed, std::mt19937_64& rng) {
  std::vector<Index> rest;
  for (Index i = 0; i < n; ++i)
    if (i != fixed) rest.push_back(i);
  std::shuffle(rest.begin(), rest.end(), rng);
  std::vector<Index> perm;
  for (Index i = 0, r = 0; i < n; ++i) perm.push_back(i == fixed ? fixed : rest[static_cast<std::size_t>(r++)]);
  return perm;
}

}  // namespace

TEST(ShiftPrompter, ShapeFeatureHasModelWidth) {
  Fixture fx(small_config());
  std::mt19937_64 rng(1);
  Tape<double> t;
  const auto out = fx.prompter.run(t, tu::random_points(40, 3, rng), 3);
  EXPECT_EQ(out.f.shape(), (Shape{1, kDim}));
  EXPECT_EQ(out.shifted.shape(), (Shape{40, 3}));
  ASSERT_EQ(out.encoding.levels.size(), 2u);
  EXPECT_EQ(out.encoding.levels[0].positions.rows(), 8);
  EXPECT_EQ(out.encoding.levels[1].features.shape(), (Shape{3, 8}));
}

TEST(ShiftPrompter, TooFewPointsThrows) {
  Fixture fx(small_config());
  std::mt19937_64 rng(1);
  Tape<double> t;
  EXPECT_THROW(fx.prompter.run(t, tu::random_points(7, 3, rng), 0), std::invalid_argument);
}

TEST(ShiftPrompter, ShiftNeverExceedsScale) {
  for (double s : {0.01, 0.1, 2.0}) {
    ShiftPrompterConfig cfg = small_config();
    cfg.shift_scale = s;
    Fixture fx(cfg, false, 11);
    // Blow up the head so tanh saturates somewhere.
    fx.store.at("peft.prompter.shift_head.fc2.w").value.values() *= 50.0;
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 30; ++trial) {
      const RowMatrix<double> x = tu::random_points(32, 3, rng, -3, 3);
      Tape<double> t;
      const auto out = fx.prompter.run(t, x, static_cast<std::uint64_t>(trial));
      const double m = (out.shifted.value().matrix() - x).cwiseAbs().maxCoeff();
      // The displacement is bounded exactly; measuring it back through x + d - x
      // adds up to two roundings at the magnitude of x.
      const double rounding = 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, x.cwiseAbs().maxCoeff());
      EXPECT_LE(m, s + rounding) << "scale " << s;
      EXPECT_EQ(out.max_shift, m);
    }
  }
}

TEST(ShiftPrompter, ZeroInitAndZeroScaleLeaveCloudUnchanged) {
  std::mt19937_64 rng(3);
  const RowMatrix<double> x = tu::random_points(20, 3, rng);
  {
    Fixture fx(small_config(), true);
    Tape<double> t;
    const auto out = fx.prompter.run(t, x, 1);
    EXPECT_EQ(out.shifted.value().matrix(), x);
    EXPECT_EQ(out.max_shift, 0.0);
  }
  {
    ShiftPrompterConfig cfg = small_config();
    cfg.shift_scale = 0;
    Fixture fx(cfg, false);
    Tape<double> t;
    const auto out = fx.prompter.run(t, x, 1);
    EXPECT_EQ(out.shifted.value().matrix(), x);
    EXPECT_TRUE(out.f.valid());
  }
}

TEST(ShiftPrompter, PermutationInvariantFeatureAndEquivariantShift) {
  Fixture fx(small_config());
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const RowMatrix<double> x = tu::random_points(30, 3, rng);
    const std::uint64_t seed = 100 + static_cast<std::uint64_t>(trial);
    // Keep the seeded first sample on the same point so both runs pick the same centers.
    const Index first = farthest_point_sample<double>(x, 1, mix_seed(seed, 0)).front();
    const auto perm = permutation_fixing(30, first, rng);
    const RowMatrix<double> xp = permute_rows(x, perm);
    Tape<double> t1, t2;
    const auto a = fx.prompter.run(t1, x, seed);
    const auto b = fx.prompter.run(t2, xp, seed);
    EXPECT_LE((a.f.value().matrix() - b.f.value().matrix()).cwiseAbs().maxCoeff(), 1e-12);
    const RowMatrix<double> sa = permute_rows(a.shifted.value().matrix(), perm);
    EXPECT_LE((sa - b.shifted.value().matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ShiftPrompter, TranslationInvariantWithoutAbsoluteChannel) {
  ShiftPrompterConfig cfg = small_config();
  cfg.absolute_channel = false;
  Fixture fx(cfg);
  std::mt19937_64 rng(6);
  const RowMatrix<double> x = tu::random_points(30, 3, rng);
  RowMatrix<double> moved = x;
  moved.rowwise() += RowVector<double>::Constant(3, 0.75);
  Tape<double> t1, t2;
  const auto a = fx.prompter.run(t1, x, 9);
  const auto b = fx.prompter.run(t2, moved, 9);
  EXPECT_LE((a.f.value().matrix() - b.f.value().matrix()).cwiseAbs().maxCoeff(), 1e-9);

  // The decoder sees raw xyz, so only the encoder is translation invariant.
  cfg.absolute_channel = true;
  Fixture fy(cfg);
  Tape<double> t3, t4;
  const auto c = fy.prompter.run(t3, x, 9);
  const auto d = fy.prompter.run(t4, moved, 9);
  EXPECT_GT((c.f.value().matrix() - d.f.value().matrix()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ShiftPrompter, DecodeMatchesOracleOnSixteenPoints) {
  ShiftPrompterConfig cfg = small_config();
  cfg.centers = {6, 3};
  cfg.neighbors = {4, 2};
  Fixture fx(cfg);
  std::mt19937_64 rng(7);
  const RowMatrix<double> x = tu::random_points(16, 3, rng);
  Tape<double> t;
  const auto enc = fx.prompter.encode(t, x, 2);
  const RowMatrix<double> got = fx.prompter.decode(t, x, enc).value().matrix();

  const auto& l1 = enc.levels[0];
  const auto& l2 = enc.levels[1];
  // Level 2 -> level 1, then level 1 -> points, each followed by its refinement MLP.
  RowMatrix<double> up = oracle::idw(l1.positions, l2.positions, l2.features.value().matrix(), 3);
  RowMatrix<double> cat1(l1.positions.rows(), up.cols() + l1.features.value().cols());
  cat1 << up, l1.features.value().matrix();
  const RowMatrix<double> f1 = oracle::mlp(fx.store, "peft.prompter.refine1", cat1);
  const RowMatrix<double> per_point = oracle::idw(x, l1.positions, f1, 3);
  RowMatrix<double> cat0(16, per_point.cols() + 3);
  cat0 << per_point, x;
  const RowMatrix<double> want = oracle::mlp(fx.store, "peft.prompter.refine_points", cat0);
  ASSERT_EQ(got.rows(), 16);
  EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ShiftPrompter, ShiftUsesNearestLevelOneCenter) {
  Fixture fx(small_config());
  std::mt19937_64 rng(8);
  const RowMatrix<double> x = tu::random_points(24, 3, rng);
  Tape<double> t;
  const auto out = fx.prompter.run(t, x, 4);
  const auto& l1 = out.encoding.levels[0];
  const RowMatrix<double> per_point = fx.prompter.decode(t, x, out.encoding).value().matrix();
  RowMatrix<double> aligned(24, l1.features.value().cols());
  for (Index i = 0; i < 24; ++i) {
    Index best = 0;
    for (Index c = 1; c < l1.positions.rows(); ++c)
      if ((x.row(i) - l1.positions.row(c)).squaredNorm() < (x.row(i) - l1.positions.row(best)).squaredNorm()) best = c;
    aligned.row(i) = l1.features.value().matrix().row(best);
  }
  RowMatrix<double> cat(24, per_point.cols() + aligned.cols());
  cat << per_point, aligned;
  const RowMatrix<double> delta = 0.1 * oracle::mlp(fx.store, "peft.prompter.shift_head", cat).array().tanh().matrix();
  EXPECT_LE((out.shifted.value().matrix() - (x + delta)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ShiftPrompter, EveryParameterReceivesGradient) {
  Fixture fx(small_config());
  std::mt19937_64 rng(9);
  const RowMatrix<double> x = tu::random_points(30, 3, rng);
  Tape<double> t;
  const auto out = fx.prompter.run(t, x, 1);
  Var<double> loss = add(tu::weighted_sum(out.shifted, 1), tu::weighted_sum(out.f, 2));
  fx.store.zero_grad();
  t.backward(loss);
  t.accumulate_parameter_grads();
  fx.store.for_each([](const Parameter<double>& p) {
    EXPECT_GT(p.grad.values().cwiseAbs().maxCoeff(), 0.0) << p.name;
  });
}

TEST(ShiftPrompter, GradientsMatchFiniteDifferences) {
  Fixture fx(small_config());
  std::mt19937_64 rng(10);
  const RowMatrix<double> x = tu::random_points(30, 3, rng);
  auto loss = [&](Tape<double>& t) {
    const auto out = fx.prompter.run(t, x, 1);
    return add(tu::weighted_sum(out.shifted, 1), tu::weighted_sum(out.f, 2));
  };
  std::vector<Parameter<double>*> params;
  fx.store.for_each([&](Parameter<double>& p) { params.push_back(&p); });
  for (const auto& c : grad_check_parameters(loss, params, 1e-5, 40)) {
    EXPECT_LE(c.result.max_relative_error, 1e-4) << c.name;
    EXPECT_GT(c.result.checked, 0) << c.name;
  }
}

TEST(PromptEnhancement, AddsScaledShapeFeatureToEveryRow) {
  Tape<double> t;
  std::mt19937_64 rng(11);
  auto p = t.variable(tu::random_tensor({3, 4}, rng));
  auto f = t.variable(tu::random_tensor({1, 4}, rng));
  const auto out = enhance_prompt_tokens(p, f, 0.25);
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < 4; ++c)
      EXPECT_DOUBLE_EQ(out.value().matrix()(r, c), p.value().matrix()(r, c) + 0.25 * f.value().matrix()(0, c));
  auto wrong = t.variable(tu::random_tensor({1, 5}, rng));
  EXPECT_THROW(enhance_prompt_tokens(p, wrong, 0.5), std::invalid_argument);
}
