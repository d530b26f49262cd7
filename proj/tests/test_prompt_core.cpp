#include "geoprompt/prompt_core.hpp"

#include "oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace geoprompt;
namespace tu = geoprompt::testing;

namespace {

// Rows 0..7 of the token matrix hold 10*i + column, prompts hold -(10*j + column + 1),
// so every gathered row says where it came from.
Tensor<double> labelled_tokens(Index n, Index d) {
  Tensor<double> t(Shape{n, d});
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c) t.matrix()(i, c) = 10.0 * static_cast<double>(i) + static_cast<double>(c);
  return t;
}

Tensor<double> labelled_prompts(Index n, Index d) {
  Tensor<double> t(Shape{n, d});
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c) t.matrix()(i, c) = -(10.0 * static_cast<double>(i) + static_cast<double>(c) + 1.0);
  return t;
}

NeighborIndex fixed_index() {
  NeighborIndex idx;
  idx.centers = {5, 0, 3};
  idx.neighbors.resize(3, 2);
  idx.neighbors << 5, 6,  //
      0, 1,               //
      3, 7;
  return idx;
}

double source_row(const RowMatrix<double>& m, Index r) { return m(r, 0); }

ModelConfig tiny_model() {
  ModelConfig c;
  c.backbone.dim = 16;
  c.backbone.depth = 2;
  c.backbone.heads = 2;
  c.backbone.mlp_ratio = 2;
  c.backbone.n_patches = 8;
  c.backbone.patch_size = 8;
  c.backbone.embed_hidden = 16;
  c.backbone.pos_hidden = 16;
  c.prompter.centers = {16, 4};
  c.prompter.neighbors = {8, 4};
  c.prompter.widths = {8, 4};  // 4 x 4 = 16
  c.prompter.head_hidden = 8;
  c.point_prompt.count = 6;
  c.prompt_tokens.count = 2;
  c.propagation.neighbors = 3;
  c.num_classes = 3;
  return c;
}

}  // namespace

TEST(Inject, ReplacementOverwritesLastCentersAndTheirFinalNeighbor) {
  Tape<double> t;
  auto tokens = t.constant(labelled_tokens(8, 3));
  auto prompts = t.constant(labelled_prompts(2, 3));
  const auto out = inject(tokens, fixed_index(), prompts, InjectVariant::replacement);
  const RowMatrix<double> c = out.centers.value().matrix();
  EXPECT_EQ(source_row(c, 0), 50.0);
  EXPECT_EQ(source_row(c, 1), -1.0);   // prompt 0
  EXPECT_EQ(source_row(c, 2), -11.0);  // prompt 1
  const Tensor<double>& nb = out.neighbors.value();
  ASSERT_EQ(nb.shape(), (Shape{3, 2, 3}));
  auto at = [&](Index ci, Index k) { return nb.values()[(ci * 2 + k) * 3]; };
  EXPECT_EQ(at(0, 0), 50.0);
  EXPECT_EQ(at(0, 1), 60.0);
  EXPECT_EQ(at(1, 0), 0.0);
  EXPECT_EQ(at(1, 1), -1.0);
  EXPECT_EQ(at(2, 0), 30.0);
  EXPECT_EQ(at(2, 1), -11.0);
}

TEST(Inject, PermutationIndexesPromptsThenShiftedTokens) {
  Tape<double> t;
  auto tokens = t.constant(labelled_tokens(8, 3));
  auto prompts = t.constant(labelled_prompts(2, 3));
  const auto out = inject(tokens, fixed_index(), prompts, InjectVariant::permutation);
  // Mixed list: [p0, p1, h0, ..., h5]; index m maps to p_m for m < 2 else h_{m-2}.
  const RowMatrix<double> c = out.centers.value().matrix();
  EXPECT_EQ(source_row(c, 0), 30.0);  // mixed 5 -> h3
  EXPECT_EQ(source_row(c, 1), -1.0);  // mixed 0 -> p0
  EXPECT_EQ(source_row(c, 2), 10.0);  // mixed 3 -> h1
  const Tensor<double>& nb = out.neighbors.value();
  auto at = [&](Index ci, Index k) { return nb.values()[(ci * 2 + k) * 3]; };
  EXPECT_EQ(at(0, 1), 40.0);   // mixed 6 -> h4
  EXPECT_EQ(at(1, 1), -11.0);  // mixed 1 -> p1
  EXPECT_EQ(at(2, 1), 50.0);   // mixed 7 -> h5
}

TEST(Inject, WithoutPromptsBothVariantsAreAPlainGather) {
  Tape<double> t;
  auto tokens = t.constant(labelled_tokens(8, 3));
  Var<double> none;
  for (auto v : {InjectVariant::replacement, InjectVariant::permutation}) {
    const auto out = inject(tokens, fixed_index(), none, v);
    EXPECT_EQ(source_row(out.centers.value().matrix(), 0), 50.0);
    EXPECT_EQ(source_row(out.centers.value().matrix(), 1), 0.0);
    EXPECT_EQ(source_row(out.centers.value().matrix(), 2), 30.0);
  }
}

TEST(Inject, RejectsMorePromptsThanCentersAndBadWidth) {
  Tape<double> t;
  auto tokens = t.constant(labelled_tokens(8, 3));
  EXPECT_THROW(inject(tokens, fixed_index(), t.constant(labelled_prompts(4, 3)), InjectVariant::replacement),
               std::invalid_argument);
  EXPECT_THROW(inject(tokens, fixed_index(), t.constant(labelled_prompts(2, 5)), InjectVariant::permutation),
               std::invalid_argument);
}

TEST(Propagation, MatchesOracleOnEightTokens) {
  std::mt19937_64 rng(21);
  const RowMatrix<double> h = tu::random_points(8, 4, rng);
  const RowMatrix<double> p = tu::random_points(2, 4, rng);
  for (auto variant : {InjectVariant::replacement, InjectVariant::permutation}) {
    PropagationConfig cfg;
    cfg.variant = variant;
    cfg.neighbors = 2;
    Tape<double> t;
    auto tokens = t.constant(Tensor<double>::from_matrix(h));
    auto prompts = t.constant(Tensor<double>::from_matrix(p));
    const RowMatrix<double> got =
        propagate_tokens(tokens, false, RowMatrix<double>(), cfg, 4, prompts, 33).value().matrix();

    const auto centers = farthest_point_sample<double>(h, 4, 33);
    RowMatrix<double> feat(4, 4), pos(4, 4);
    for (Index i = 0; i < 4; ++i) {
      const Index ci = centers[static_cast<std::size_t>(i)];
      pos.row(i) = h.row(ci);
      if (variant == InjectVariant::replacement)
        feat.row(i) = i >= 2 ? RowMatrix<double>(p.row(i - 2)) : RowMatrix<double>(h.row(ci));
      else
        feat.row(i) = ci < 2 ? RowMatrix<double>(p.row(ci)) : RowMatrix<double>(h.row(ci - 2));
    }
    const RowMatrix<double> want = oracle::idw(h, pos, feat, 4);
    EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-12) << to_string(variant);
  }
}

TEST(Propagation, CentersOverwrittenByTheirInjectedFeature) {
  // An exact-match query takes the center feature; for replacement the last
  // two centers therefore become the prompts.
  std::mt19937_64 rng(22);
  const RowMatrix<double> h = tu::random_points(8, 4, rng);
  const RowMatrix<double> p = tu::random_points(2, 4, rng);
  PropagationConfig cfg;
  cfg.variant = InjectVariant::replacement;
  cfg.neighbors = 2;
  Tape<double> t;
  const RowMatrix<double> got = propagate_tokens(t.constant(Tensor<double>::from_matrix(h)), false, RowMatrix<double>(),
                                                 cfg, 4, t.constant(Tensor<double>::from_matrix(p)), 5)
                                    .value()
                                    .matrix();
  const auto centers = farthest_point_sample<double>(h, 4, 5);
  for (Index i = 0; i < 4; ++i) {
    const RowMatrix<double> want = i >= 2 ? RowMatrix<double>(p.row(i - 2)) : RowMatrix<double>(h.row(centers[static_cast<std::size_t>(i)]));
    const RowMatrix<double> row = got.row(centers[static_cast<std::size_t>(i)]);
    EXPECT_LE((row - want).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, want.cwiseAbs().maxCoeff()));
  }
}

TEST(Propagation, ClsRowPassesThroughAndResidualAdds) {
  std::mt19937_64 rng(23);
  const RowMatrix<double> h = tu::random_points(9, 4, rng);
  const RowMatrix<double> p = tu::random_points(2, 4, rng);
  PropagationConfig cfg;
  cfg.neighbors = 2;
  Tape<double> t;
  auto tokens = t.constant(Tensor<double>::from_matrix(h));
  auto prompts = t.constant(Tensor<double>::from_matrix(p));
  const RowMatrix<double> over = propagate_tokens(tokens, true, RowMatrix<double>(), cfg, 4, prompts, 8).value().matrix();
  EXPECT_EQ(RowMatrix<double>(over.row(0)), RowMatrix<double>(h.row(0)));
  cfg.residual = true;
  const RowMatrix<double> res = propagate_tokens(tokens, true, RowMatrix<double>(), cfg, 4, prompts, 8).value().matrix();
  EXPECT_EQ(RowMatrix<double>(res.row(0)), RowMatrix<double>(h.row(0)));
  const RowMatrix<double> diff = res.bottomRows(8) - h.bottomRows(8) - over.bottomRows(8);
  EXPECT_LE(diff.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Propagation, CenterSpaceUsesPatchCoordinates) {
  std::mt19937_64 rng(24);
  const RowMatrix<double> h = tu::random_points(8, 4, rng);
  const RowMatrix<double> xyz = tu::random_points(8, 3, rng);
  PropagationConfig cfg;
  cfg.space = TokenSpace::center3d;
  cfg.neighbors = 2;
  Tape<double> t;
  auto tokens = t.constant(Tensor<double>::from_matrix(h));
  Var<double> none;
  const RowMatrix<double> got = propagate_tokens(tokens, false, xyz, cfg, 4, none, 2).value().matrix();
  const auto centers = farthest_point_sample<double>(xyz, 4, 2);
  RowMatrix<double> pos(4, 3), feat(4, 4);
  for (Index i = 0; i < 4; ++i) {
    pos.row(i) = xyz.row(centers[static_cast<std::size_t>(i)]);
    feat.row(i) = h.row(centers[static_cast<std::size_t>(i)]);
  }
  EXPECT_LE((got - oracle::idw(xyz, pos, feat, 4)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(propagate_tokens(tokens, false, RowMatrix<double>(xyz.topRows(5)), cfg, 4, none, 2),
               std::invalid_argument);
}

TEST(Model, EveryPlacementAndVariantTrainsPromptsThroughTheLoss) {
  std::mt19937_64 rng(30);
  const RowMatrix<double> x = tu::random_points(48, 3, rng);
  for (auto placement : {InjectPlacement::before_attn, InjectPlacement::after_attn}) {
    for (auto variant : {InjectVariant::replacement, InjectVariant::permutation}) {
      ModelConfig cfg = tiny_model();
      cfg.zero_init = false;
      cfg.propagation.placement = placement;
      cfg.propagation.variant = variant;
      Model<double> m(cfg, 3);
      Tape<double> t;
      const auto r = m.forward(t, x, 4);
      Var<double> loss = cross_entropy(r.logits, {1});
      ASSERT_TRUE(std::isfinite(loss.value().values()[0]));
      m.parameters().zero_grad();
      t.backward(loss);
      t.accumulate_parameter_grads();
      const std::string tag = to_string(placement) + "/" + to_string(variant);
      for (const char* name : {"peft.block0.prompt", "peft.block1.prompt", "peft.point_prompt"}) {
        EXPECT_GT(m.parameters().at(name).grad.values().cwiseAbs().maxCoeff(), 0.0) << tag << " " << name;
      }
    }
  }
}

TEST(Model, ParameterGroupsAreNamedByRole) {
  Model<double> m(tiny_model(), 1);
  Index backbone = 0, peft = 0, head = 0;
  m.parameters().for_each([&](const Parameter<double>& p) {
    if (p.name.rfind("backbone.", 0) == 0) ++backbone;
    else if (p.name.rfind("peft.", 0) == 0) ++peft;
    else if (p.name.rfind("head.", 0) == 0) ++head;
    else ADD_FAILURE() << p.name;
  });
  EXPECT_GT(backbone, 0);
  EXPECT_GT(peft, 0);
  EXPECT_GT(head, 0);
  EXPECT_NE(m.parameters().find("peft.block1.adapter.up.w"), nullptr);
}

TEST(Model, IdentityStartupMatchesFrozenBackbonePlusHead) {
  ModelConfig cfg = tiny_model();
  cfg.zero_init = true;
  cfg.prompter.shift_scale = 0.0;
  cfg.point_prompt.count = 0;
  cfg.prompt_tokens.count = 0;
  cfg.head.inputs = {HeadInput::cls, HeadInput::max_patch};
  Model<double> adapted(cfg, 12);
  Model<double> plain(backbone_only(cfg), 12);
  // Same names, same seeds: the shared parameters already agree; copy anyway so
  // the check does not lean on initialization order.
  plain.parameters().for_each(
      [&](Parameter<double>& p) { p.value = adapted.parameters().at(p.name).value; });

  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 5; ++trial) {
    const RowMatrix<double> x = tu::random_points(64, 3, rng);
    Tape<double> t1, t2;
    const auto a = adapted.forward(t1, x, static_cast<std::uint64_t>(trial));
    const auto b = plain.forward(t2, x, static_cast<std::uint64_t>(trial));
    EXPECT_LE((a.logits.value().matrix() - b.logits.value().matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Model, ForwardIsDeterministicPerSeed) {
  ModelConfig cfg = tiny_model();
  cfg.zero_init = false;
  Model<double> m(cfg, 2);
  Model<double> m2(cfg, 2);
  std::mt19937_64 rng(41);
  const RowMatrix<double> x = tu::random_points(48, 3, rng);
  Tape<double> t1, t2, t3;
  const auto a = m.forward(t1, x, 17);
  const auto b = m2.forward(t2, x, 17);
  const auto c = m.forward(t3, x, 18);
  EXPECT_EQ(a.logits.value().matrix(), b.logits.value().matrix());
  EXPECT_NE(a.logits.value().matrix(), c.logits.value().matrix());
  ASSERT_EQ(a.cls_attention.size(), 2u);
  // CLS attends over 1 + 8 tokens and 2 prompts.
  EXPECT_EQ(a.cls_attention[0].size(), 11u);
}

TEST(Model, HybridAppendsPointPromptRows) {
  ModelConfig cfg = tiny_model();
  Model<double> m(cfg, 2);
  std::mt19937_64 rng(42);
  const RowMatrix<double> x = tu::random_points(48, 3, rng);
  Tape<double> t;
  const auto r = m.forward(t, x, 1);
  ASSERT_EQ(r.hybrid.value().rows(), 54);
  EXPECT_EQ(RowMatrix<double>(r.hybrid.value().matrix().bottomRows(6)), m.point_prompt()->value.matrix());
}

TEST(PointPromptInit, UniformAndClusterStayInRange) {
  for (auto mode : {PromptInit::uniform, PromptInit::cluster}) {
    const auto p = init_point_prompt<double>(23, 0.7, mode, 9);
    ASSERT_EQ(p.shape(), (Shape{23, 3}));
    EXPECT_LE(p.values().cwiseAbs().maxCoeff(), 0.7);
    EXPECT_EQ(p.values(), init_point_prompt<double>(23, 0.7, mode, 9).values());
    EXPECT_NE(p.values(), init_point_prompt<double>(23, 0.7, mode, 10).values());
  }
  EXPECT_EQ(init_point_prompt<double>(0, 1.0, PromptInit::uniform, 1).size(), 0);
  EXPECT_THROW(init_point_prompt<double>(-1, 1.0, PromptInit::uniform, 1), std::invalid_argument);
  EXPECT_THROW(init_point_prompt<double>(4, 0.0, PromptInit::cluster, 1), std::invalid_argument);
}

TEST(PointPromptInit, ClusterPointsGatherAroundFewerMeans) {
  // Twenty points around four means sit closer to their cluster mates than
  // uniform draws sit to arbitrary partners.
  const auto c = init_point_prompt<double>(20, 1.0, PromptInit::cluster, 3).matrix();
  double within = 0;
  for (Index i = 0; i < 20; ++i) within += (c.row(i) - c.row((i + 4) % 20)).norm();
  const auto u = init_point_prompt<double>(20, 1.0, PromptInit::uniform, 3).matrix();
  double spread = 0;
  for (Index i = 0; i < 20; ++i) spread += (u.row(i) - u.row((i + 4) % 20)).norm();
  EXPECT_LT(within, spread);
}
