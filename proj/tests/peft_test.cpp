#include <gtest/gtest.h>

#include <numeric>

#include "param_formulas.hpp"
#include "test_util.hpp"
#include "tsft/peft.hpp"

namespace tsft {
namespace {

using testing::bit_equal;
using testing::randn;
using testing::random_series;

BackboneConfig small_config() {
  BackboneConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.patch_len = 4;
  c.stride = 4;
  c.max_T = 32;
  return c;
}

TaskSpec classify_task(int channels, int labels = 1) {
  TaskSpec t;
  t.channels = channels;
  t.labels = labels;
  return t;
}

std::vector<PatchGrid<double>> random_grids(Tape<double>& tape, Index C, Index P, Index D, std::mt19937_64& rng) {
  std::vector<PatchGrid<double>> g;
  for (Index c = 0; c < C; ++c) g.push_back({tape.constant(randn(P, D, rng)), Mask(P, true)});
  return g;
}

TEST(ChannelSplit, RowsBecomeSeries) {
  std::mt19937_64 rng(1);
  MultiSeries x = random_series(3, 5, rng);
  auto parts = channel_split(x);
  ASSERT_EQ(parts.size(), 3u);
  for (Index c = 0; c < 3; ++c) EXPECT_EQ(parts[c].values.transpose(), x.x.row(c));
  MultiSeries one = random_series(1, 4, rng);
  EXPECT_EQ(channel_split(one).size(), 1u);
  x.x(1, 2) = std::nan("");
  EXPECT_THROW(channel_split(x), std::invalid_argument);
}

TEST(ChannelStack, LayoutAndRoundTrip) {
  std::mt19937_64 rng(2);
  Tape<double> tape;
  auto grids = random_grids(tape, 2, 3, 4, rng);
  ChannelStack<double> e = stack_channels(grids);
  Tensor<double> t = e.to_tensor();
  EXPECT_EQ(t.shape(), (Shape{3, 2, 4}));
  for (Index p = 0; p < 3; ++p)
    for (Index c = 0; c < 2; ++c)
      for (Index d = 0; d < 4; ++d) EXPECT_EQ(t.at({p, c, d}), grids[c].data.value()(p, d));
  auto back = unstack_channels(e);
  for (Index c = 0; c < 2; ++c) EXPECT_TRUE(bit_equal(back[c].data.value(), grids[c].data.value()));

  auto single = random_grids(tape, 1, 5, 4, rng);
  EXPECT_EQ(stack_channels(single).to_tensor().shape(), (Shape{5, 1, 4}));

  grids.push_back({tape.constant(randn(4, 4, rng)), Mask(4, true)});
  EXPECT_THROW(stack_channels(grids), ShapeError);
}

TEST(PromptModule, ShapeForEveryAggregator) {
  BackboneConfig c = small_config();
  c.d_model = 4;
  for (Aggregator agg : {Aggregator::kTransformer, Aggregator::kRnn, Aggregator::kMlp, Aggregator::kConstant}) {
    std::mt19937_64 rng(3);
    PromptModule<double> pm(agg, 2, 2, c);
    pm.init(rng);
    Tape<double> tape;
    ForwardContext<double> ctx{tape};
    Var<double> prompt = pm.forward(ctx, stack_channels(random_grids(tape, 2, 3, 4, rng)));
    EXPECT_EQ(prompt.rows(), 4) << to_string(agg);
    EXPECT_EQ(prompt.cols(), 4) << to_string(agg);
  }
  EXPECT_THROW(PromptModule<double>(Aggregator::kTransformer, 0, 2, c), std::invalid_argument);
}

TEST(PromptModule, TransformerAggregatorIgnoresPatchOrder) {
  BackboneConfig c = small_config();
  for (int draw = 0; draw < 10; ++draw) {
    std::mt19937_64 rng(40 + draw);
    PromptModule<double> pm(Aggregator::kTransformer, 3, 2, c);
    pm.init(rng);
    const Index P = 5;
    std::vector<Mat<double>> xs{randn(P, 8, rng), randn(P, 8, rng)};
    std::vector<Index> perm(P);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tape<double> tape;
    ForwardContext<double> ctx{tape};
    std::vector<PatchGrid<double>> a, b;
    for (const auto& x : xs) {
      Mat<double> px(P, 8);
      for (Index p = 0; p < P; ++p) px.row(p) = x.row(perm[p]);
      a.push_back({tape.constant(x), Mask(P, true)});
      b.push_back({tape.constant(px), Mask(P, true)});
    }
    Mat<double> pa = pm.forward(ctx, stack_channels(a)).value(), pb = pm.forward(ctx, stack_channels(b)).value();
    EXPECT_LE((pa - pb).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(PromptModule, ChannelPermutationPermutesPromptBlocks) {
  BackboneConfig c = small_config();
  for (Aggregator agg : {Aggregator::kTransformer, Aggregator::kRnn, Aggregator::kMlp}) {
    std::mt19937_64 rng(5);
    const Index C = 3, K = 2, P = 4;
    PromptModule<double> pm(agg, K, C, c);
    pm.init(rng);
    Tape<double> tape;
    ForwardContext<double> ctx{tape};
    auto grids = random_grids(tape, C, P, 8, rng);
    const std::vector<Index> perm{2, 0, 1};
    std::vector<PatchGrid<double>> permuted;
    for (Index i : perm) permuted.push_back(grids[i]);
    Mat<double> a = pm.forward(ctx, stack_channels(grids)).value();
    Mat<double> b = pm.forward(ctx, stack_channels(permuted)).value();
    for (Index ci = 0; ci < C; ++ci)
      EXPECT_LE((b.middleRows(ci * K, K) - a.middleRows(perm[ci] * K, K)).cwiseAbs().maxCoeff(), 1e-12)
          << to_string(agg);
  }
}

TEST(PromptModule, SingleChannelSingleRow) {
  BackboneConfig c = small_config();
  std::mt19937_64 rng(6);
  PromptModule<double> pm(Aggregator::kTransformer, 1, 1, c);
  pm.init(rng);
  Tape<double> tape;
  ForwardContext<double> ctx{tape};
  auto g = random_grids(tape, 1, 3, 8, rng);
  EXPECT_EQ(pm.forward(ctx, stack_channels(g)).rows(), 1);
}

TEST(PromptModule, MlpRejectsTooManyPatches) {
  BackboneConfig c = small_config();  // P_max = 8
  std::mt19937_64 rng(7);
  PromptModule<double> pm(Aggregator::kMlp, 1, 1, c);
  pm.init(rng);
  Tape<double> tape;
  ForwardContext<double> ctx{tape};
  EXPECT_THROW(pm.forward(ctx, stack_channels(random_grids(tape, 1, 9, 8, rng))), std::invalid_argument);
}

TEST(Prompt, AttachAndStrip) {
  std::mt19937_64 rng(8);
  Tape<double> tape;
  auto e = random_grids(tape, 1, 3, 4, rng).front();
  e.mask[2] = false;
  PatchGrid<double> same = attach_prompt<double>(std::nullopt, e);
  EXPECT_EQ(same.data.id(), e.data.id());

  Var<double> prompt = tape.constant(randn(2, 4, rng));
  PatchGrid<double> u = attach_prompt<double>(prompt, e);
  ASSERT_EQ(u.patches(), 5);
  EXPECT_EQ(u.mask, (Mask{true, true, true, true, false}));
  EXPECT_TRUE(bit_equal<double>(u.data.value().bottomRows(3), e.data.value()));
  PatchGrid<double> s = strip_prompt(u, 2, 1);
  EXPECT_TRUE(bit_equal(s.data.value(), e.data.value()));
  EXPECT_EQ(s.mask, e.mask);
  EXPECT_EQ(strip_prompt(e, 2, 0).data.id(), e.data.id());
  EXPECT_THROW(strip_prompt(e, 2, 2), ShapeError);
  EXPECT_THROW(attach_prompt<double>(tape.constant(randn(2, 5, rng)), e), ShapeError);
}

TEST(GenP, ZeroPromptIsChannelIndependence) {
  BackboneConfig c = small_config();
  std::mt19937_64 rng(9);
  auto bb = Backbone<float>::random(c, rng);
  for (int i = 0; i < 10; ++i) {
    MultiSeries x = random_series(3, 1 + static_cast<Index>(rng() % 32), rng);
    Tape<float> tape;
    ForwardContext<float> ctx{tape};
    auto a = gen_p_forward<float>(ctx, bb, nullptr, 0, x);
    auto b = channel_independent_forward(ctx, bb, x);
    for (int ch = 0; ch < 3; ++ch) EXPECT_TRUE(bit_equal(a.grids[ch].data.value(), b.grids[ch].data.value()));
  }
}

// Reference: the per-layer procedure written out with unbatched layer calls.
TEST(GenP, MatchesExplicitProcedure) {
  BackboneConfig c = small_config();
  for (int layers : {1, 2}) {
    c.n_layers = layers;
    std::mt19937_64 rng(10);
    auto bb = Backbone<double>::random(c, rng);
    PromptModule<double> pm(Aggregator::kRnn, 2, 2, c);
    pm.init(rng);
    MultiSeries x = random_series(2, 14, rng);
    Tape<double> tape;
    ForwardContext<double> ctx{tape};
    auto got = gen_p_forward(ctx, bb, &pm, 2, x);

    std::vector<PatchGrid<double>> u;
    for (const auto& s : channel_split(x)) u.push_back(bb.embed_series(ctx, s).grid);
    for (int l = 0; l < layers; ++l) {
      Var<double> prompt = pm.forward(ctx, stack_channels(u));
      for (auto& g : u) {
        PatchGrid<double> in = attach_prompt<double>(prompt, g);
        PatchGrid<double> out = bb.apply_layer(ctx, in, l);
        g = {slice_rows(out.data, 4, g.patches()), g.mask};
      }
    }
    for (int ch = 0; ch < 2; ++ch)
      EXPECT_LE((got.grids[ch].data.value() - u[ch].data.value()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GenP, LayerSeesPromptPlusPatchRows) {
  BackboneConfig c = small_config();
  c.patch_len = c.stride = 8;
  std::mt19937_64 rng(11);
  PromptModule<double> pm(Aggregator::kTransformer, 1, 2, c);
  pm.init(rng);
  auto bb = Backbone<double>::random(c, rng);
  Tape<double> tape;
  ForwardContext<double> ctx{tape};
  MultiSeries x = random_series(2, 16, rng);
  auto f = embed_channels(ctx, bb, x);
  Var<double> prompt = pm.forward(ctx, stack_channels(f.grids));
  EXPECT_EQ(attach_prompt<double>(prompt, f.grids[0]).patches(), 4);
}

TEST(ChannelIndependence, EquivarianceAndIsolation) {
  BackboneConfig c = small_config();
  std::mt19937_64 rng(12);
  auto bb = Backbone<float>::random(c, rng);
  MultiSeries x = random_series(3, 20, rng);
  Tape<float> tape;
  ForwardContext<float> ctx{tape};
  auto base = channel_independent_forward(ctx, bb, x);

  MultiSeries perm = x;
  perm.x.row(0) = x.x.row(2);
  perm.x.row(2) = x.x.row(0);
  auto p = channel_independent_forward(ctx, bb, perm);
  // Rows move within the batched matmul, so agreement is up to rounding.
  EXPECT_LE((p.grids[0].data.value() - base.grids[2].data.value()).cwiseAbs().maxCoeff(), 1e-5f);
  EXPECT_LE((p.grids[1].data.value() - base.grids[1].data.value()).cwiseAbs().maxCoeff(), 1e-5f);

  MultiSeries changed = x;
  changed.x.row(1) *= -3.0;
  auto q = channel_independent_forward(ctx, bb, changed);
  EXPECT_TRUE(bit_equal(q.grids[0].data.value(), base.grids[0].data.value()));

  MultiSeries one;
  one.x = x.x.topRows(1);
  auto u = channel_independent_forward(ctx, bb, one);
  UniSeries s;
  s.values = x.x.row(0).transpose();
  EXPECT_TRUE(bit_equal(u.grids[0].data.value(), bb.forward(ctx, s).grid.data.value()));
}

TEST(PTuning, ConstantAggregatorReducesToTable) {
  BackboneConfig c = small_config();
  StrategyConfig gp{StrategyKind::kGenP, 3, Aggregator::kConstant};
  StrategyConfig pt{StrategyKind::kPTuning, 3};
  std::mt19937_64 r0(13);
  auto bb = Backbone<float>::random(c, r0);
  std::mt19937_64 r1(14), r2(14);
  AdaptedModel<float> a(bb.cast<float>(), gp, classify_task(2), r1);
  AdaptedModel<float> b(bb.cast<float>(), pt, classify_task(2), r2);
  MultiSeries x = random_series(2, 24, r0);
  Tape<float> tape;
  ForwardContext<float> ctx{tape};
  EXPECT_TRUE(bit_equal(a.forward(ctx, x).value(), b.forward(ctx, x).value()));
}

TEST(PTuning, GradientsReachPromptOnly) {
  BackboneConfig c = small_config();
  std::mt19937_64 rng(15);
  AdaptedModel<double> m(Backbone<double>::random(c, rng), StrategyConfig{StrategyKind::kPTuning, 2},
                         classify_task(2), rng);
  Tape<double> tape;
  ForwardContext<double> ctx{tape};
  tape.backward(bce_with_logits(m.forward(ctx, random_series(2, 20, rng)), Mat<double>(Mat<double>::Ones(1, 1))));
  EXPECT_GT(m.prompt_table()->grad.cwiseAbs().maxCoeff(), 0.0);
  for (auto* p : m.backbone().parameters()) EXPECT_FALSE(p->has_grad());
}

// After one backward pass the parameters holding gradients are exactly the
// trainable set, and frozen ones hold none.
TEST(Strategies, GradientFlowMatchesTrainableSet) {
  BackboneConfig c = small_config();
  for (StrategyKind kind : {StrategyKind::kFull, StrategyKind::kLora, StrategyKind::kLinear, StrategyKind::kPTuning,
                            StrategyKind::kGenP}) {
    std::mt19937_64 rng(16);
    StrategyConfig sc;
    sc.kind = kind;
    AdaptedModel<double> m(Backbone<double>::random(c, rng), sc, classify_task(2), rng);
    for (auto* p : m.parameters()) p->zero_grad();
    Tape<double> tape;
    std::mt19937_64 drng(1);
    ForwardContext<double> ctx{tape, true, &drng};
    tape.backward(bce_with_logits(m.forward(ctx, random_series(2, 20, rng)), Mat<double>(Mat<double>::Ones(1, 1))));
    for (auto* p : m.parameters()) {
      if (p->trainable)
        EXPECT_TRUE(p->has_grad()) << to_string(kind) << " " << p->name;
      else
        EXPECT_FALSE(p->has_grad()) << to_string(kind) << " " << p->name;
    }
  }
}

TEST(Strategies, TrainableCountsMatchFormulas) {
  BackboneConfig c;  // default toy config
  const int C = 2, K = 4, M = 1;
  const auto f = testing::formulas_for(c, C, K, M, 1);
  auto count = [&](StrategyConfig sc) {
    std::mt19937_64 rng(17);
    AdaptedModel<float> m(Backbone<float>::random(c, rng), sc, classify_task(C, M), rng);
    return m.report();
  };
  auto make = [&](StrategyKind kind, Aggregator agg = Aggregator::kTransformer) {
    StrategyConfig sc;
    sc.kind = kind;
    sc.prompt_size = K;
    sc.aggregator = agg;
    return sc;
  };
  EXPECT_EQ(count(make(StrategyKind::kLinear)).trainable, f.linear_probe());
  EXPECT_EQ(count(make(StrategyKind::kLora)).trainable, f.lora());
  EXPECT_EQ(count(make(StrategyKind::kPTuning)).trainable, f.ptuning());
  EXPECT_EQ(count(make(StrategyKind::kGenP)).trainable, f.genp_transformer());
  EXPECT_EQ(count(make(StrategyKind::kGenP, Aggregator::kRnn)).trainable, f.genp_rnn());
  EXPECT_EQ(count(make(StrategyKind::kGenP, Aggregator::kMlp)).trainable, f.genp_mlp());
  EXPECT_EQ(count(make(StrategyKind::kGenP, Aggregator::kConstant)).trainable, f.genp_constant());
  const ParamReport full = count(make(StrategyKind::kFull));
  EXPECT_EQ(full.trainable, f.full());
  EXPECT_EQ(full.fraction, 1.0);
  // Hand-evaluated for D=64, L=2, d_ff=128, patch_len=8, max_T=512.
  EXPECT_EQ(f.block(), 33472);
  EXPECT_EQ(f.full(), 71616 + 65);
  EXPECT_EQ(f.genp_transformer(), 83649);
}

TEST(Strategies, LinearProbeTrainsHeadOnly) {
  BackboneConfig c = small_config();
  std::mt19937_64 rng(18);
  StrategyConfig sc;
  sc.kind = StrategyKind::kLinear;
  AdaptedModel<float> m(Backbone<float>::random(c, rng), sc, classify_task(2, 3), rng);
  EXPECT_EQ(m.trainable_parameters(), m.head_parameters());
}

TEST(StrategyConfig, ParsingAndValidation) {
  for (auto k : {StrategyKind::kFull, StrategyKind::kLora, StrategyKind::kLinear, StrategyKind::kPTuning,
                 StrategyKind::kGenP})
    EXPECT_EQ(parse_strategy(to_string(k)), k);
  for (auto a : {Aggregator::kTransformer, Aggregator::kRnn, Aggregator::kMlp, Aggregator::kConstant})
    EXPECT_EQ(parse_aggregator(to_string(a)), a);
  EXPECT_THROW(parse_strategy("prefix"), std::invalid_argument);
  StrategyConfig sc;
  sc.prompt_size = -1;
  EXPECT_THROW(sc.validate(), std::invalid_argument);
  StrategyConfig lin;
  lin.kind = StrategyKind::kLinear;
  EXPECT_EQ(lin.effective_k(), 0);
  StrategyConfig def;
  EXPECT_EQ(def.lora_rank, 1);
  EXPECT_EQ(def.lora_alpha, 16.0);
  EXPECT_EQ(def.lora_dropout, 0.1);
}

}  // namespace
}  // namespace tsft
