#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

#include "rssd/heads.hpp"
#include "rssd/loss.hpp"
#include "rssd/model.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace rssd;
using rssd::testing::random_tensor;

namespace {

PyramidConfig ladder(std::vector<std::size_t> sizes) {
  PyramidConfig c;
  c.input_size = sizes.front();
  for (auto s : sizes) c.levels.push_back({s, 8});
  return c;
}

// Closed form, computed independently of count_boxes.
std::size_t sum_f2k(const std::vector<std::size_t>& f, const std::vector<std::size_t>& k) {
  std::size_t t = 0;
  for (std::size_t i = 0; i < f.size(); ++i) t += f[i] * f[i] * k[i];
  return t;
}

}  // namespace

TEST(DefaultBoxTest, TableCountsOnCanonicalLadder) {
  const auto cfg = PyramidConfig::canonical300();
  EXPECT_EQ(count_boxes(BoxLayout::conventional(), cfg), 8732u);
  EXPECT_EQ(count_boxes(BoxLayout::shared(4), cfg), 7760u);
  EXPECT_EQ(count_boxes(BoxLayout::shared(6), cfg), 11640u);
  EXPECT_EQ(generate_default_boxes(BoxLayout::conventional(), cfg).size(), 8732u);
  EXPECT_EQ(generate_default_boxes(BoxLayout::shared(4), cfg).size(), 7760u);
  EXPECT_EQ(generate_default_boxes(BoxLayout::shared(6), cfg).size(), 11640u);
}

TEST(DefaultBoxTest, EmptyPyramidCountsZero) {
  EXPECT_EQ(count_boxes(BoxLayout{{}, false}, PyramidConfig{}), 0u);
}

TEST(DefaultBoxTest, SingleCellFourBoxesCentered) {
  const auto boxes = generate_default_boxes(BoxLayout{{4}, false}, ladder({1}));
  ASSERT_EQ(boxes.size(), 4u);
  for (const auto& b : boxes) {
    EXPECT_DOUBLE_EQ(b.cx, 0.5);
    EXPECT_DOUBLE_EQ(b.cy, 0.5);
    EXPECT_GT(b.w, 0);
    EXPECT_GT(b.h, 0);
  }
  // ratio 1, extra scale, 2, 1/2
  EXPECT_DOUBLE_EQ(boxes[0].w, 0.2);
  EXPECT_NEAR(boxes[1].w, std::sqrt(0.2 * 0.9), 1e-15);
  EXPECT_NEAR(boxes[2].w / boxes[2].h, 2.0, 1e-12);
  EXPECT_NEAR(boxes[3].w / boxes[3].h, 0.5, 1e-12);
}

TEST(DefaultBoxTest, CountMatchesGenerationOnRandomLayouts) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> nl(1, 7), sz(1, 40), kk(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> sizes(nl(rng));
    for (auto& s : sizes) s = sz(rng);
    std::sort(sizes.begin(), sizes.end(), std::greater<>());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    std::vector<std::size_t> k(sizes.size());
    for (auto& v : k) v = kk(rng) ? 6 : 4;
    const BoxLayout layout{k, false};
    const auto cfg = ladder(sizes);
    EXPECT_EQ(count_boxes(layout, cfg), sum_f2k(sizes, k));
    EXPECT_EQ(generate_default_boxes(layout, cfg).size(), sum_f2k(sizes, k));
  }
  const auto toy = PyramidConfig::toy96();
  EXPECT_EQ(count_boxes(BoxLayout::shared(4, 5), toy), sum_f2k({12, 6, 3, 2, 1}, {4, 4, 4, 4, 4}));
}

TEST(DefaultBoxTest, OrderIsLevelRowColumnRatio) {
  const auto cfg = ladder({3, 2});
  const BoxLayout layout{{4, 6}, false};
  const auto boxes = generate_default_boxes(layout, cfg);
  const auto scales = level_scales(2);
  std::size_t a = 0;
  for (std::size_t l = 0; l < 2; ++l) {
    const std::size_t f = cfg.levels[l].spatial;
    for (std::size_t i = 0; i < f; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        for (std::size_t b = 0; b < layout.boxes_per_position[l]; ++b, ++a) {
          EXPECT_DOUBLE_EQ(boxes[a].cx, (j + 0.5) / f);
          EXPECT_DOUBLE_EQ(boxes[a].cy, (i + 0.5) / f);
          if (b == 0) {
            EXPECT_DOUBLE_EQ(boxes[a].w, scales[l]);
          }
        }
      }
    }
  }
  EXPECT_EQ(a, boxes.size());
  // six-box set adds 3 and 1/3 after the four-box set
  EXPECT_NEAR(boxes[36 + 4].w / boxes[36 + 4].h, 3.0, 1e-12);
  EXPECT_NEAR(boxes[36 + 5].w / boxes[36 + 5].h, 1.0 / 3.0, 1e-12);
}

TEST(DefaultBoxTest, ScalesAreLinearAndExtrapolated) {
  const auto s = level_scales(6);
  ASSERT_EQ(s.size(), 7u);
  EXPECT_DOUBLE_EQ(s[0], 0.2);
  EXPECT_NEAR(s[5], 0.9, 1e-15);
  EXPECT_NEAR(s[6], 0.9 + 0.14, 1e-12);
}

TEST(DefaultBoxTest, LayoutErrors) {
  EXPECT_THROW(generate_default_boxes(BoxLayout{{4, 4}, false}, PyramidConfig::canonical300()), ConfigError);
  EXPECT_THROW(BoxLayout({{4, 5}, false}).validate(2), ConfigError);
  EXPECT_THROW(BoxLayout({{4, 6, 6, 6, 4, 4}, true}).validate(6), ConfigError);
}

TEST(IouTest, BasicCases) {
  const Box a{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, {2, 2, 3, 3}), 0.0);
  EXPECT_NEAR(iou(a, {0, 0.5, 1, 1.5}), 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(iou({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
}

TEST(EncodeTest, IdentityAndFormula) {
  const DefaultBox anchor{0.5, 0.5, 0.2, 0.2};
  const auto zero = encode_box(anchor, anchor);
  for (double v : zero) EXPECT_EQ(v, 0.0);
  const auto o = encode_box({0.55, 0.5, 0.4, 0.2}, anchor);
  EXPECT_NEAR(o[0], 2.5, 1e-12);
  EXPECT_NEAR(o[1], 0.0, 1e-15);
  EXPECT_NEAR(o[2], std::log(2.0) / 0.2, 1e-12);
  EXPECT_NEAR(o[3], 0.0, 1e-15);
}

TEST(EncodeTest, RoundTripOnRandomBoxes) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> pos(0, 1), size(0.01, 1);
  for (int i = 0; i < 1000; ++i) {
    const DefaultBox a{pos(rng), pos(rng), size(rng), size(rng)};
    const CenterBox b{pos(rng), pos(rng), size(rng), size(rng)};
    const CenterBox r = decode_box(encode_box(b, a), a);
    EXPECT_NEAR(r.cx, b.cx, 1e-9);
    EXPECT_NEAR(r.cy, b.cy, 1e-9);
    EXPECT_NEAR(r.w, b.w, 1e-9);
    EXPECT_NEAR(r.h, b.h, 1e-9);
  }
}

TEST(EncodeTest, RejectsDegenerateBoxes) {
  EXPECT_THROW(encode_box({0.5, 0.5, 0, 0.1}, {0.5, 0.5, 0.1, 0.1}), ValidationError);
  EXPECT_THROW(encode_box({0.5, 0.5, 0.1, 0.1}, {0.5, 0.5, 0.1, -1}), ValidationError);
}

TEST(MatchTest, PerfectMatchAndEmpty) {
  const auto anchors = generate_default_boxes(BoxLayout{{4, 4}, false}, ladder({4, 2}));
  const auto target = anchors[13];
  const auto m = match_anchors(anchors, {{2, target.corners()}});
  EXPECT_EQ(m.labels[13], 2);
  for (double v : m.targets[13]) EXPECT_NEAR(v, 0.0, 1e-12);
  const auto none = match_anchors(anchors, {});
  EXPECT_EQ(none.positives, 0u);
  EXPECT_TRUE(std::all_of(none.labels.begin(), none.labels.end(), [](int l) { return l == 0; }));
  EXPECT_THROW(match_anchors(anchors, {}, 1.0), ConfigError);
}

TEST(MatchTest, EqualsTwoRuleOracleOnRandomInstances) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto anchors = rssd::testing::random_anchors(rng, 50);
    const auto gts = rssd::testing::random_truth(rng, 3, 3);
    const double thr = trial % 2 ? 0.5 : 0.3;
    const auto m = match_anchors(anchors, gts, thr);
    EXPECT_EQ(m.gt_index, rssd::testing::brute_force_match(anchors, gts, thr)) << trial;
  }
}

TEST(MatchTest, OverlappingTruthIsOnlyUnmatchedWhenItsAnchorsAreTaken) {
  std::mt19937_64 rng(33);
  std::size_t lonely = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto anchors = rssd::testing::random_anchors(rng, 30);
    const auto gts = rssd::testing::random_truth(rng, trial % 4 == 0 ? 1 : 5, 2);
    const auto m = match_anchors(anchors, gts, 0.9);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (std::find(m.gt_index.begin(), m.gt_index.end(), int(g)) != m.gt_index.end()) continue;
      ++lonely;
      EXPECT_GT(gts.size(), 1u);
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (iou(anchors[a].corners(), gts[g].box) > 0) {
          EXPECT_GE(m.gt_index[a], 0) << trial;
        }
      }
    }
  }
  EXPECT_LT(lonely, 50u);
}

// ---------------------------------------------------------------------------
// Loss

namespace {

struct LossCase {
  Tensor4<double> pred;
  std::vector<MatchResult> matches;
  std::size_t classes = 3;
};

LossCase random_loss_case(std::mt19937_64& rng, std::size_t N, std::size_t A, std::size_t positives) {
  LossCase c;
  c.pred = random_tensor({N, 1, A, c.classes + 4}, rng);
  std::normal_distribution<double> t(0, 1.5);
  for (std::size_t n = 0; n < N; ++n) {
    MatchResult m{std::vector<int>(A, -1), std::vector<int>(A, 0), std::vector<Offsets>(A, Offsets{}), 0};
    for (std::size_t p = 0; p < positives; ++p) {
      const std::size_t a = (p * 7 + n * 3) % A;
      m.labels[a] = 1 + int((a + n) % (c.classes - 1));
      m.gt_index[a] = 0;
      m.targets[a] = {t(rng), t(rng), t(rng), t(rng)};
    }
    m.positives = positives;
    c.matches.push_back(std::move(m));
  }
  return c;
}

}  // namespace

TEST(LossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(41);
  auto c = random_loss_case(rng, 1, 20, 3);
  Tensor4<double> grad;
  multibox_loss(c.pred, c.matches, c.classes, &grad);
  const auto numeric = rssd::testing::numeric_gradient(
      c.pred, [&] { return multibox_loss(c.pred, c.matches, c.classes).total; });
  EXPECT_LT(rssd::testing::relative_error(grad, numeric), 1e-4);
}

TEST(LossTest, GradientMatchesFiniteDifferencesOnBatch) {
  std::mt19937_64 rng(43);
  auto c = random_loss_case(rng, 2, 12, 2);
  Tensor4<double> grad;
  multibox_loss(c.pred, c.matches, c.classes, &grad);
  const auto numeric = rssd::testing::numeric_gradient(
      c.pred, [&] { return multibox_loss(c.pred, c.matches, c.classes).total; });
  EXPECT_LT(rssd::testing::relative_error(grad, numeric), 1e-4);
}

TEST(LossTest, PerfectPredictionsGiveNearZeroLoss) {
  std::mt19937_64 rng(45);
  auto c = random_loss_case(rng, 2, 20, 3);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t a = 0; a < 20; ++a) {
      const std::size_t base = (n * 20 + a) * 7;
      for (std::size_t k = 0; k < 3; ++k) c.pred[base + k] = std::size_t(c.matches[n].labels[a]) == k ? 60.0 : 0.0;
      for (std::size_t k = 0; k < 4; ++k) c.pred[base + 3 + k] = c.matches[n].targets[a][k];
    }
  }
  const auto loss = multibox_loss(c.pred, c.matches, c.classes);
  EXPECT_LT(loss.total, 1e-20);
  EXPECT_EQ(loss.loc, 0.0);
}

TEST(LossTest, HardNegativesEqualSortOracle) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_loss_case(rng, 1, 10, 1);
    std::vector<double> bg(10);
    for (std::size_t a = 0; a < 10; ++a) {
      double row[3], lp[3];
      for (std::size_t k = 0; k < 3; ++k) row[k] = c.pred[a * 7 + k];
      log_softmax(row, 3, lp);
      bg[a] = -lp[0];
    }
    const auto picked = select_hard_negatives(bg, c.matches[0].labels, 3);
    // oracle: full sort of (loss desc, index asc)
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t a = 0; a < 10; ++a) {
      if (c.matches[0].labels[a] == 0) all.push_back({-bg[a], a});
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < 3; ++i) expected.push_back(all[i].second);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(picked, expected);
    const auto loss = multibox_loss(c.pred, c.matches, c.classes);
    EXPECT_EQ(loss.negatives, 3u);
  }
}

TEST(LossTest, ZeroPositivesUsesTopNegativesOnly) {
  std::mt19937_64 rng(49);
  auto c = random_loss_case(rng, 2, 10, 0);
  const auto loss = multibox_loss(c.pred, c.matches, c.classes);
  EXPECT_EQ(loss.loc, 0.0);
  EXPECT_EQ(loss.negatives, 6u);
  EXPECT_GT(loss.conf, 0.0);
  EXPECT_DOUBLE_EQ(loss.total, loss.conf);
  EXPECT_TRUE(std::isfinite(loss.total));
}

TEST(LossTest, FiniteForExtremeLogits) {
  std::mt19937_64 rng(51);
  auto c = random_loss_case(rng, 1, 10, 2);
  for (double& v : c.pred.data()) v *= 1e4;
  EXPECT_TRUE(std::isfinite(multibox_loss(c.pred, c.matches, c.classes).total));
}

TEST(LossTest, ShapeErrors) {
  std::mt19937_64 rng(53);
  auto c = random_loss_case(rng, 1, 10, 1);
  EXPECT_THROW(multibox_loss(c.pred, c.matches, 4), DimensionError);
  c.matches[0].labels.resize(9);
  EXPECT_THROW(multibox_loss(c.pred, c.matches, 3), DimensionError);
}

// ---------------------------------------------------------------------------
// Heads

TEST(HeadsTest, SharedCanonicalRainbowHasOneWeightTensor) {
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  ClassifierHeads<float> heads(std::vector<std::size_t>(6, 2816), BoxLayout::shared(6), 21, store, rng);
  const auto w = heads.weight_tensors();
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0]->value.shape(), (Shape4{6 * 25, 2816, 3, 3}));
}

TEST(HeadsTest, PerLevelConventionalHasSixTensors) {
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  ClassifierHeads<float> heads(PyramidConfig::canonical300().channels(), BoxLayout::conventional(), 21, store, rng);
  const auto w = heads.weight_tensors();
  ASSERT_EQ(w.size(), 6u);
  const std::vector<std::size_t> k{4, 6, 6, 6, 4, 4};
  for (std::size_t l = 0; l < 6; ++l) EXPECT_EQ(w[l]->value.n(), k[l] * 25);
}

TEST(HeadsTest, SharedHasFewerParametersThanPerLevel) {
  for (std::size_t k : {4u, 6u}) {
    ParamStore<float> shared_store, level_store;
    std::mt19937_64 rng(1);
    const std::vector<std::size_t> ch(6, 160);
    ClassifierHeads<float> shared(ch, BoxLayout::shared(k), 4, shared_store, rng);
    ClassifierHeads<float> per(ch, BoxLayout{std::vector<std::size_t>(6, k), false}, 4, level_store, rng);
    EXPECT_LT(shared_store.trainable_count(), level_store.trainable_count());
  }
}

TEST(HeadsTest, SharedNeedsUniformChannels) {
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  try {
    ClassifierHeads<float>(PyramidConfig::canonical300().channels(), BoxLayout::shared(4), 21, store, rng);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("rainbow"), std::string::npos);
  }
  DetectorConfig dc;
  dc.fusion = FusionMode::DeconvConcat;
  EXPECT_THROW(dc.validate(), ConfigError);
}

TEST(HeadsTest, FlattenFollowsAnchorOrder) {
  GradTape<double> tape;
  const std::size_t D = 3;
  const std::vector<std::size_t> k{2, 1};
  // value encodes (level, n, channel, y, x)
  std::vector<TensorId> maps;
  for (std::size_t l = 0; l < 2; ++l) {
    const std::size_t f = l == 0 ? 2 : 1;
    Tensor4<double> m(2, k[l] * D, f, f);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < k[l] * D; ++c)
        for (std::size_t y = 0; y < f; ++y)
          for (std::size_t x = 0; x < f; ++x) m(n, c, y, x) = 10000.0 * l + 1000.0 * n + 100.0 * c + 10.0 * y + x;
    maps.push_back(tape.input(m, true));
  }
  const auto out = tape.value(ops::flatten_heads(tape, maps, k, D));
  ASSERT_EQ(out.shape(), (Shape4{2, 1, 9, 3}));
  // anchor 5 = level 0, position (y=1, x=0), box 1; entry t -> channel 1*D + t
  EXPECT_EQ(out(1, 0, 5, 2), 1000.0 + 100.0 * 5 + 10.0);
  // anchor 8 = level 1, only position, box 0
  EXPECT_EQ(out(0, 0, 8, 1), 10000.0 + 100.0);
}

TEST(HeadsTest, FlattenGradientIsTheInverseGather) {
  std::mt19937_64 rng(3);
  GradTape<double> tape;
  const auto a = tape.input(random_tensor({2, 14, 3, 3}, rng), true);
  const auto b = tape.input(random_tensor({2, 7, 1, 1}, rng), true);
  const auto out = ops::flatten_heads(tape, {a, b}, {2, 1}, 7);
  const auto probe = random_tensor(tape.value(out).shape(), rng);
  const auto g = tape.backward(out, probe);
  EXPECT_NEAR(dot(g.of(a), tape.value(a)) + dot(g.of(b), tape.value(b)), dot(probe, tape.value(out)), 1e-10);
}

namespace {

// Moves only classifier weights using a gradient seeded on one level's
// anchors, and reports which levels' predictions changed.
std::vector<bool> levels_changed_by_one_level_step(bool shared) {
  PyramidConfig cfg;
  cfg.input_size = 16;
  cfg.levels = {{4, 4}, {2, 4}, {1, 4}};
  cfg.stem_channels = {3, 4};
  DetectorConfig dc;
  dc.pyramid = cfg;
  dc.fusion = FusionMode::Rainbow;
  dc.layout = {{4, 4, 4}, shared};
  dc.class_names = {"disc", "square"};
  Detector<double> model(dc);
  std::mt19937_64 rng(5);
  const auto img = random_tensor({1, 3, 16, 16}, rng);
  const auto before = model.predict(img);
  GradTape<double> tape;
  const auto pred = model.forward(tape, tape.input(img), false);
  Tensor4<double> seed(tape.value(pred).shape());
  const auto offsets = level_offsets(dc.layout, cfg);
  for (std::size_t a = offsets[0]; a < offsets[1]; ++a)
    for (std::size_t t = 0; t < seed.w(); ++t) seed(0, 0, a, t) = 1.0;
  const auto grads = tape.backward(pred, seed);
  for (auto& p : model.params()) {
    if (p.name.rfind("head.", 0) != 0) continue;
    if (const auto* g = grads.of(p)) {
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= 0.1 * (*g)[i];
    }
  }
  const auto after = model.predict(img);
  std::vector<bool> changed;
  for (std::size_t l = 0; l < 3; ++l) {
    bool diff = false;
    for (std::size_t a = offsets[l]; a < offsets[l + 1]; ++a)
      for (std::size_t t = 0; t < after.w(); ++t) diff = diff || after(0, 0, a, t) != before(0, 0, a, t);
    changed.push_back(diff);
  }
  return changed;
}

}  // namespace

TEST(HeadsTest, SharedWeightsAreObservableAcrossLevels) {
  EXPECT_EQ(levels_changed_by_one_level_step(true), (std::vector<bool>{true, true, true}));
  EXPECT_EQ(levels_changed_by_one_level_step(false), (std::vector<bool>{true, false, false}));
}

TEST(HeadsTest, TiedHeadsShareUntilUntied) {
  ParamStore<double> store;
  std::mt19937_64 rng(7);
  ClassifierHeads<double> heads(std::vector<std::size_t>(3, 8), BoxLayout{{4, 4, 4}, false}, 3, store, rng);
  heads.tie();
  EXPECT_EQ(&heads.layer_for(2), &heads.layer_for(0));
  store.at("head.level0.weight").value[0] = 42;
  heads.untie();
  EXPECT_FALSE(heads.tied());
  EXPECT_EQ(store.at("head.level2.weight").value[0], 42);
  EXPECT_NE(&heads.layer_for(2), &heads.layer_for(0));
  ParamStore<double> s2;
  ClassifierHeads<double> uneven(std::vector<std::size_t>{8, 6}, BoxLayout{{4, 4}, false}, 3, s2, rng);
  EXPECT_THROW(uneven.tie(), ConfigError);
}
