#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "xdet/error.hpp"
#include "xdet/reward.hpp"

namespace xdet {
namespace {

ImageRecord fake_with(std::vector<BoundingBox> boxes) {
  ImageRecord r;
  r.id = "f";
  r.width = 100;
  r.height = 100;
  r.label = Label::fake;
  r.generator = "SD 1.4";
  for (const auto& b : boxes) r.regions.push_back({b, "flaw"});
  return r;
}

std::string answer(Verdict v, std::vector<BoundingBox> boxes) {
  ParsedOutput p;
  p.verdict = v;
  for (const auto& b : boxes) p.regions.push_back({b, "flaw"});
  return render_structured(p);
}

TEST(Stages, TableValues) {
  const auto a = alpha_stage();
  EXPECT_EQ(a.r_base, 0.0);
  EXPECT_EQ(a.iou_weight, 1.0);
  EXPECT_EQ(a.label_pos, 1.0);
  EXPECT_EQ(a.label_neg, -1.0);
  EXPECT_EQ(a.format_pos, 2.0);
  EXPECT_EQ(a.format_neg, -1.0);
  const auto b = beta_stage();
  EXPECT_EQ(b.r_base, -0.5);
  EXPECT_EQ(b.iou_weight, 1.5);
  EXPECT_EQ(b.label_pos, 2.0);
  EXPECT_EQ(b.label_neg, -2.0);
  EXPECT_EQ(b.format_pos, 1.0);
  EXPECT_EQ(b.format_neg, -1.5);
  const auto g = gamma_stage();
  EXPECT_EQ(g.r_base, -1.0);
  EXPECT_EQ(g.iou_weight, 2.0);
  EXPECT_EQ(g.label_pos, 0.5);
  EXPECT_EQ(g.label_neg, -1.0);
  EXPECT_EQ(g.format_pos, 0.5);
  EXPECT_EQ(g.format_neg, -1.0);
  for (const auto& s : {a, b, g}) EXPECT_EQ(s.eta, 1.1);
}

TEST(Stages, JsonAndResolve) {
  EXPECT_EQ(builtin_stage("beta"), beta_stage());
  EXPECT_FALSE(builtin_stage("delta").has_value());
  EXPECT_EQ(stage_from_json(to_json(gamma_stage())), gamma_stage());
  const auto custom = stage_from_json(nlohmann::json{{"name", "alpha"}, {"label_pos", 3.0}});
  EXPECT_EQ(custom.name, StageName::custom);
  EXPECT_EQ(custom.label_pos, 3.0);
  EXPECT_EQ(custom.format_pos, 2.0);
  EXPECT_THROW(stage_from_json(nlohmann::json{{"name", "alpha"}, {"eta", 0.9}}), Error);
  EXPECT_THROW(stage_from_json(nlohmann::json{{"name", "alpha"}, {"iou_weight", -1}}), Error);
  EXPECT_EQ(resolve_stage("alpha"), alpha_stage());
  EXPECT_THROW(resolve_stage("/nonexistent/stage.json"), Error);
}

TEST(RelaxedIou, ClipBoundary) {
  EXPECT_EQ(relax_iou(10.0 / 11.0, 1.1), 1.0);
  EXPECT_LT(relax_iou(10.0 / 11.0 - 1e-6, 1.1), 1.0);
  EXPECT_DOUBLE_EQ(relax_iou(0.5, 1.1), 0.55);
  EXPECT_EQ(relax_iou(1.0, 1.1), 1.0);
}

TEST(RelaxedIou, MonotoneAndClipped) {
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double v = relax_iou(i / 1000.0, 1.1);
    ASSERT_GE(v, prev);
    ASSERT_LE(v, 1.0);
    prev = v;
  }
}

TEST(RelaxedIou, OverBoxSets) {
  const std::vector<BoundingBox> pred{{0, 0, 10, 10}};
  const std::vector<BoundingBox> ref{{0, 0, 10, 20}};
  EXPECT_DOUBLE_EQ(relaxed_iou(pred, ref, 1.1), 0.55);
}

TEST(LabelReward, Cases) {
  EXPECT_EQ(label_reward(Verdict::generated, Label::fake, alpha_stage()), 1.0);
  EXPECT_EQ(label_reward(Verdict::real, Label::fake, beta_stage()), -2.0);
  EXPECT_EQ(label_reward(std::nullopt, Label::real, gamma_stage()), -1.0);
}

TEST(FormatReward, Cases) {
  const std::string valid = answer(Verdict::real, {});
  EXPECT_EQ(format_reward(valid, alpha_stage()).value, 2.0);
  EXPECT_TRUE(format_reward(valid, alpha_stage()).parse_ok);
  EXPECT_EQ(format_reward("garbage", beta_stage()).value, -1.5);
  EXPECT_FALSE(format_reward("garbage", beta_stage()).parse_ok);
  EXPECT_EQ(format_reward(valid, gamma_stage()).value, 0.5);
}

TEST(CompositeReward, AlphaAtHalfIou) {
  const auto r = composite_reward(answer(Verdict::generated, {{0, 0, 10, 10}}),
                                  fake_with({{0, 0, 10, 20}}), alpha_stage());
  EXPECT_TRUE(r.parse_ok);
  EXPECT_DOUBLE_EQ(r.raw_iou, 0.5);
  EXPECT_NEAR(r.total, 3.55, 1e-12);
  EXPECT_EQ(r.total, r.base + r.grounding + r.label + r.format);
}

TEST(CompositeReward, GammaAtFullIou) {
  const std::vector<BoundingBox> boxes{{5, 5, 50, 60}};
  const auto r = composite_reward(answer(Verdict::generated, boxes), fake_with(boxes), gamma_stage());
  EXPECT_NEAR(r.total, 2.0, 1e-12);
}

TEST(CompositeReward, GammaZeroPoint) {
  const auto r = composite_reward(answer(Verdict::generated, {{60, 60, 70, 70}}),
                                  fake_with({{0, 0, 10, 10}}), gamma_stage());
  EXPECT_EQ(r.raw_iou, 0.0);
  EXPECT_NEAR(r.total, 0.0, 1e-12);
}

TEST(CompositeReward, GammaWorstCase) {
  const auto r = composite_reward("<think>", fake_with({{0, 0, 10, 10}}), gamma_stage());
  EXPECT_FALSE(r.parse_ok);
  EXPECT_EQ(r.grounding, 0.0);
  EXPECT_EQ(r.total, -3.0);
}

TEST(CompositeReward, RealRecordHasNoGrounding) {
  ImageRecord real;
  real.id = "r";
  real.width = real.height = 100;
  const auto r = composite_reward(answer(Verdict::real, {{0, 0, 10, 10}}), real, alpha_stage());
  EXPECT_EQ(r.grounding, 0.0);
  EXPECT_EQ(r.total, 3.0);
  EXPECT_FALSE(r.empty_reference);
}

TEST(CompositeReward, EmptyReferenceFlagged) {
  const auto r = composite_reward(answer(Verdict::generated, {{0, 0, 10, 10}}), fake_with({}),
                                  alpha_stage());
  EXPECT_TRUE(r.empty_reference);
  EXPECT_EQ(r.grounding, 0.0);
  EXPECT_EQ(r.total, 3.0);
}

TEST(RewardProperty, TotalIsSumOfParts) {
  Rng rng(61);
  const StageConfig stages[] = {alpha_stage(), beta_stage(), gamma_stage()};
  for (int i = 0; i < 500; ++i) {
    auto rec = testing::random_record(rng, "x");
    auto p = testing::random_parsed(rng);
    std::string text = render_structured(p);
    if (rng.bernoulli(0.2)) text.erase(text.size() / 2);
    const auto& stage = stages[rng.uniform_index(3)];
    const auto r = composite_reward(text, rec, stage);
    ASSERT_EQ(r.total, r.base + r.grounding + r.label + r.format);
    ASSERT_GE(r.grounding, 0.0);
    ASSERT_LE(r.grounding, stage.iou_weight);
    if (!r.parse_ok) {
      ASSERT_EQ(r.grounding, 0.0);
      ASSERT_EQ(r.label, stage.label_neg);
    }
  }
}

TEST(ScoreOutputs, MatchesDirectCalls) {
  const auto rec = fake_with({{0, 0, 10, 20}});
  std::istringstream in(nlohmann::json{{"id", "f"}, {"text", answer(Verdict::generated, {{0, 0, 10, 10}})}}.dump() + "\n");
  const auto outputs = read_outputs(in);
  const auto scored = score_outputs(outputs, {rec}, alpha_stage());
  ASSERT_EQ(scored.size(), 1u);
  EXPECT_EQ(scored[0].reward, composite_reward(outputs[0].text, rec, alpha_stage()));
  EXPECT_THROW(score_outputs({{"missing", "x"}}, {rec}, alpha_stage()), Error);
}

}  // namespace
}  // namespace xdet
