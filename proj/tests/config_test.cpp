#include <gtest/gtest.h>

#include <cstdlib>

#include "tsft/config.hpp"

namespace tsft {
namespace {

using nlohmann::json;

TEST(Config, EmptyObjectTakesDefaults) {
  RunConfig c = parse_config(json::object());
  EXPECT_EQ(c.backbone, BackboneConfig{});
  EXPECT_EQ(c.task.kind, TaskKind::kClassify);
  EXPECT_EQ(c.strategy.prompt_size, 4);
  EXPECT_EQ(c.strategy.kind, StrategyKind::kGenP);
  EXPECT_EQ(c.strategy.aggregator, Aggregator::kTransformer);
}

TEST(Config, ForecastDefaultsToSixteenPrompts) {
  RunConfig c = parse_config({{"task", {{"kind", "forecast"}, {"lookback", 32}, {"horizon", 8}}}});
  EXPECT_EQ(c.strategy.prompt_size, 16);
  RunConfig d = parse_config({{"task", {{"kind", "forecast"}, {"lookback", 32}, {"horizon", 8}}}, {"strategy", {{"K", 2}}}});
  EXPECT_EQ(d.strategy.prompt_size, 2);
}

TEST(Config, ForecastNeedsLookbackAndHorizon) {
  EXPECT_THROW(parse_config({{"task", {{"kind", "forecast"}, {"horizon", 8}}}}), std::invalid_argument);
  EXPECT_THROW(parse_config({{"task", {{"kind", "forecast"}, {"lookback", 8}}}}), std::invalid_argument);
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  EXPECT_THROW(parse_config({{"bogus", 1}}), std::invalid_argument);
  EXPECT_THROW(parse_config({{"backbone", {{"width", 3}}}}), std::invalid_argument);
  EXPECT_THROW(parse_config({{"strategy", {{"rank", 3}}}}), std::invalid_argument);
  EXPECT_THROW(parse_config({{"train", {{"momentum", 0.9}}}}), std::invalid_argument);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(parse_config({{"strategy", {{"kind", "adapter"}}}}), std::invalid_argument);
  EXPECT_THROW(parse_config({{"strategy", {{"K", -1}}}}), std::invalid_argument);
  EXPECT_THROW(parse_config({{"backbone", {{"d_model", 10}, {"n_heads", 4}}}}), std::invalid_argument);
  EXPECT_THROW(parse_config({{"data", {{"source", "weather"}}}}), std::invalid_argument);
}

TEST(Config, JsonRoundTripAndHash) {
  RunConfig c = parse_config({{"backbone", {{"d_model", 32}}}, {"strategy", {{"kind", "lora"}, {"lora_rank", 2}}}});
  RunConfig back = parse_config(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
  RunConfig other = c;
  other.train.epochs += 1;
  EXPECT_NE(config_hash(other), config_hash(c));
}

TEST(Config, SeedOverrideFromEnvironment) {
  RunConfig c = parse_config({{"data", {{"seed", 3}}}});
  ::setenv("TSFT_SEED", "17", 1);
  apply_env_overrides(c);
  EXPECT_EQ(c.data.seed, 17u);
  ::setenv("TSFT_SEED", "12abc", 1);
  EXPECT_THROW(apply_env_overrides(c), std::invalid_argument);
  ::unsetenv("TSFT_SEED");
  RunConfig d = parse_config({{"data", {{"seed", 3}}}});
  apply_env_overrides(d);
  EXPECT_EQ(d.data.seed, 3u);
}

TEST(Config, PreparedChannelMixDataMatchesConfig) {
  RunConfig c = parse_config({{"data", {{"n_samples", 50}, {"channels", 3}, {"length", 24}}}});
  PreparedData p = prepare_data(c);
  EXPECT_EQ(p.split.train.size() + p.split.val.size() + p.split.test.size(), 50u);
  EXPECT_EQ(p.task.channels, 3);
  EXPECT_EQ(p.task.labels, 1);
  EXPECT_EQ(p.split.train[0].x.cols(), 24);
}

TEST(Config, PreparedForecastDataIsWindowed) {
  RunConfig c = parse_config({{"data", {{"source", "forecast"}, {"n_samples", 2}, {"channels", 2}, {"length", 40}}},
                              {"task", {{"kind", "forecast"}, {"lookback", 16}, {"horizon", 4}, {"window_stride", 4}}}});
  PreparedData p = prepare_data(c);
  ASSERT_FALSE(p.split.train.empty());
  EXPECT_EQ(p.split.train[0].x.cols(), 16);
  EXPECT_EQ(p.split.train[0].y.cols(), 4);
  EXPECT_EQ(p.task.patches, 2);
}

}  // namespace
}  // namespace tsft
