#include "lts/config.hpp"

#include <gtest/gtest.h>

using lts::RunConfig;

TEST(Config, ParsesDottedKeysCommentsAndWhitespace) {
  const std::string text =
      "# a comment line\n"
      "model = convnet-s   # trailing comment\n"
      "quant.bits=2\n"
      "  lts.mode =  lts \n"
      "lts.strategy = sine\n"
      "lts.m = 0.999\n"
      "lts.warmup_epochs = 3\n"
      "train.epochs = 12\n"
      "train.batch_size = 32\n"
      "train.lr_decay_epochs = 6, 9\n"
      "opt.lr = 0.01\n"
      "data.kind = synthetic\n"
      "\n"
      "seed = 42\n";
  RunConfig c = lts::parse_config_text(text);
  EXPECT_EQ(c.model, "convnet-s");
  EXPECT_EQ(c.bits, 2);
  EXPECT_EQ(c.lts.mode, lts::RunMode::Lts);
  EXPECT_EQ(c.lts.strategy, lts::RateStrategy::Sine);
  EXPECT_DOUBLE_EQ(c.lts.m, 0.999);
  EXPECT_EQ(c.lts.warmup_epochs, 3);
  EXPECT_EQ(c.epochs, 12);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.lr_decay_epochs, (std::vector<int>{6, 9}));
  EXPECT_DOUBLE_EQ(c.lr, 0.01);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_TRUE(c.deterministic);  // default
}

TEST(Config, UnknownKeyIsRejected) {
  try {
    lts::parse_config_text("model = mlp-s\nlts.warmup = 3\n");
    FAIL() << "no exception";
  } catch (const lts::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lts.warmup"), std::string::npos) << e.what();
  }
}

TEST(Config, MissingEqualsIsRejected) {
  EXPECT_THROW(lts::parse_config_text("model mlp-s\n"), lts::ConfigError);
}

TEST(Config, TypeErrorsNameTheKey) {
  try {
    lts::parse_config_text("train.epochs = soon\n");
    FAIL() << "no exception";
  } catch (const lts::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epochs"), std::string::npos) << e.what();
  }
}

TEST(Config, ValidationCatchesBadRanges) {
  EXPECT_THROW(lts::parse_config_text("train.epochs = 0\n"), lts::ConfigError);
  EXPECT_THROW(lts::parse_config_text("opt.lr = -0.5\n"), lts::ConfigError);
  EXPECT_THROW(lts::parse_config_text("lts.m = 1.0\n"), lts::ConfigError);
  EXPECT_THROW(lts::parse_config_text("lts.c = 1.5\n"), lts::ConfigError);
  EXPECT_THROW(lts::parse_config_text("precision = 16\n"), lts::ConfigError);
  EXPECT_THROW(lts::parse_config_text("lts.mode = random\n"), lts::ConfigError)
      << "random mode requires a trajectory";
  EXPECT_THROW(lts::parse_config_text("data.kind = idx\n"), lts::ConfigError)
      << "idx needs the four container paths";
  EXPECT_THROW(
      lts::parse_config_text("lts.mode = lts\nlts.warmup_epochs = 99\ntrain.epochs = 10\n"),
      lts::ConfigError);
  // growth strategies need room after warmup; fixing does not
  EXPECT_THROW(
      lts::parse_config_text("lts.mode = lts\nlts.warmup_epochs = 10\ntrain.epochs = 10\n"),
      lts::ConfigError);
  EXPECT_NO_THROW(lts::parse_config_text(
      "lts.mode = lts\nlts.strategy = fixing\nlts.warmup_epochs = 10\ntrain.epochs = 10\n"));
}

TEST(Config, ModeAndStrategyParsing) {
  EXPECT_EQ(lts::parse_run_mode("fp"), lts::RunMode::Fp);
  EXPECT_EQ(lts::parse_run_mode("baseline"), lts::RunMode::Baseline);
  EXPECT_EQ(lts::parse_run_mode("random"), lts::RunMode::Random);
  EXPECT_THROW(lts::parse_run_mode("frozen"), lts::ConfigError);
  EXPECT_EQ(lts::parse_strategy("fixing"), lts::RateStrategy::Fixing);
  EXPECT_THROW(lts::parse_strategy("cosine"), lts::ConfigError);
}

TEST(Config, DefaultsMatchDeskScaleRecipe) {
  RunConfig c = lts::parse_config_text("model = mlp-s\n");
  EXPECT_EQ(c.epochs, 60);
  EXPECT_EQ(c.batch_size, 128u);
  EXPECT_DOUBLE_EQ(c.lr, 0.05);
  EXPECT_DOUBLE_EQ(c.momentum, 0.9);
  EXPECT_DOUBLE_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.lr_decay_epochs, (std::vector<int>{30, 45}));
  EXPECT_DOUBLE_EQ(c.lr_decay_factor, 0.1);
  EXPECT_DOUBLE_EQ(c.lts.m, 0.99);
  EXPECT_EQ(c.lts.warmup_epochs, 12);
  EXPECT_EQ(c.lts.strategy, lts::RateStrategy::Linear);
}
