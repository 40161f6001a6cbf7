#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pacbayes/errors.hpp"
#include "pacbayes/trainer.hpp"
#include "test_support.hpp"

using namespace pacbayes;

namespace {

LabeledDataset easy_data(std::uint64_t seed, std::size_t per_class = 30) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.dim = 6;
  spec.samples_per_class = per_class;
  spec.cluster_separation = 6.0;
  spec.noise_std = 0.5;
  spec.seed = seed;
  return normalize(make_synthetic(spec));
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  // bias correction makes the first step lr * g / (|g| + eps)
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  std::vector<double> theta{1.0, -2.0, 0.5};
  const std::vector<double> grad{4.0, -0.25, 0.0};
  AdamState st(3);
  adam_step(theta, grad, st, cfg);
  EXPECT_NEAR(theta[0], 1.0 - 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_NEAR(theta[1], -2.0 + 0.1 * 0.25 / (0.25 + 1e-8), 1e-15);
  EXPECT_EQ(theta[2], 0.5);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, TwoStepsByHand) {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.beta1 = 0.5;
  cfg.beta2 = 0.75;
  cfg.epsilon = 0.0 + 1e-12;
  std::vector<double> theta{0.0};
  AdamState st(1);
  adam_step(theta, std::vector<double>{2.0}, st, cfg);
  adam_step(theta, std::vector<double>{-1.0}, st, cfg);
  // m2 = 0.5*1 + 0.5*(-1) = 0, so the second step does not move
  const double m1 = 1.0, v1 = 1.0;
  const double first = -0.01 * (m1 / 0.5) / (std::sqrt(v1 / 0.25) + 1e-12);
  EXPECT_NEAR(theta[0], first, 1e-15);
}

TEST(Adam, NonFiniteGradientThrowsWithStep) {
  TrainConfig cfg;
  std::vector<double> theta{1.0, 2.0};
  AdamState st(2);
  adam_step(theta, std::vector<double>{0.1, 0.1}, st, cfg);
  try {
    adam_step(theta, std::vector<double>{std::nan(""), 0.1}, st, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.step(), 2u);
  }
  EXPECT_THROW(adam_step(theta, std::vector<double>{std::numeric_limits<double>::infinity(), 0.0}, st, cfg),
               TrainingError);
  EXPECT_THROW(adam_step(theta, std::vector<double>{1.0}, st, cfg), ArgumentError);
}

TEST(Train, LearnsSeparableData) {
  const auto data = easy_data(1);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 16;
  cfg.epochs = 60;
  cfg.seed = 3;
  const std::vector<std::size_t> widths{6, 16, 3};
  const auto init = initial_params(widths, cfg);
  const double before = mean_loss(init, data);
  const auto res = train(init, data, cfg);
  ASSERT_EQ(res.history.mean_loss.size(), 60u);
  EXPECT_LT(res.history.mean_loss.back(), 0.25 * before);
  EXPECT_EQ(res.history.train_error.back(), 0.0);
  EXPECT_DOUBLE_EQ(res.history.mean_loss.back(), mean_loss(res.params, data));
}

TEST(Train, DeterministicInSeed) {
  const auto data = easy_data(2);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 7;
  cfg.seed = 11;
  const std::vector<std::size_t> widths{6, 8, 3};
  const auto init = initial_params(widths, cfg);
  EXPECT_TRUE(train(init, data, cfg).params == train(init, data, cfg).params);
  TrainConfig other = cfg;
  other.seed = 12;
  EXPECT_FALSE(train(init, data, cfg).params == train(init, data, other).params);
}

TEST(Train, ZeroEpochsReturnsInit) {
  const auto data = easy_data(2);
  TrainConfig cfg;
  const std::vector<std::size_t> widths{6, 8, 3};
  const auto init = initial_params(widths, cfg);
  const auto res = train(init, data, cfg);
  EXPECT_TRUE(res.params == init);
  EXPECT_TRUE(res.history.mean_loss.empty());
}

TEST(Train, BatchLargerThanDataset) {
  const auto data = easy_data(2, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 1000;
  const std::vector<std::size_t> widths{6, 8, 3};
  const auto res = train(initial_params(widths, cfg), data, cfg);
  EXPECT_EQ(res.history.mean_loss.size(), 3u);
}

TEST(Train, StopsAtZeroError) {
  const auto data = easy_data(4);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 16;
  cfg.epochs = 500;
  cfg.stop_at_zero_error = true;
  const std::vector<std::size_t> widths{6, 16, 3};
  const auto res = train(initial_params(widths, cfg), data, cfg);
  ASSERT_FALSE(res.history.train_error.empty());
  EXPECT_LT(res.history.train_error.size(), 500u);
  EXPECT_EQ(res.history.train_error.back(), 0.0);
  for (std::size_t e = 0; e + 1 < res.history.train_error.size(); ++e) EXPECT_GT(res.history.train_error[e], 0.0);
}

TEST(Train, DivergenceIsTrainingError) {
  const auto data = easy_data(5);
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  cfg.epochs = 5;
  const std::vector<std::size_t> widths{6, 8, 3};
  EXPECT_THROW(train(initial_params(widths, cfg), data, cfg), TrainingError);
}

TEST(Train, Validation) {
  const auto data = easy_data(5);
  TrainConfig cfg;
  cfg.epochs = 1;
  const std::vector<std::size_t> wrong_in{5, 8, 3};
  EXPECT_THROW(train(initial_params(wrong_in, cfg), data, cfg), ArgumentError);
  const std::vector<std::size_t> wrong_out{6, 8, 4};
  EXPECT_THROW(train(initial_params(wrong_out, cfg), data, cfg), ArgumentError);
  TrainConfig bad = cfg;
  bad.learning_rate = 0.0;
  const std::vector<std::size_t> widths{6, 8, 3};
  EXPECT_THROW(train(initial_params(widths, cfg), data, bad), ArgumentError);
  bad = cfg;
  bad.batch_size = 0;
  EXPECT_THROW(train(initial_params(widths, cfg), data, bad), ArgumentError);
}

TEST(ErrorRate, CountsArgmaxMistakes) {
  MlpParams p;
  p.layers = {Matrix::identity(2), Matrix::identity(2)};
  LabeledDataset ds;
  ds.features = Matrix(4, 2);
  ds.features(0, 0) = 1;  // predicts 0
  ds.features(1, 1) = 1;  // predicts 1
  ds.features(2, 0) = 1;
  ds.features(3, 1) = 1;
  ds.labels = {0, 1, 1, 1};
  ds.num_classes = 2;
  EXPECT_DOUBLE_EQ(error_rate(p, ds), 0.25);
}
