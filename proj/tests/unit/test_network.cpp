#include <gtest/gtest.h>

#include <cmath>

#include "pacbayes/errors.hpp"
#include "pacbayes/loss.hpp"
#include "pacbayes/network.hpp"
#include "test_support.hpp"

using namespace pacbayes;
using testing_support::gaussian_vector;
using testing_support::random_net;
using testing_support::rel_err;

TEST(Params, FlattenRoundTripAndLayout) {
  const std::vector<std::size_t> widths{3, 4, 2};
  const auto net = random_net(widths, 1);
  EXPECT_EQ(net.num_params(), 3u * 4u + 4u * 2u);
  EXPECT_EQ(net.widths(), widths);
  EXPECT_EQ(net.layer_offset(1), 12u);
  const auto theta = net.flatten();
  EXPECT_EQ(theta[0], net.layers[0](0, 0));
  EXPECT_EQ(theta[1], net.layers[0](0, 1));
  EXPECT_EQ(theta[12 + 5], net.layers[1](1, 1));
  EXPECT_TRUE(MlpParams::unflatten(widths, theta) == net);
}

TEST(Params, ValidateRejectsBrokenChains) {
  MlpParams p;
  p.layers = {Matrix(4, 3), Matrix(2, 5)};
  EXPECT_THROW(p.validate(), ArgumentError);
  p.layers = {Matrix(4, 3)};
  EXPECT_THROW(p.validate(), ArgumentError);
}

TEST(Forward, HandComputedTwoLayer) {
  MlpParams p;
  p.layers = {Matrix(2, 2), Matrix(1, 2)};
  p.layers[0](0, 0) = 1;
  p.layers[0](0, 1) = -1;
  p.layers[0](1, 0) = 2;
  p.layers[0](1, 1) = 1;
  p.layers[1](0, 0) = 3;
  p.layers[1](0, 1) = -2;
  const std::vector<double> x{1.0, 2.0};
  // hidden pre-activation (-1, 4) -> relu (0, 4) -> output -8
  const auto out = forward(p, x);
  EXPECT_EQ(out.logits, std::vector<double>{-8.0});
  EXPECT_EQ(out.pre_activations[0], (std::vector<double>{-1.0, 4.0}));
  EXPECT_EQ(activation_mask(p, x).layers[0], (std::vector<std::uint8_t>{0, 1}));
}

TEST(Forward, ZeroPreActivationIsInactive) {
  MlpParams p;
  p.layers = {Matrix(1, 1), Matrix(1, 1)};
  p.layers[0](0, 0) = 0.0;
  p.layers[1](0, 0) = 1.0;
  const std::vector<double> x{1.0};
  EXPECT_EQ(activation_mask(p, x).layers[0][0], 0);
}

TEST(Forward, RealizedLinearMatchesBitwise) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const std::vector<std::size_t> widths{5, 7, 6, 3};
    const auto net = random_net(widths, s);
    const auto x = gaussian_vector(5, 100 + s);
    EXPECT_EQ(forward(net, x).logits, realized_linear_forward(net, activation_mask(net, x), x));
  }
}

TEST(Forward, RealizedLinearWithForeignMaskDiffers) {
  const std::vector<std::size_t> widths{4, 8, 3};
  const auto net = random_net(widths, 3);
  const auto x = gaussian_vector(4, 4);
  auto mask = activation_mask(net, x);
  for (auto& b : mask.layers[0]) b = 1;
  // all-on mask gives the linear network W2 W1 x
  const auto lin = realized_linear_forward(net, mask, x);
  std::vector<double> h(8), expect(3);
  matvec(net.layers[0], x, h);
  matvec(net.layers[1], h, expect);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(lin[i], expect[i], 1e-12);
}

TEST(Forward, Homogeneity) {
  for (std::size_t depth = 2; depth <= 4; ++depth) {
    std::vector<std::size_t> widths{4};
    for (std::size_t h = 1; h < depth; ++h) widths.push_back(6);
    widths.push_back(3);
    const auto net = random_net(widths, depth);
    const auto x = gaussian_vector(4, 9);
    const auto base = logits(net, x);
    for (double lambda : {0.5, 2.0, 3.0}) {
      const auto scaled = logits(scale_params(net, lambda), x);
      for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_LE(rel_err(scaled[i], std::pow(lambda, static_cast<double>(depth)) * base[i]), 1e-12);
      }
    }
  }
  const std::vector<std::size_t> w{2, 2, 2};
  EXPECT_THROW(scale_params(random_net(w, 1), 0.0), ArgumentError);
  EXPECT_THROW(scale_params(random_net(w, 1), -1.0), ArgumentError);
}

TEST(Jacobian, MatchesCentralDifferences) {
  const std::vector<std::size_t> widths{3, 5, 4, 2};
  const auto net = random_net(widths, 21);
  const auto x = gaussian_vector(3, 22);
  const auto jac = output_jacobian(net, x);
  const auto theta = net.flatten();
  const double h = 1e-6;
  ASSERT_EQ(jac.rows(), 2u);
  ASSERT_EQ(jac.cols(), theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    auto tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    const auto np = MlpParams::unflatten(widths, tp);
    const auto nm = MlpParams::unflatten(widths, tm);
    if (!(activation_mask(np, x) == activation_mask(nm, x))) continue;
    const auto lp = logits(np, x), lm = logits(nm, x);
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_NEAR(jac(c, j), (lp[c] - lm[c]) / (2 * h), 1e-7) << "c=" << c << " j=" << j;
    }
  }
}

TEST(Jacobian, LinearInOwnLayerWeights) {
  // each logit is linear in one weight once the mask is fixed:
  // J[c, j] * theta_j summed over the last layer equals the logit
  const std::vector<std::size_t> widths{3, 6, 2};
  const auto net = random_net(widths, 5);
  const auto x = gaussian_vector(3, 6);
  const auto jac = output_jacobian(net, x);
  const auto theta = net.flatten();
  const auto z = logits(net, x);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t j = net.layer_offset(1); j < theta.size(); ++j) s += jac(c, j) * theta[j];
    EXPECT_NEAR(s, z[c], 1e-12);
  }
}

TEST(LossGradient, MatchesCentralDifferences) {
  const std::vector<std::size_t> widths{4, 6, 3};
  const auto net = random_net(widths, 31);
  const auto ds = testing_support::gaussian_dataset(8, 4, 3, 32);
  const auto grad = loss_gradient(net, ds.features, ds.labels);
  const auto theta = net.flatten();
  auto mean_ce = [&](const MlpParams& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) s += cross_entropy(logits(p, ds.features.row(i)), ds.labels[i]).loss;
    return s / static_cast<double>(ds.size());
  };
  const double h = 1e-6;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    auto tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    EXPECT_NEAR(grad[j], (mean_ce(MlpParams::unflatten(widths, tp)) - mean_ce(MlpParams::unflatten(widths, tm))) / (2 * h),
                1e-6);
  }
}

TEST(LossGradient, RowsVariantAgrees) {
  const std::vector<std::size_t> widths{4, 6, 3};
  const auto net = random_net(widths, 31);
  const auto ds = testing_support::gaussian_dataset(10, 4, 3, 32);
  const std::vector<std::size_t> rows{7, 2, 5};
  double loss = 0.0;
  const auto g = loss_gradient_rows(net, ds.features, ds.labels, rows, &loss);
  const auto sub = ds.select(rows);
  const auto g2 = loss_gradient(net, sub.features, sub.labels);
  for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(g[j], g2[j], 1e-14);
  double expect = 0.0;
  for (auto r : rows) expect += cross_entropy(logits(net, ds.features.row(r)), ds.labels[r]).loss;
  EXPECT_NEAR(loss, expect, 1e-12);
}

TEST(CrossEntropy, StableForLargeLogits) {
  const std::vector<double> z{1000.0, 0.0, -1000.0};
  const auto ce = cross_entropy(z, 0);
  EXPECT_NEAR(ce.loss, 0.0, 1e-300);
  EXPECT_NEAR(cross_entropy(z, 1).loss, 1000.0, 1e-9);
  double s = 0.0;
  for (double p : ce.probs) s += p;
  EXPECT_NEAR(s, 1.0, 1e-15);
  const std::vector<double> tie{1.0, 1.0};
  EXPECT_EQ(argmax(tie), 0u);
  EXPECT_NEAR(cross_entropy(tie, 1).loss, std::log(2.0), 1e-15);
}

TEST(EdgeMask, Layouts) {
  MlpParams p;
  p.layers = {Matrix(2, 3), Matrix(2, 2)};
  ActivationMask m;
  m.layers = {{1, 0}};
  const auto rows = edge_mask(p, m, EdgeMaskLayout::kIncomingRows);
  const auto cols = edge_mask(p, m, EdgeMaskLayout::kOutgoingColumns);
  // layer 1 is 2x3: rows layout masks row 1, columns layout leaves it on
  EXPECT_EQ(rows, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 1, 1, 1, 1}));
  // layer 2 is 2x2: columns layout masks column 1
  EXPECT_EQ(cols, (std::vector<std::uint8_t>{1, 1, 1, 1, 1, 1, 1, 0, 1, 0}));
}

TEST(EdgeMask, ColumnLayoutReproducesForward) {
  // the realized network with theta (.) edge mask, all units on, gives the
  // same logits as the ReLU network
  const std::vector<std::size_t> widths{3, 5, 4, 2};
  const auto net = random_net(widths, 7);
  const auto x = gaussian_vector(3, 8);
  const auto mask = activation_mask(net, x);
  for (auto layout : {EdgeMaskLayout::kIncomingRows, EdgeMaskLayout::kOutgoingColumns}) {
    const auto bits = edge_mask(net, mask, layout);
    auto theta = net.flatten();
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] *= bits[j];
    ActivationMask all = mask;
    for (auto& l : all.layers)
      for (auto& b : l) b = 1;
    const auto z = realized_linear_forward(MlpParams::unflatten(widths, theta), all, x);
    const auto ref = logits(net, x);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(z[c], ref[c], 1e-12);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const std::vector<std::size_t> widths{5, 3, 4, 2};
  const auto net = random_net(widths, 77);
  const auto bytes = encode_checkpoint(net);
  EXPECT_EQ(bytes.size(), 4u + 4u + 4u + 4u * 4u + 8u * net.num_params());
  EXPECT_EQ(bytes[0], 'P');
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(bytes[12], 5);
  EXPECT_TRUE(decode_checkpoint(bytes) == net);

  testing_support::TempDir dir;
  write_checkpoint(dir.path() / "c.ckpt", net);
  EXPECT_TRUE(read_checkpoint(dir.path() / "c.ckpt") == net);
}

TEST(Checkpoint, CorruptInputs) {
  const std::vector<std::size_t> widths{2, 3, 2};
  auto bytes = encode_checkpoint(random_net(widths, 1));
  auto bad_tag = bytes;
  bad_tag[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_tag), DataError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), DataError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), DataError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), DataError);
  EXPECT_THROW(read_checkpoint("/nonexistent/dir/x.ckpt"), DataError);
}

TEST(Init, ScaleAndDeterminism) {
  const std::vector<std::size_t> widths{400, 300, 2};
  const auto a = init_gaussian(widths, 2.0, 5);
  EXPECT_TRUE(a == init_gaussian(widths, 2.0, 5));
  double ss = 0.0;
  for (double v : a.layers[0].values()) ss += v * v;
  // variance (2 / sqrt(400))^2 = 0.01
  EXPECT_NEAR(ss / 120000.0, 0.01, 0.0005);
}
