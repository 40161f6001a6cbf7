#include <gtest/gtest.h>

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "pacbayes/bound.hpp"
#include "pacbayes/errors.hpp"
#include "pacbayes/loss.hpp"
#include "pacbayes/serial.hpp"
#include "pacbayes/trainer.hpp"
#include "test_support.hpp"

using namespace pacbayes;
using testing_support::gaussian_dataset;
using testing_support::gaussian_vector;
using testing_support::random_net;
using testing_support::rel_err;

namespace {

double mean_ce(const MlpParams& p, const LabeledDataset& ds) {
  double s = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) s += cross_entropy(logits(p, ds.features.row(i)), ds.labels[i]).loss;
  return s / static_cast<double>(ds.size());
}

bool same_masks(const MlpParams& a, const MlpParams& b, const LabeledDataset& ds) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!(activation_mask(a, ds.features.row(i)) == activation_mask(b, ds.features.row(i)))) return false;
  }
  return true;
}

// Simpson's rule for KL(N(m1, v1) || N(m2, v2)) in one dimension.
double kl_numeric_1d(double m1, double v1, double m2, double v2) {
  const double s1 = std::sqrt(v1);
  const double lo = m1 - 14 * s1, hi = m1 + 14 * s1;
  const int steps = 20000;
  const double h = (hi - lo) / steps;
  auto f = [&](double x) {
    const double lq = -0.5 * std::log(2 * M_PI * v1) - (x - m1) * (x - m1) / (2 * v1);
    const double lp = -0.5 * std::log(2 * M_PI * v2) - (x - m2) * (x - m2) / (2 * v2);
    return std::exp(lq) * (lq - lp);
  };
  double s = f(lo) + f(hi);
  for (int i = 1; i < steps; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

LabeledDataset trained_setup(MlpParams& net, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.dim = 5;
  spec.samples_per_class = 20;
  spec.seed = seed;
  auto ds = normalize(make_synthetic(spec));
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.seed = seed;
  const std::vector<std::size_t> widths{5, 12, 3};
  net = train(initial_params(widths, cfg), ds, cfg).params;
  return ds;
}

}  // namespace

TEST(FastRate, TableValues) {
  const double etas[] = {0.5, 0.25, 0.1, 0.05};
  const double a[] = {1.39, 1.85, 2.56, 3.15};
  const double b[] = {2.0, 1.33, 1.11, 1.05};
  for (int i = 0; i < 4; ++i) {
    const auto c = fast_rate_constants(etas[i], 2);
    EXPECT_EQ(std::round(c.a * 100) / 100, a[i]);
    EXPECT_EQ(std::round(c.b * 100) / 100, b[i]);
    EXPECT_DOUBLE_EQ(c.d, 6.0 * (c.a + 1.0));
  }
  EXPECT_DOUBLE_EQ(fast_rate_constants(0.5, 10, TailVariant::kMultiClassSmooth).d, 10.0 * (2.0 * std::log(2.0) + 1.0));
  EXPECT_THROW(fast_rate_constants(0.0, 2), ArgumentError);
  EXPECT_THROW(fast_rate_constants(1.0, 2), ArgumentError);
}

TEST(FastRate, MonotoneInEta) {
  double prev_a = 0.0, prev_b = 1e9;
  for (double eta = 0.95; eta > 0.01; eta -= 0.05) {
    const auto c = fast_rate_constants(eta, 2);
    EXPECT_GT(c.a, prev_a);
    EXPECT_LT(c.b, prev_b);
    prev_a = c.a;
    prev_b = c.b;
  }
}

TEST(Margins, HandComputed) {
  MlpParams p;
  p.layers = {Matrix::identity(3), Matrix::identity(3)};
  LabeledDataset ds;
  ds.features = Matrix(3, 3);
  ds.features(0, 0) = 3;
  ds.features(0, 1) = 1;  // margin 2
  ds.features(1, 1) = 1;
  ds.features(1, 2) = 1;  // label 1, margin 0
  ds.features(2, 0) = 1;  // label 2, margin -1
  ds.labels = {0, 1, 2};
  ds.num_classes = 3;
  EXPECT_EQ(margins(p, ds), (std::vector<double>{2.0, 0.0, -1.0}));
  EXPECT_DOUBLE_EQ(margin_loss(p, ds, 0.0), 2.0 / 3.0);  // ties count as losses
  EXPECT_DOUBLE_EQ(margin_loss(p, ds, -1.5), 0.0);
  EXPECT_DOUBLE_EQ(margin_loss(p, ds, 2.0), 1.0);
  EXPECT_EQ(serial::margins(p, ds), margins(p, ds));
}

TEST(Margins, CurveNondecreasingWithEndpoints) {
  MlpParams net;
  const auto ds = trained_setup(net, 3);
  const auto m = margins(net, ds);
  const double lo = *std::min_element(m.begin(), m.end()) - 1.0;
  const double hi = *std::max_element(m.begin(), m.end()) + 1.0;
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(lo + (hi - lo) * i / 100.0);
  const auto curve = margin_curve(net, ds, grid);
  EXPECT_EQ(curve.front().second, 0.0);
  EXPECT_EQ(curve.back().second, 1.0);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i].second, curve[i - 1].second);
  for (const auto& [g, v] : curve) EXPECT_EQ(v, margin_loss(net, ds, g));
  std::vector<double> unsorted{1.0, 0.0};
  EXPECT_THROW(margin_curve(net, ds, unsorted), ArgumentError);
}

TEST(Margins, ScaleInvariance) {
  const std::vector<std::size_t> widths{4, 6, 5, 3};
  const auto net = random_net(widths, 8);
  const auto ds = gaussian_dataset(40, 4, 3, 9);
  for (double lambda : {0.5, 2.0, 4.0}) {
    const auto scaled = scale_params(net, lambda);
    for (double gamma : {0.0, 0.1, 0.3, 1.0}) {
      EXPECT_EQ(margin_loss(scaled, ds, lambda * lambda * lambda * gamma), margin_loss(net, ds, gamma));
    }
  }
}

TEST(Margins, SerialAgreesWithParallel) {
  const std::vector<std::size_t> widths{4, 6, 3};
  const auto net = random_net(widths, 8);
  const auto ds = gaussian_dataset(200, 4, 3, 9);
  EXPECT_EQ(serial::margin_loss(net, ds, 0.2), margin_loss(net, ds, 0.2));
}

TEST(Hessian, MatchesSecondDifferences) {
  const std::vector<std::size_t> widths{4, 8, 3};
  const auto net = random_net(widths, 12);
  const auto ds = gaussian_dataset(20, 4, 3, 13);
  const auto h = hessian_diag(net, ds);
  const auto theta = net.flatten();
  const double step = 1e-3;
  const double base = mean_ce(net, ds);
  std::size_t checked = 0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    auto tp = theta, tm = theta;
    tp[j] += step;
    tm[j] -= step;
    const auto np = MlpParams::unflatten(widths, tp), nm = MlpParams::unflatten(widths, tm);
    if (!same_masks(np, net, ds) || !same_masks(nm, net, ds)) continue;
    const double fd = (mean_ce(np, ds) - 2.0 * base + mean_ce(nm, ds)) / (step * step);
    EXPECT_LE(rel_err(h[j], fd), 1e-4) << "j=" << j << " h=" << h[j] << " fd=" << fd;
    ++checked;
  }
  EXPECT_GT(checked, theta.size() / 2);
}

TEST(Hessian, GaussNewtonFormByHand) {
  // one sample, 2-2-2 identity-ish net: H[j] = sum_c p_c (g_c - gbar)^2
  const std::vector<std::size_t> widths{2, 2, 2};
  const auto net = random_net(widths, 4);
  const auto ds = gaussian_dataset(1, 2, 2, 5);
  const auto x = ds.features.row(0);
  const auto jac = output_jacobian(net, x);
  const auto probs = cross_entropy(logits(net, x), ds.labels[0]).probs;
  const auto h = hessian_diag(net, ds);
  for (std::size_t j = 0; j < h.size(); ++j) {
    // for two classes the variance is p0 p1 (g0 - g1)^2
    const double d = jac(0, j) - jac(1, j);
    EXPECT_NEAR(h[j], probs[0] * probs[1] * d * d, 1e-15);
  }
}

TEST(Hessian, ThreadCountInvariantAndSerialAgrees) {
  const std::vector<std::size_t> widths{6, 10, 3};
  const auto net = random_net(widths, 21);
  const auto ds = gaussian_dataset(333, 6, 3, 22);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = hessian_diag(net, ds);
  omp_set_num_threads(4);
  const auto four = hessian_diag(net, ds);
  omp_set_num_threads(saved);
  EXPECT_EQ(one, four);
  const auto ref = serial::hessian_diag(net, ds);
  const double scale = *std::max_element(ref.begin(), ref.end());
  for (std::size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(one[j], ref[j], 1e-12 * scale);
}

TEST(Hessian, NonNegative) {
  MlpParams net;
  const auto ds = trained_setup(net, 5);
  for (double h : hessian_diag(net, ds)) EXPECT_GE(h, 0.0);
}

TEST(Curvature, ThresholdedLogSum) {
  const std::vector<double> h{2.0, 0.005, 0.5, 1.0, 40.0};
  const std::vector<double> omega(5, 1.0);
  std::size_t pt = 0;
  EXPECT_DOUBLE_EQ(effective_curvature(h, omega, &pt), std::log(2.0) + std::log(40.0));
  EXPECT_EQ(pt, 2u);
  const std::vector<double> big(5, 1000.0);
  EXPECT_DOUBLE_EQ(effective_curvature(h, big, &pt),
                   std::log(2000.0) + std::log(5.0) + std::log(500.0) + std::log(1000.0) + std::log(40000.0));
  EXPECT_EQ(pt, 5u);
  const std::vector<double> zeros(5, 0.0);
  EXPECT_EQ(effective_curvature(zeros, omega, &pt), 0.0);
  EXPECT_EQ(pt, 0u);
  EXPECT_EQ(summarize_hessian(h, omega).p_tilde, 2u);
  EXPECT_DOUBLE_EQ(summarize_hessian(h, omega).max, 40.0);
}

TEST(Curvature, NondecreasingInPriorVariance) {
  const auto h = gaussian_vector(50, 3);
  std::vector<double> ha(h.size());
  for (std::size_t j = 0; j < h.size(); ++j) ha[j] = h[j] * h[j];
  double prev = -1.0;
  for (double s2 : {0.1, 1.0, 10.0, 100.0, 1000.0}) {
    const std::vector<double> om(h.size(), s2);
    const double ec = effective_curvature(ha, om);
    EXPECT_GE(ec, prev);
    EXPECT_GE(ec, 0.0);
    prev = ec;
  }
}

TEST(Curvature, PosteriorVariances) {
  const std::vector<double> h{4.0, 0.0, 0.1};
  const std::vector<double> om{1.0, 2.0, 3.0};
  EXPECT_EQ(posterior_variances(h, om), (std::vector<double>{0.25, 2.0, 3.0}));
}

TEST(L2, WeightedDistance) {
  const std::vector<double> t{1.0, 2.0, 3.0}, t0{0.0, 2.0, 1.0}, om{2.0, 1.0, 4.0};
  EXPECT_DOUBLE_EQ(l2_term(t, t0, om), 0.5 + 0.0 + 1.0);
  const std::vector<double> shorter{1.0};
  EXPECT_THROW(l2_term(t, shorter, om), ArgumentError);
}

TEST(KL, MatchesNumericIntegration) {
  const double cases[][4] = {{0.0, 1.0, 0.0, 1.0}, {1.0, 0.5, 0.0, 2.0}, {-2.0, 0.01, 1.0, 1.0}, {0.3, 3.0, -0.3, 3.5}};
  for (const auto& c : cases) {
    const std::vector<double> m1{c[0]}, v1{c[1]}, m2{c[2]}, v2{c[3]};
    EXPECT_NEAR(kl_diag_gaussian(m1, v1, m2, v2), kl_numeric_1d(c[0], c[1], c[2], c[3]), 1e-8);
  }
}

TEST(KL, PropertiesOnRandomPairs) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t p = 1 + uniform_index(rng, 20);
    std::vector<double> m1(p), m2(p), v1(p), v2(p), a(p);
    for (std::size_t j = 0; j < p; ++j) {
      m1[j] = 4 * uniform_unit(rng) - 2;
      m2[j] = 4 * uniform_unit(rng) - 2;
      v1[j] = std::exp(6 * uniform_unit(rng) - 3);
      v2[j] = std::exp(6 * uniform_unit(rng) - 3);
      a[j] = std::exp(4 * uniform_unit(rng) - 2);
    }
    const double kl = kl_diag_gaussian(m1, v1, m2, v2);
    EXPECT_GE(kl, 0.0);
    EXPECT_EQ(kl_diag_gaussian(m1, v1, m1, v1), 0.0);
    auto sm1 = m1, sm2 = m2, sv1 = v1, sv2 = v2;
    for (std::size_t j = 0; j < p; ++j) {
      sm1[j] *= a[j];
      sm2[j] *= a[j];
      sv1[j] *= a[j] * a[j];
      sv2[j] *= a[j] * a[j];
    }
    EXPECT_LE(std::abs(kl_diag_gaussian(sm1, sv1, sm2, sv2) - kl), 1e-12 * std::max(1.0, kl));
  }
  const std::vector<double> one{1.0}, zero{0.0};
  EXPECT_THROW(kl_diag_gaussian(one, zero, one, one), ArgumentError);
}

TEST(KL, NearEqualVariancesStayNonNegative) {
  const std::vector<double> m{0.0}, v1{1.0 + 1e-15}, v2{1.0};
  EXPECT_GE(kl_diag_gaussian(m, v1, m, v2), 0.0);
}

TEST(Tail, HandValues) {
  AssumptionConstants k{2.0, 0.5, 3.0, 4.0};
  const double s = 0.1, t = 1.5;
  const auto tt = tail_term(10.0, k, s, t, 7.0);
  const double c2 = std::min({1.0 / (18 * s * 4.0), 1.0 / (18 * s * 0.25 * 2.25), 1.0 / (72 * s * s * 3.0 * 0.25)});
  const double c1 = 1.0 / (12 * s * 0.5);
  EXPECT_DOUBLE_EQ(tt.c2, c2);
  EXPECT_DOUBLE_EQ(tt.c1, c1);
  EXPECT_DOUBLE_EQ(tt.value, 7.0 * std::exp(-std::min(c2 * 100.0, c1 * 10.0)));
  EXPECT_TRUE(tt.precondition_ok);  // 10 > 6 * 0.1 * 0.5 * 4 = 1.2
  EXPECT_FALSE(tail_term(1.2, k, s, t, 7.0).precondition_ok);
  EXPECT_THROW(tail_term(1.0, AssumptionConstants{0.0, 1, 1, 1}, 1.0, 1.0, 1.0), ArgumentError);
}

TEST(Tail, DecreasingInGamma) {
  AssumptionConstants k{1.0, 1.0, 2.0, 5.0};
  double prev = std::numeric_limits<double>::infinity();
  for (double g = 0.5; g < 200; g *= 1.7) {
    const double v = tail_term(g, k, 0.3, 2.0, 3.0).value;
    EXPECT_LT(v, prev);
    prev = v;
  }
  // zero theta drops the |theta| term of c2
  EXPECT_GT(tail_term(5.0, k, 0.3, 0.0, 1.0).c2, 0.0);
}

TEST(Inflation, DepthForms) {
  AssumptionConstants k{2.0, 0.5, 1.0, 1.0};
  EXPECT_DOUBLE_EQ(margin_inflation(k, 3.0, 2), 1.5 * 2.0 * 3.0);
  EXPECT_DOUBLE_EQ(margin_inflation(k, 3.0, 3), 2.0 * 3.0 + 0.5 * 0.5 * 9.0);
}

TEST(Constants, FromHessianDiag) {
  const std::vector<double> h{1.0, 4.0, 0.0, 2.0};
  const auto c = constants_from_hessian_diag(h, 3.0);
  EXPECT_EQ(c.G, 3.0);
  EXPECT_EQ(c.zeta, 4.0);
  EXPECT_EQ(c.alpha, 7.0 / 4.0);
  EXPECT_EQ(c.kappa, 21.0 / 16.0);
}

TEST(Constants, GIsMaxJacobianRowNorm) {
  const std::vector<std::size_t> widths{3, 4, 2};
  const auto net = random_net(widths, 3);
  const auto ds = gaussian_dataset(10, 3, 2, 4);
  double best = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto jac = output_jacobian(net, ds.features.row(i));
    for (std::size_t c = 0; c < 2; ++c) best = std::max(best, std::sqrt(squared_norm(jac.row(c))));
  }
  EXPECT_NEAR(estimate_assumption_constants(net, ds).G, best, 1e-15);
}

TEST(Evaluate, TotalEqualsComponents) {
  MlpParams net;
  const auto ds = trained_setup(net, 7);
  BoundConfig cfg;
  cfg.sigma2 = 10.0;
  cfg.gamma = 0.5;
  cfg.num_classes = 3;
  cfg.prior_mean = gaussian_vector(net.num_params(), 9, 0.1);
  const auto r = evaluate_bound(net, ds, cfg);
  const auto rate = fast_rate_constants(0.1, 3);
  const double expect = rate.a * r.margin_loss + rate.b / (2.0 * 60.0) * (r.effective_curvature + r.l2_term) +
                        rate.b * std::log(1.0 / 0.05) / 60.0;
  EXPECT_LE(std::abs(r.total_bound - expect), 1e-12 * expect);
  EXPECT_EQ(r.total_bound, r.recompute_total());
  EXPECT_EQ(r.margin_loss, margin_loss(net, ds, 0.5));
  EXPECT_LE(r.kl_exact, r.effective_curvature + r.l2_term + 1e-12);
  EXPECT_GE(r.kl_exact, 0.0);
  EXPECT_FALSE(r.tail_included);
  EXPECT_EQ(r.n, 60u);
  const auto h = hessian_diag(net, ds);
  const std::vector<double> om(net.num_params(), 10.0);
  EXPECT_EQ(r.effective_curvature, effective_curvature(h, om));
}

TEST(Evaluate, TailAndExactKlOptions) {
  MlpParams net;
  const auto ds = trained_setup(net, 8);
  BoundConfig cfg;
  cfg.sigma2 = 1.0;
  cfg.gamma = 1.0;
  cfg.num_classes = 3;
  cfg.include_tail = true;
  cfg.tail_constants = AssumptionConstants{1.0, 1.0, 1.0, 1.0};
  const auto r = evaluate_bound(net, ds, cfg);
  EXPECT_TRUE(r.tail_included);
  EXPECT_GT(r.tail_term, 0.0);
  EXPECT_DOUBLE_EQ(r.total_bound, r.recompute_total());
  cfg.use_exact_kl = true;
  const auto e = evaluate_bound(net, ds, cfg);
  EXPECT_EQ(e.kl_total, e.kl_exact);
  EXPECT_LE(e.total_bound, r.total_bound);
  cfg.use_exact_kl = false;
  cfg.margin_inflation = true;
  const auto inf = evaluate_bound(net, ds, cfg);
  EXPECT_GT(inf.effective_gamma, cfg.gamma);
  EXPECT_GE(inf.margin_loss, r.margin_loss);
}

TEST(Evaluate, ConfigValidation) {
  MlpParams net;
  const auto ds = trained_setup(net, 9);
  BoundConfig cfg;
  cfg.num_classes = 3;
  cfg.sigma2 = -1.0;
  EXPECT_THROW(evaluate_bound(net, ds, cfg), ArgumentError);
  cfg.sigma2 = 1.0;
  cfg.prior_variances = std::vector<double>(net.num_params(), 2.0);  // exceeds sigma^2
  EXPECT_THROW(evaluate_bound(net, ds, cfg), ArgumentError);
  cfg.prior_variances.clear();
  cfg.prior_mean = {1.0};
  EXPECT_THROW(evaluate_bound(net, ds, cfg), ArgumentError);
  cfg.prior_mean.clear();
  cfg.delta = 1.0;
  EXPECT_THROW(evaluate_bound(net, ds, cfg), ArgumentError);
}

TEST(Evaluate, CsvColumns) {
  EXPECT_EQ(bound_csv_header(),
            "n,p,gamma,sigma2,eta,delta,margin_loss,p_tilde,effective_curvature,l2_term,kl_exact,tail_term,"
            "confidence_term,total");
  BoundReport r;
  r.n = 3;
  r.total_bound = 0.1;
  const auto row = bound_csv_row(r);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 13);
  EXPECT_NE(row.find("0.10000000000000001"), std::string::npos);
}

namespace {

// Independent copy of the sample-size formula.
double oracle_n0(const SampleComplexityInput& in, double g_inv) {
  const auto& k = in.constants;
  const double s = in.sigma2;
  const double t2 = in.theta_norm * in.theta_norm;
  double c2 = 1.0 / (18.0 * s * k.G * k.G);
  if (t2 > 0.0) c2 = std::min(c2, 1.0 / (18.0 * s * k.zeta * k.zeta * t2));
  c2 = std::min(c2, 1.0 / (72.0 * s * s * k.kappa * k.zeta * k.zeta));
  const double c1 = 1.0 / (12.0 * s * k.zeta);
  const double zl = 3.0 / g_inv;
  const double L = std::log(24.0 / in.epsilon);
  const double kd = static_cast<double>(in.depth);
  double lam = std::sqrt(zl * zl / c2 * L);
  lam = std::max(lam, std::sqrt(zl / c1 * L));
  lam = std::max(lam, std::sqrt(2.0 * zl * s * k.alpha));
  lam = std::max(lam, std::pow(6.0 * k.G * in.theta_norm / g_inv, 1.0 / (kd - 1.0)));
  lam = std::max(lam, std::pow(3.0 * k.zeta * in.theta_norm * in.theta_norm / g_inv, 1.0 / (kd - 2.0)));
  const double e2 = in.epsilon * in.epsilon;
  const double br = in.effective_curvature + lam * lam * in.theta_norm * in.theta_norm / (2.0 * s);
  return std::max(4.0 / e2 * br * br, 16.0 / e2 * std::log(1.0 / in.delta));
}

}  // namespace

TEST(SampleComplexity, ZeroThetaReducesToConfidence) {
  for (auto [eps, delta] : {std::pair{0.1, 0.05}, std::pair{0.2, 0.1}}) {
    SampleComplexityInput in;
    in.epsilon = eps;
    in.delta = delta;
    in.margin_fn = {{0.0, 0.0}, {0.5, 0.01}, {1.0, 0.2}};
    in.theta_norm = 0.0;
    in.effective_curvature = 0.0;
    const auto out = sample_complexity(in);
    EXPECT_EQ(out.n0, std::ceil(16.0 / (eps * eps) * std::log(1.0 / delta)));
  }
  SampleComplexityInput in;
  in.margin_fn = {{0.0, 0.0}, {1.0, 1.0}};
  in.theta_norm = 0.0;
  EXPECT_EQ(sample_complexity(in).n0, 4794.0);
  in.epsilon = 0.2;
  in.delta = 0.1;
  EXPECT_EQ(sample_complexity(in).n0, 922.0);
}

TEST(SampleComplexity, MatchesOracle) {
  Rng rng(17);
  for (int t = 0; t < 10; ++t) {
    SampleComplexityInput in;
    in.epsilon = 0.05 + 0.3 * uniform_unit(rng);
    in.delta = 0.01 + 0.2 * uniform_unit(rng);
    in.depth = 3 + uniform_index(rng, 3);
    in.sigma2 = 0.1 + 2.0 * uniform_unit(rng);
    in.constants = {0.5 + uniform_unit(rng), 0.1 + uniform_unit(rng), 1.0 + uniform_unit(rng), 1.0 + 5 * uniform_unit(rng)};
    in.theta_norm = 0.5 + 3 * uniform_unit(rng);
    in.effective_curvature = 10 * uniform_unit(rng);
    for (int i = 0; i <= 20; ++i) in.margin_fn.push_back({0.1 * i, 0.05 * i});
    const auto out = sample_complexity(in);
    const double g_inv = margin_fn_inverse(in.margin_fn, in.epsilon / 4.0);
    const double expect = oracle_n0(in, g_inv);
    EXPECT_LE(std::abs(out.n0_real - expect), std::nextafter(expect, INFINITY) - expect) << t;
    EXPECT_EQ(out.n0, std::ceil(expect));
  }
}

TEST(SampleComplexity, Errors) {
  SampleComplexityInput in;
  in.margin_fn = {{0.0, 0.0}, {1.0, 0.01}};
  EXPECT_THROW(sample_complexity(in), ArgumentError);  // never reaches eps/4
  in.margin_fn = {{0.0, 0.0}, {1.0, 1.0}};
  in.depth = 2;
  EXPECT_THROW(sample_complexity(in), ArgumentError);
  in.depth = 3;
  in.epsilon = 0.0;
  EXPECT_THROW(sample_complexity(in), ArgumentError);
}

TEST(SampleComplexity, InverseOnGrid) {
  const std::vector<std::pair<double, double>> g{{0.0, 0.0}, {0.5, 0.02}, {1.0, 0.03}, {1.5, 0.2}};
  EXPECT_EQ(margin_fn_inverse(g, 0.025), 1.0);
  EXPECT_EQ(margin_fn_inverse(g, 0.02), 0.5);
  EXPECT_THROW(margin_fn_inverse(g, 0.5), ArgumentError);
}

TEST(Spectral, MatchesEigenOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Matrix w(7, 5);
    const auto v = gaussian_vector(35, s);
    std::copy(v.begin(), v.end(), w.values().begin());
    const auto ev = testing_support::jacobi_eigenvalues(testing_support::gram(w));
    const auto sn = spectral_norm(w, 2000, 1e-14);
    EXPECT_TRUE(sn.converged);
    EXPECT_LE(rel_err(sn.value, std::sqrt(ev.back())), 1e-6);
  }
}

TEST(Spectral, IdentityAndZero) {
  EXPECT_NEAR(spectral_norm(Matrix::identity(4)).value, 1.0, 1e-12);
  EXPECT_EQ(spectral_norm(Matrix(3, 3)).value, 0.0);
  MlpParams p;
  p.layers = {Matrix::identity(3), Matrix::identity(3), Matrix::identity(3)};
  EXPECT_NEAR(spectral_norm_product(p).value, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(squared_norm(p.flatten()), 9.0);
  EXPECT_THROW(spectral_norm(Matrix::identity(2), 0), ArgumentError);
}

TEST(Spectral, ProductHomogeneous) {
  const std::vector<std::size_t> widths{4, 6, 5, 3};
  const auto net = random_net(widths, 2);
  const double base = spectral_norm_product(net).value;
  EXPECT_LE(rel_err(spectral_norm_product(scale_params(net, 2.0)).value, 8.0 * base), 1e-9);
}
