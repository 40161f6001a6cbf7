#include "pacbayes/concentration.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pacbayes/errors.hpp"
#include "pacbayes/rng.hpp"
#include "pacbayes/serial.hpp"

namespace pacbayes {

namespace {

// Trials are split into this many seeded blocks regardless of thread count;
// exceedances are integer counts, so the totals are schedule independent.
constexpr std::uint64_t kTrialBlocks = 64;

enum class Exceed { kAtLeast, kStrictlyAbove };

// Draw is copy-constructed once per block and called as draw(rng, normal).
template <class Draw>
std::vector<std::uint64_t> count_exceedances(const Draw& prototype, std::uint64_t trials,
                                             std::span<const double> thresholds, std::uint64_t seed,
                                             Exceed mode, bool parallel) {
  const std::size_t m = thresholds.size();
  std::vector<std::vector<std::uint64_t>> per_block(kTrialBlocks, std::vector<std::uint64_t>(m, 0));
  auto run_block = [&](std::uint64_t b) {
    Draw draw = prototype;
    Rng rng(derive_seed(seed, 1000 + b));
    NormalSampler normal;
    const std::uint64_t begin = b * trials / kTrialBlocks;
    const std::uint64_t end = (b + 1) * trials / kTrialBlocks;
    auto& counts = per_block[b];
    for (std::uint64_t t = begin; t < end; ++t) {
      const double s = draw(rng, normal);
      for (std::size_t i = 0; i < m; ++i) {
        const bool hit = mode == Exceed::kAtLeast ? s >= thresholds[i] : s > thresholds[i];
        if (hit) ++counts[i];
      }
    }
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::uint64_t b = 0; b < kTrialBlocks; ++b) run_block(b);
  } else {
    for (std::uint64_t b = 0; b < kTrialBlocks; ++b) run_block(b);
  }
  std::vector<std::uint64_t> total(m, 0);
  for (const auto& counts : per_block) {
    for (std::size_t i = 0; i < m; ++i) total[i] += counts[i];
  }
  return total;
}

void check_trials(std::uint64_t trials) {
  if (trials == 0) throw ArgumentError("Monte-Carlo check needs at least one trial");
}

struct MdsDraw {
  std::vector<double> u;
  double kappa;
  CoefficientRule rule;

  double operator()(Rng& rng, NormalSampler& normal) const {
    double sum = 0.0;
    for (double ut : u) {
      const double z = kappa * normal(rng);
      const bool b = rule == CoefficientRule::kAllOnes || sum >= 0.0;
      if (b) sum += ut * z;
    }
    return std::abs(sum);
  }
};

// Draws delta ~ N(0, diag(variances)) and returns delta (.) xi in `v`.
struct MaskedDraw {
  const MaskedNetwork* net;
  std::vector<double> stddev;
  std::vector<double> delta;
  std::vector<double> v;

  explicit MaskedDraw(const MaskedNetwork& n) : net(&n), delta(n.variances.size()), v(n.variances.size()) {
    stddev.reserve(n.variances.size());
    for (double s2 : n.variances) stddev.push_back(std::sqrt(s2));
  }

  void sample(Rng& rng, NormalSampler& normal) {
    for (std::size_t j = 0; j < delta.size(); ++j) delta[j] = stddev[j] * normal(rng);
    masked_perturbation(*net, delta, v);
  }
};

struct MaskedLinearDraw {
  MaskedDraw base;
  std::vector<double> u;

  double operator()(Rng& rng, NormalSampler& normal) {
    base.sample(rng, normal);
    return std::abs(dot(base.v, u));
  }
};

double quadratic_form(const Matrix& h, std::span<const double> v) {
  double total = 0.0;
  for (std::size_t r = 0; r < h.rows(); ++r) {
    if (v[r] == 0.0) continue;
    total += v[r] * dot(h.row(r), v);
  }
  return total;
}

struct MaskedQuadraticDraw {
  MaskedDraw base;
  const Matrix* h;

  double operator()(Rng& rng, NormalSampler& normal) {
    base.sample(rng, normal);
    return quadratic_form(*h, base.v);
  }
};

struct IsotropicQuadraticDraw {
  const Matrix* h;
  double sigma;
  std::vector<double> v;

  double operator()(Rng& rng, NormalSampler& normal) {
    for (double& x : v) x = sigma * normal(rng);
    return quadratic_form(*h, v);
  }
};

TailCheckReport linear_report(std::span<const double> taus, const std::vector<std::uint64_t>& counts,
                              std::uint64_t trials, std::uint64_t seed, double kappa, double u_norm_sq) {
  TailCheckReport r{{}, trials, seed};
  for (std::size_t i = 0; i < taus.size(); ++i) {
    r.points.push_back(make_tail_point(taus[i], counts[i], trials, mds_linear_bound(taus[i], kappa, u_norm_sq)));
  }
  return r;
}

TailCheckReport quadratic_report(std::span<const double> gammas, const std::vector<std::uint64_t>& counts,
                                 std::uint64_t trials, std::uint64_t seed, const QuadraticConstants& c) {
  TailCheckReport r{{}, trials, seed};
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    // H = 0 makes the form identically zero, so no draw can exceed.
    const double bound = c.zeta == 0.0 ? 0.0 : hanson_wright_bound(gammas[i], c.alpha, c.kappa);
    r.points.push_back(make_tail_point(gammas[i], counts[i], trials, bound));
  }
  return r;
}

std::vector<double> quadratic_thresholds(double sigma2, const QuadraticConstants& c,
                                         std::span<const double> gammas) {
  std::vector<double> t;
  for (double g : gammas) t.push_back(sigma2 * c.zeta * c.alpha * g);
  return t;
}

TailCheckReport mds_linear_impl(std::span<const double> u, double kappa, std::uint64_t trials,
                                std::span<const double> taus, std::uint64_t seed, CoefficientRule rule,
                                bool parallel) {
  check_trials(trials);
  if (!(kappa >= 0.0)) throw ArgumentError("kappa must be nonnegative");
  const MdsDraw draw{{u.begin(), u.end()}, kappa, rule};
  const auto counts = count_exceedances(draw, trials, taus, seed, Exceed::kAtLeast, parallel);
  return linear_report(taus, counts, trials, seed, kappa, squared_norm(u));
}

TailCheckReport network_linear_impl(const MaskedNetwork& net, std::span<const double> u, std::uint64_t trials,
                                    std::span<const double> taus, std::uint64_t seed, bool parallel) {
  check_trials(trials);
  net.validate();
  if (u.size() != net.variances.size()) throw ArgumentError("u must have one entry per parameter");
  const MaskedLinearDraw draw{MaskedDraw(net), {u.begin(), u.end()}};
  const auto counts = count_exceedances(draw, trials, taus, seed, Exceed::kAtLeast, parallel);
  const double kappa = std::sqrt(*std::max_element(net.variances.begin(), net.variances.end()));
  return linear_report(taus, counts, trials, seed, kappa, squared_norm(u));
}

TailCheckReport masked_quadratic_impl(const MaskedNetwork& net, const Matrix& h, std::uint64_t trials,
                                      std::span<const double> gammas, std::uint64_t seed, bool parallel) {
  check_trials(trials);
  net.validate();
  if (h.rows() != net.variances.size()) throw ArgumentError("H must be p x p for the network's p");
  const auto c = quadratic_constants(h);
  const double sigma2 = *std::max_element(net.variances.begin(), net.variances.end());
  const MaskedQuadraticDraw draw{MaskedDraw(net), &h};
  const auto counts =
      count_exceedances(draw, trials, quadratic_thresholds(sigma2, c, gammas), seed, Exceed::kStrictlyAbove, parallel);
  return quadratic_report(gammas, counts, trials, seed, c);
}

TailCheckReport isotropic_quadratic_impl(double sigma2, const Matrix& h, std::uint64_t trials,
                                         std::span<const double> gammas, std::uint64_t seed, bool parallel) {
  check_trials(trials);
  if (!(sigma2 > 0.0)) throw ArgumentError("sigma2 must be positive");
  const auto c = quadratic_constants(h);
  const IsotropicQuadraticDraw draw{&h, std::sqrt(sigma2), std::vector<double>(h.rows())};
  const auto counts =
      count_exceedances(draw, trials, quadratic_thresholds(sigma2, c, gammas), seed, Exceed::kStrictlyAbove, parallel);
  return quadratic_report(gammas, counts, trials, seed, c);
}

}  // namespace

bool TailCheckReport::all_pass() const {
  return std::all_of(points.begin(), points.end(), [](const TailPoint& p) { return p.pass; });
}

std::string TailCheckReport::to_csv() const {
  std::ostringstream s;
  s << "threshold,empirical,stderr,bound,pass\n";
  char buf[256];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%d\n", p.threshold, p.empirical, p.stderr_,
                  p.bound, p.pass ? 1 : 0);
    s << buf;
  }
  return s.str();
}

TailPoint make_tail_point(double threshold, std::uint64_t exceedances, std::uint64_t trials, double bound) {
  TailPoint p;
  p.threshold = threshold;
  p.exceedances = exceedances;
  p.empirical = static_cast<double>(exceedances) / static_cast<double>(trials);
  p.stderr_ = std::sqrt(p.empirical * (1.0 - p.empirical) / static_cast<double>(trials));
  p.bound = bound;
  p.pass = p.empirical <= p.bound + 3.0 * p.stderr_;
  return p;
}

double mds_linear_bound(double tau, double kappa, double u_norm_sq) {
  const double scale = 2.0 * kappa * kappa * u_norm_sq;
  if (scale == 0.0) return tau > 0.0 ? 0.0 : 2.0;
  return 2.0 * std::exp(-tau * tau / scale);
}

double hanson_wright_bound(double gamma_tilde, double alpha, double kappa) {
  if (gamma_tilde <= 1.0) return 1.0;
  const double e = gamma_tilde - 1.0;
  return std::exp(-0.5 * std::min(alpha * alpha * e * e / kappa, alpha * e));
}

void MaskedNetwork::validate() const {
  center.validate();
  if (x.size() != center.input_dim()) throw ArgumentError("input dimension does not match network");
  if (variances.size() != center.num_params()) throw ArgumentError("one variance per parameter required");
  for (double v : variances) {
    if (!(v >= 0.0)) throw ArgumentError("variances must be nonnegative");
  }
}

void masked_perturbation(const MaskedNetwork& net, std::span<const double> delta, std::span<double> out) {
  const std::size_t p = net.center.num_params();
  if (net.all_active) {
    std::copy(delta.begin(), delta.end(), out.begin());
    return;
  }
  MlpParams perturbed = net.center;
  std::vector<double> theta = net.center.flatten();
  for (std::size_t j = 0; j < p; ++j) theta[j] += delta[j];
  perturbed.assign(theta);
  const auto bits = edge_mask(perturbed, activation_mask(perturbed, net.x), net.layout);
  for (std::size_t j = 0; j < p; ++j) out[j] = bits[j] ? delta[j] : 0.0;
}

QuadraticConstants quadratic_constants(const Matrix& h) {
  const std::size_t p = h.rows();
  if (p == 0 || h.cols() != p) throw ArgumentError("H must be a nonempty square matrix");
  Eigen::MatrixXd m(p, p);
  double scale = 0.0;
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c < p; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = h(r, c);
      scale = std::max(scale, std::abs(h(r, c)));
    }
  }
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = r + 1; c < p; ++c) {
      if (std::abs(h(r, c) - h(c, r)) > 1e-12 * std::max(1.0, scale)) {
        throw ArgumentError("H is not symmetric");
      }
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw ArgumentError("eigen decomposition of H failed");
  const auto& ev = solver.eigenvalues();
  const double top = ev.maxCoeff();
  if (ev.minCoeff() < -1e-10 * std::max(1.0, top)) throw ArgumentError("H is not positive semi-definite");

  QuadraticConstants c;
  c.zeta = std::max(top, 0.0);
  if (c.zeta == 0.0) return c;
  double trace = 0.0, frob = 0.0;
  for (std::size_t r = 0; r < p; ++r) {
    trace += h(r, r);
    for (std::size_t col = 0; col < p; ++col) frob += h(r, col) * h(r, col);
  }
  c.alpha = trace / c.zeta;
  c.kappa = frob / (c.zeta * c.zeta);
  return c;
}

TailCheckReport simulate_mds_linear(std::span<const double> u, double kappa, std::uint64_t trials,
                                    std::span<const double> tau_grid, std::uint64_t seed, CoefficientRule rule) {
  return mds_linear_impl(u, kappa, trials, tau_grid, seed, rule, true);
}

TailCheckReport simulate_network_mask_linear(const MaskedNetwork& net, std::span<const double> u,
                                             std::uint64_t trials, std::span<const double> tau_grid,
                                             std::uint64_t seed) {
  return network_linear_impl(net, u, trials, tau_grid, seed, true);
}

TailCheckReport simulate_masked_quadratic(const MaskedNetwork& net, const Matrix& h, std::uint64_t trials,
                                          std::span<const double> gamma_grid, std::uint64_t seed) {
  return masked_quadratic_impl(net, h, trials, gamma_grid, seed, true);
}

TailCheckReport simulate_isotropic_quadratic(double sigma2, const Matrix& h, std::uint64_t trials,
                                             std::span<const double> gamma_grid, std::uint64_t seed) {
  return isotropic_quadratic_impl(sigma2, h, trials, gamma_grid, seed, true);
}

namespace serial {

TailCheckReport simulate_mds_linear(std::span<const double> u, double kappa, std::uint64_t trials,
                                    std::span<const double> tau_grid, std::uint64_t seed, CoefficientRule rule) {
  return mds_linear_impl(u, kappa, trials, tau_grid, seed, rule, false);
}

TailCheckReport simulate_network_mask_linear(const MaskedNetwork& net, std::span<const double> u,
                                             std::uint64_t trials, std::span<const double> tau_grid,
                                             std::uint64_t seed) {
  return network_linear_impl(net, u, trials, tau_grid, seed, false);
}

TailCheckReport simulate_masked_quadratic(const MaskedNetwork& net, const Matrix& h, std::uint64_t trials,
                                          std::span<const double> gamma_grid, std::uint64_t seed) {
  return masked_quadratic_impl(net, h, trials, gamma_grid, seed, false);
}

TailCheckReport simulate_isotropic_quadratic(double sigma2, const Matrix& h, std::uint64_t trials,
                                             std::span<const double> gamma_grid, std::uint64_t seed) {
  return isotropic_quadratic_impl(sigma2, h, trials, gamma_grid, seed, false);
}

}  // namespace serial

Matrix random_wishart(std::size_t p, std::uint64_t seed) {
  if (p == 0) throw ArgumentError("matrix size must be positive");
  Rng rng(seed);
  NormalSampler normal;
  Matrix a(p, p);
  for (auto& v : a.values()) v = normal(rng);
  Matrix h(p, p);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i; j < p; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < p; ++r) s += a(r, i) * a(r, j);
      h(i, j) = h(j, i) = s / static_cast<double>(p);
    }
  }
  return h;
}

MaskedNetwork random_masked_network(std::span<const std::size_t> widths, double sigma2, std::uint64_t seed) {
  if (!(sigma2 >= 0.0)) throw ArgumentError("sigma2 must be >= 0");
  MaskedNetwork net;
  net.center = init_gaussian(widths, 1.0, derive_seed(seed, streams::kInit));
  Rng rng(derive_seed(seed, streams::kSyntheticTrain));
  NormalSampler normal;
  net.x.resize(widths.front());
  for (auto& v : net.x) v = normal(rng);
  net.variances.assign(net.center.num_params(), sigma2);
  return net;
}

}  // namespace pacbayes
