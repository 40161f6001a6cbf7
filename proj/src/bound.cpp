#include "pacbayes/bound.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "pacbayes/errors.hpp"
#include "pacbayes/loss.hpp"
#include "pacbayes/parallel.hpp"
#include "pacbayes/rng.hpp"

namespace pacbayes {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ArgumentError(std::string(what) + ": length mismatch");
}

double sample_margin(std::span<const double> z, int label) {
  const auto y = static_cast<std::size_t>(label);
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < z.size(); ++c) {
    if (c != y) best_other = std::max(best_other, z[c]);
  }
  return z[y] - best_other;
}

}  // namespace

void BoundConfig::validate(std::size_t p) const {
  if (!(sigma2 > 0.0)) throw ArgumentError("sigma2 must be positive");
  if (!prior_variances.empty()) {
    if (prior_variances.size() != p) throw ArgumentError("prior variances: length mismatch");
    for (double w : prior_variances) {
      if (!(w > 0.0 && w <= sigma2)) throw ArgumentError("prior variances must lie in (0, sigma2]");
    }
  }
  if (!prior_mean.empty() && prior_mean.size() != p) throw ArgumentError("prior mean: length mismatch");
  if (!(eta > 0.0 && eta < 1.0)) throw ArgumentError("eta must be in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw ArgumentError("delta must be in (0, 1)");
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be nonnegative");
  if (num_classes < 2) throw ArgumentError("num_classes must be at least 2");
  if (tail_constants) {
    const auto& c = *tail_constants;
    if (!(c.G > 0.0 && c.zeta > 0.0 && c.kappa > 0.0 && c.alpha > 0.0)) {
      throw ArgumentError("tail constants must be positive");
    }
  }
}

std::vector<double> BoundConfig::resolved_prior_variances(std::size_t p) const {
  return prior_variances.empty() ? std::vector<double>(p, sigma2) : prior_variances;
}

std::vector<double> BoundConfig::resolved_prior_mean(std::size_t p) const {
  return prior_mean.empty() ? std::vector<double>(p, 0.0) : prior_mean;
}

double BoundReport::recompute_total() const {
  return rate.a * margin_loss + rate.b / (2.0 * static_cast<double>(n)) * kl_total +
         (tail_included ? tail_term : 0.0) + confidence_term;
}

std::string BoundReport::to_text() const {
  std::ostringstream s;
  s << "n                    " << n << "\n"
    << "p                    " << p << "\n"
    << "gamma                " << fmt(gamma) << "\n";
  if (effective_gamma != gamma) s << "effective gamma      " << fmt(effective_gamma) << "\n";
  s << "sigma2               " << fmt(sigma2) << "\n"
    << "eta                  " << fmt(eta) << "  (a=" << fmt(rate.a) << ", b=" << fmt(rate.b)
    << ", d=" << fmt(rate.d) << ")\n"
    << "delta                " << fmt(delta) << "\n"
    << "margin loss          " << fmt(margin_loss) << "\n"
    << "hessian diag         p_tilde=" << hessian.p_tilde << " max=" << fmt(hessian.max)
    << " mean=" << fmt(hessian.mean) << "\n"
    << "effective curvature  " << fmt(effective_curvature) << "\n"
    << "L2 term              " << fmt(l2_term) << "\n"
    << "2*KL exact           " << fmt(kl_exact) << "\n"
    << "KL used in bound     " << fmt(kl_total) << "\n"
    << "tail term            " << (tail_included ? fmt(tail_term) : std::string("omitted"));
  if (tail_included && !tail_precondition_ok) s << "  (warning: gamma <= 6 sigma2 zeta alpha)";
  s << "\n"
    << "confidence term      " << fmt(confidence_term) << "\n"
    << "total bound          " << fmt(total_bound) << "\n";
  return s.str();
}

std::string bound_csv_header() {
  return "n,p,gamma,sigma2,eta,delta,margin_loss,p_tilde,effective_curvature,l2_term,kl_exact,"
         "tail_term,confidence_term,total";
}

std::string bound_csv_row(const BoundReport& r) {
  std::ostringstream s;
  s << r.n << ',' << r.p << ',' << fmt(r.gamma) << ',' << fmt(r.sigma2) << ',' << fmt(r.eta) << ','
    << fmt(r.delta) << ',' << fmt(r.margin_loss) << ',' << r.hessian.p_tilde << ','
    << fmt(r.effective_curvature) << ',' << fmt(r.l2_term) << ',' << fmt(r.kl_exact) << ','
    << fmt(r.tail_included ? r.tail_term : 0.0) << ',' << fmt(r.confidence_term) << ','
    << fmt(r.total_bound);
  return s.str();
}

std::vector<double> margins(const MlpParams& params, const LabeledDataset& data) {
  const std::size_t n = data.size();
  std::vector<double> out(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = sample_margin(logits(params, data.features.row(i)), data.labels[i]);
  }
  return out;
}

double margin_loss(const MlpParams& params, const LabeledDataset& data, double gamma) {
  const auto m = margins(params, data);
  std::size_t count = 0;
  for (double v : m) {
    if (v <= gamma) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(m.size());
}

std::vector<std::pair<double, double>> margin_curve(const MlpParams& params, const LabeledDataset& data,
                                                    std::span<const double> gamma_grid) {
  if (!std::is_sorted(gamma_grid.begin(), gamma_grid.end())) {
    throw ArgumentError("margin grid must be sorted ascending");
  }
  auto m = margins(params, data);
  std::sort(m.begin(), m.end());
  std::vector<std::pair<double, double>> curve;
  curve.reserve(gamma_grid.size());
  for (double g : gamma_grid) {
    const auto count = static_cast<std::size_t>(std::upper_bound(m.begin(), m.end(), g) - m.begin());
    curve.emplace_back(g, static_cast<double>(count) / static_cast<double>(m.size()));
  }
  return curve;
}

std::vector<std::pair<double, double>> margin_function(const MlpParams& params, const LabeledDataset& data,
                                                       std::span<const double> gamma_grid) {
  auto curve = margin_curve(params, data, gamma_grid);
  const double base = margin_loss(params, data, 0.0);
  for (auto& [g, v] : curve) v -= base;
  return curve;
}

std::vector<double> hessian_diag(const MlpParams& params, const LabeledDataset& data) {
  const std::size_t n = data.size();
  if (n == 0) throw ArgumentError("hessian_diag needs a nonempty dataset");
  const std::size_t p = params.num_params();
  auto sum = block_tree_sum(n, p, [&](std::size_t begin, std::size_t end, std::span<double> acc) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto x = data.features.row(i);
      const Matrix jac = output_jacobian(params, x);
      const auto probs = cross_entropy(logits(params, x), data.labels[i]).probs;
      const std::size_t k = probs.size();
      for (std::size_t j = 0; j < p; ++j) {
        double mean = 0.0;
        for (std::size_t c = 0; c < k; ++c) mean += probs[c] * jac(c, j);
        double var = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          const double d = jac(c, j) - mean;
          var += probs[c] * d * d;
        }
        acc[j] += var;
      }
    }
  });
  const double inv = 1.0 / static_cast<double>(n);
  for (double& h : sum) h *= inv;
  return sum;
}

HessianSummary summarize_hessian(std::span<const double> hdiag, std::span<const double> prior_variances) {
  check_lengths(hdiag.size(), prior_variances.size(), "summarize_hessian");
  HessianSummary s;
  double total = 0.0;
  for (std::size_t j = 0; j < hdiag.size(); ++j) {
    if (hdiag[j] > 1.0 / prior_variances[j]) ++s.p_tilde;
    s.max = std::max(s.max, hdiag[j]);
    total += hdiag[j];
  }
  s.mean = hdiag.empty() ? 0.0 : total / static_cast<double>(hdiag.size());
  return s;
}

std::vector<double> posterior_variances(std::span<const double> hdiag,
                                        std::span<const double> prior_variances) {
  check_lengths(hdiag.size(), prior_variances.size(), "posterior_variances");
  std::vector<double> nu(hdiag.size());
  for (std::size_t j = 0; j < nu.size(); ++j) {
    nu[j] = hdiag[j] > 0.0 ? std::min(prior_variances[j], 1.0 / hdiag[j]) : prior_variances[j];
  }
  return nu;
}

double effective_curvature(std::span<const double> hdiag, std::span<const double> prior_variances,
                           std::size_t* p_tilde) {
  check_lengths(hdiag.size(), prior_variances.size(), "effective_curvature");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < hdiag.size(); ++j) {
    if (hdiag[j] > 1.0 / prior_variances[j]) {
      total += std::log(hdiag[j] * prior_variances[j]);
      ++count;
    }
  }
  if (p_tilde != nullptr) *p_tilde = count;
  return total;
}

double l2_term(std::span<const double> theta, std::span<const double> theta0,
               std::span<const double> prior_variances) {
  check_lengths(theta.size(), theta0.size(), "l2_term");
  check_lengths(theta.size(), prior_variances.size(), "l2_term");
  double total = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double d = theta[j] - theta0[j];
    total += d * d / prior_variances[j];
  }
  return total;
}

double kl_diag_gaussian(std::span<const double> post_mean, std::span<const double> post_vars,
                        std::span<const double> prior_mean, std::span<const double> prior_vars) {
  const std::size_t p = post_mean.size();
  check_lengths(post_vars.size(), p, "kl_diag_gaussian");
  check_lengths(prior_mean.size(), p, "kl_diag_gaussian");
  check_lengths(prior_vars.size(), p, "kl_diag_gaussian");
  double total = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    if (!(post_vars[j] > 0.0) || !(prior_vars[j] > 0.0)) {
      throw ArgumentError("kl_diag_gaussian: variances must be positive");
    }
    // r - 1 - ln r written through log1p, which keeps the term >= 0 near r = 1.
    const double x = post_vars[j] / prior_vars[j] - 1.0;
    const double d = post_mean[j] - prior_mean[j];
    total += (x - std::log1p(x)) + d * d / prior_vars[j];
  }
  return 0.5 * total;
}

FastRateConstants fast_rate_constants(double eta, int num_classes, TailVariant variant) {
  if (!(eta > 0.0 && eta < 1.0)) throw ArgumentError("eta must be in (0, 1)");
  FastRateConstants c;
  c.a = std::log(1.0 / eta) / (1.0 - eta);
  c.b = 1.0 / (1.0 - eta);
  const double factor = variant == TailVariant::kNonSmoothTwoClass ? 6.0 : static_cast<double>(num_classes);
  c.d = factor * (c.a + 1.0);
  return c;
}

TailTerm tail_term(double gamma, const AssumptionConstants& k, double sigma2, double theta_norm,
                   double d_eta) {
  if (!(k.G > 0.0 && k.zeta > 0.0 && k.kappa > 0.0 && k.alpha > 0.0 && sigma2 > 0.0)) {
    throw ArgumentError("tail constants must be positive");
  }
  const double inf = std::numeric_limits<double>::infinity();
  const double t2 = theta_norm * theta_norm;
  TailTerm out;
  out.c2 = std::min({1.0 / (18.0 * sigma2 * k.G * k.G),
                     t2 > 0.0 ? 1.0 / (18.0 * sigma2 * k.zeta * k.zeta * t2) : inf,
                     1.0 / (72.0 * sigma2 * sigma2 * k.kappa * k.zeta * k.zeta)});
  out.c1 = 1.0 / (12.0 * sigma2 * k.zeta);
  out.precondition_ok = gamma > 6.0 * sigma2 * k.zeta * k.alpha;
  out.value = d_eta * std::exp(-std::min(out.c2 * gamma * gamma, out.c1 * gamma));
  return out;
}

double margin_inflation(const AssumptionConstants& k, double theta_norm, std::size_t depth) {
  if (depth == 2) return 1.5 * k.G * theta_norm;
  return k.G * theta_norm + 0.5 * k.zeta * theta_norm * theta_norm;
}

AssumptionConstants constants_from_hessian_diag(std::span<const double> hdiag, double G) {
  AssumptionConstants c;
  c.G = G;
  double trace = 0.0, sq = 0.0, mx = 0.0;
  for (double h : hdiag) {
    trace += h;
    sq += h * h;
    mx = std::max(mx, h);
  }
  c.zeta = mx;
  c.alpha = mx > 0.0 ? trace / mx : 0.0;
  c.kappa = mx > 0.0 ? sq / (mx * mx) : 0.0;
  return c;
}

AssumptionConstants estimate_assumption_constants(const MlpParams& params, const LabeledDataset& data) {
  const std::size_t n = data.size();
  if (n == 0) throw ArgumentError("constant estimation needs a nonempty dataset");
  std::vector<double> row_max(n, 0.0);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix jac = output_jacobian(params, data.features.row(i));
    double best = 0.0;
    for (std::size_t c = 0; c < jac.rows(); ++c) best = std::max(best, squared_norm(jac.row(c)));
    row_max[i] = best;
  }
  const double G = std::sqrt(*std::max_element(row_max.begin(), row_max.end()));
  return constants_from_hessian_diag(hessian_diag(params, data), G);
}

BoundReport evaluate_bound_with_hessian(const MlpParams& params, const LabeledDataset& data,
                                        const BoundConfig& config, std::span<const double> hdiag) {
  params.validate();
  data.validate();
  const std::size_t p = params.num_params();
  config.validate(p);
  check_lengths(hdiag.size(), p, "evaluate_bound");

  const auto omega2 = config.resolved_prior_variances(p);
  const auto theta0 = config.resolved_prior_mean(p);
  const auto theta = params.flatten();
  const double theta_norm = std::sqrt(squared_norm(theta));

  BoundReport r;
  r.n = data.size();
  r.p = p;
  r.gamma = config.gamma;
  r.sigma2 = config.sigma2;
  r.eta = config.eta;
  r.delta = config.delta;

  std::optional<AssumptionConstants> constants = config.tail_constants;
  if (!constants && (config.include_tail || config.margin_inflation)) {
    constants = estimate_assumption_constants(params, data);
  }

  r.effective_gamma = config.gamma;
  if (config.margin_inflation) {
    r.effective_gamma += 2.0 * margin_inflation(*constants, theta_norm, params.depth());
  }
  r.margin_loss = margin_loss(params, data, r.effective_gamma);

  r.hessian = summarize_hessian(hdiag, omega2);
  r.effective_curvature = effective_curvature(hdiag, omega2);
  r.l2_term = l2_term(theta, theta0, omega2);
  const auto nu2 = posterior_variances(hdiag, omega2);
  r.kl_exact = 2.0 * kl_diag_gaussian(theta, nu2, theta0, omega2);
  r.kl_total = config.use_exact_kl ? r.kl_exact : r.effective_curvature + r.l2_term;

  r.rate = fast_rate_constants(config.eta, config.num_classes, config.variant);
  if (config.include_tail) {
    const auto tail = tail_term(config.gamma, *constants, config.sigma2, theta_norm, r.rate.d);
    r.tail_term = tail.value;
    r.tail_included = true;
    r.tail_precondition_ok = tail.precondition_ok;
  }
  r.confidence_term = r.rate.b * std::log(1.0 / config.delta) / static_cast<double>(r.n);
  r.total_bound = r.recompute_total();
  return r;
}

BoundReport evaluate_bound(const MlpParams& params, const LabeledDataset& data, const BoundConfig& config) {
  return evaluate_bound_with_hessian(params, data, config, hessian_diag(params, data));
}

double margin_fn_inverse(std::span<const std::pair<double, double>> margin_fn, double level) {
  for (const auto& [gamma, g] : margin_fn) {
    if (g >= level) return gamma;
  }
  throw ArgumentError("margin function never reaches " + fmt(level) + " on the grid");
}

SampleComplexity sample_complexity(const SampleComplexityInput& in) {
  if (!(in.epsilon > 0.0 && in.epsilon < 1.0)) throw ArgumentError("epsilon must be in (0, 1)");
  if (!(in.delta > 0.0 && in.delta < 1.0)) throw ArgumentError("delta must be in (0, 1)");
  if (in.depth <= 2) throw ArgumentError("sample complexity requires depth > 2");
  if (!(in.sigma2 > 0.0)) throw ArgumentError("sigma2 must be positive");
  for (std::size_t i = 1; i < in.margin_fn.size(); ++i) {
    if (in.margin_fn[i].first < in.margin_fn[i - 1].first) {
      throw ArgumentError("margin function grid must be ascending");
    }
  }
  const auto& k = in.constants;
  SampleComplexity out;
  out.g_inverse = margin_fn_inverse(in.margin_fn, in.epsilon / 4.0);
  if (!(out.g_inverse > 0.0)) throw ArgumentError("margin function inverse must be positive");

  // Unit tail rates from the assumption constants.
  const auto tail = tail_term(1.0, k, in.sigma2, in.theta_norm, 1.0);
  out.c1 = tail.c1;
  out.c2 = tail.c2;

  const double local_zeta = 3.0 / out.g_inverse;
  const double log_term = std::log(24.0 / in.epsilon);
  const double kd = static_cast<double>(in.depth);
  out.lambda_terms = {
      std::sqrt(local_zeta * local_zeta / out.c2 * log_term),
      std::sqrt(local_zeta / out.c1 * log_term),
      std::sqrt(2.0 * local_zeta * in.sigma2 * k.alpha),
      std::pow(6.0 * k.G * in.theta_norm / out.g_inverse, 1.0 / (kd - 1.0)),
      std::pow(3.0 * k.zeta * in.theta_norm * in.theta_norm / out.g_inverse, 1.0 / (kd - 2.0)),
  };
  out.lambda = *std::max_element(out.lambda_terms.begin(), out.lambda_terms.end());

  const double eps2 = in.epsilon * in.epsilon;
  const double curvature_branch =
      in.effective_curvature + out.lambda * out.lambda * in.theta_norm * in.theta_norm / (2.0 * in.sigma2);
  const double first = 4.0 / eps2 * curvature_branch * curvature_branch;
  const double second = 16.0 / eps2 * std::log(1.0 / in.delta);
  out.n0_real = std::max(first, second);
  out.n0 = std::ceil(out.n0_real);
  return out;
}

SpectralNorm spectral_norm(const Matrix& w, std::size_t max_iters, double tol, std::uint64_t seed) {
  if (max_iters < 1) throw ArgumentError("power iteration needs at least one iteration");
  SpectralNorm out;
  const std::size_t n = w.cols();
  if (n == 0 || w.rows() == 0) {
    out.converged = true;
    return out;
  }
  Rng rng(derive_seed(seed, streams::kPowerIteration));
  NormalSampler normal;
  std::vector<double> v(n), wv(w.rows()), u(n);
  for (double& x : v) x = normal(rng);
  double norm = std::sqrt(squared_norm(v));
  for (double& x : v) x /= norm;

  double previous = -1.0;
  double rayleigh = 0.0;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    matvec(w, v, wv);
    rayleigh = squared_norm(wv);  // v^T W^T W v with |v| = 1
    out.iterations = it;
    if (rayleigh == 0.0) {
      out.converged = true;
      break;
    }
    if (std::abs(rayleigh - previous) < tol * std::max(1.0, rayleigh)) {
      out.converged = true;
      break;
    }
    previous = rayleigh;
    matvec_transposed(w, wv, u);
    norm = std::sqrt(squared_norm(u));
    if (norm == 0.0) {
      out.converged = true;
      break;
    }
    for (std::size_t j = 0; j < n; ++j) v[j] = u[j] / norm;
  }
  out.value = std::sqrt(rayleigh);
  return out;
}

SpectralNorm spectral_norm_product(const MlpParams& params, std::size_t max_iters, double tol) {
  SpectralNorm out{1.0, 0, true};
  for (std::size_t h = 0; h < params.depth(); ++h) {
    const auto s = spectral_norm(params.layers[h], max_iters, tol, h);
    out.value *= s.value;
    out.iterations = std::max(out.iterations, s.iterations);
    out.converged = out.converged && s.converged;
  }
  return out;
}

}  // namespace pacbayes
