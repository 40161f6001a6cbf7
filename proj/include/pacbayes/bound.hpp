#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pacbayes/dataset.hpp"
#include "pacbayes/network.hpp"

namespace pacbayes {

/// Which d_eta multiplies the tail term: 6(a+1) for the two-class
/// non-smooth bound, k(a+1) for the multi-class smooth bound.
enum class TailVariant { kNonSmoothTwoClass, kMultiClassSmooth };

/// Gradient/Hessian constants of the regularity assumption: squared gradient
/// norm bound G^2, Hessian operator norm zeta, Frobenius-to-operator ratio
/// kappa and stable rank alpha.
struct AssumptionConstants {
  double G = 1.0;
  double zeta = 1.0;
  double kappa = 1.0;
  double alpha = 1.0;
};

struct BoundConfig {
  /// Isotropic prior variance sigma^2.
  double sigma2 = 100.0;
  /// Per-parameter prior variances omega_j^2 <= sigma^2; empty means all sigma^2.
  std::vector<double> prior_variances;
  /// Prior mean theta_0; empty means the zero vector.
  std::vector<double> prior_mean;
  double gamma = 0.0;
  double eta = 0.1;
  double delta = 0.05;
  bool include_tail = false;
  /// Tail constants; estimated from the network when absent.
  std::optional<AssumptionConstants> tail_constants;
  TailVariant variant = TailVariant::kNonSmoothTwoClass;
  int num_classes = 2;
  /// Shift gamma by 2 * rho_k before measuring the margin loss.
  bool margin_inflation = false;
  /// Use 2 * KL(Q||P) instead of effective curvature + L2 as kl_total.
  bool use_exact_kl = false;

  /// Throws ArgumentError on invalid values; p is the parameter count.
  void validate(std::size_t p) const;
  /// omega^2, expanded to length p.
  std::vector<double> resolved_prior_variances(std::size_t p) const;
  std::vector<double> resolved_prior_mean(std::size_t p) const;
};

struct HessianSummary {
  std::size_t p_tilde = 0;
  double max = 0.0;
  double mean = 0.0;
};

struct FastRateConstants {
  double a = 0.0;
  double b = 0.0;
  double d = 0.0;
};

struct TailTerm {
  double value = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  /// False when gamma <= 6 sigma^2 zeta alpha.
  bool precondition_ok = true;
};

struct BoundReport {
  std::size_t n = 0;
  std::size_t p = 0;
  double gamma = 0.0;
  /// Margin at which the empirical loss was measured (gamma + 2 rho_k when inflated).
  double effective_gamma = 0.0;
  double sigma2 = 0.0;
  double eta = 0.0;
  double delta = 0.0;
  double margin_loss = 0.0;
  HessianSummary hessian;
  double effective_curvature = 0.0;
  double l2_term = 0.0;
  /// 2 * KL(Q||P) with the Gauss-Newton posterior variances.
  double kl_exact = 0.0;
  /// Quantity multiplied by b/(2n) in the total.
  double kl_total = 0.0;
  FastRateConstants rate;
  double tail_term = 0.0;
  bool tail_included = false;
  bool tail_precondition_ok = true;
  double confidence_term = 0.0;
  double total_bound = 0.0;

  /// a*margin + (b/2n)*kl_total + [included]*tail + confidence.
  double recompute_total() const;
  std::string to_text() const;
};

/// CSV header and row for BoundReport, columns:
/// n,p,gamma,sigma2,eta,delta,margin_loss,p_tilde,effective_curvature,
/// l2_term,kl_exact,tail_term,confidence_term,total
std::string bound_csv_header();
std::string bound_csv_row(const BoundReport& report);

/// Per-sample margins z[y] - max_{c != y} z[c].
std::vector<double> margins(const MlpParams& params, const LabeledDataset& data);

/// Fraction of samples with z[y] <= max_{c != y} z[c] + gamma.
double margin_loss(const MlpParams& params, const LabeledDataset& data, double gamma);

/// Margin loss at each grid point; grid must be ascending.
std::vector<std::pair<double, double>> margin_curve(const MlpParams& params, const LabeledDataset& data,
                                                    std::span<const double> gamma_grid);

/// Gauss-Newton diagonal of the mean cross-entropy Hessian,
/// (1/n) sum_i g_ij^T (diag(p_i) - p_i p_i^T) g_ij, through each sample's
/// realized linear network. Samples are reduced over a fixed block tree, so
/// the result does not depend on the OpenMP thread count.
std::vector<double> hessian_diag(const MlpParams& params, const LabeledDataset& data);

HessianSummary summarize_hessian(std::span<const double> hdiag, std::span<const double> prior_variances);

/// nu_j^2 = min(omega_j^2, 1 / H[j,j]); H[j,j] = 0 gives omega_j^2.
std::vector<double> posterior_variances(std::span<const double> hdiag,
                                        std::span<const double> prior_variances);

/// sum_j ln(max(H[j,j], 1/omega_j^2) * omega_j^2); p_tilde counts the
/// entries strictly above 1/omega_j^2.
double effective_curvature(std::span<const double> hdiag, std::span<const double> prior_variances,
                           std::size_t* p_tilde = nullptr);

/// sum_j (theta_j - theta0_j)^2 / omega_j^2
double l2_term(std::span<const double> theta, std::span<const double> theta0,
               std::span<const double> prior_variances);

/// KL(N(post_mean, diag post_vars) || N(prior_mean, diag prior_vars)).
double kl_diag_gaussian(std::span<const double> post_mean, std::span<const double> post_vars,
                        std::span<const double> prior_mean, std::span<const double> prior_vars);

FastRateConstants fast_rate_constants(double eta, int num_classes,
                                      TailVariant variant = TailVariant::kNonSmoothTwoClass);

/// d_eta * exp(-min(c2 gamma^2, c1 gamma)) with
/// c2 = min(1/(18 s G^2), 1/(18 s zeta^2 |theta|^2), 1/(72 s^2 kappa zeta^2)),
/// c1 = 1/(12 s zeta), s = sigma^2.
TailTerm tail_term(double gamma, const AssumptionConstants& constants, double sigma2,
                   double theta_norm, double d_eta);

/// Extra margin rho_k: G|theta| + zeta|theta|^2/2 for depth > 2, 3G|theta|/2 for depth 2.
double margin_inflation(const AssumptionConstants& constants, double theta_norm, std::size_t depth);

/// Empirical proxies: G = max Jacobian row norm, zeta = max H[j,j],
/// alpha = trace / zeta, kappa = sum H[j,j]^2 / zeta^2.
AssumptionConstants estimate_assumption_constants(const MlpParams& params, const LabeledDataset& data);
AssumptionConstants constants_from_hessian_diag(std::span<const double> hdiag, double G);

/// Every bound component for a trained network. prior mean / variances come
/// from the config.
BoundReport evaluate_bound(const MlpParams& params, const LabeledDataset& data, const BoundConfig& config);

/// Same, reusing a precomputed Hessian diagonal.
BoundReport evaluate_bound_with_hessian(const MlpParams& params, const LabeledDataset& data,
                                        const BoundConfig& config, std::span<const double> hdiag);

/// Inputs to the predictor-dependent sample complexity.
struct SampleComplexityInput {
  /// Margin function g on an ascending grid of gamma >= 0: (gamma, g(gamma)).
  std::vector<std::pair<double, double>> margin_fn;
  double epsilon = 0.1;
  double delta = 0.05;
  std::size_t depth = 3;
  double sigma2 = 1.0;
  AssumptionConstants constants;
  double theta_norm = 0.0;
  /// Effective curvature at the isotropic threshold 1/sigma^2.
  double effective_curvature = 0.0;
};

struct SampleComplexity {
  double n0 = 0.0;
  /// Unrounded maximum of the two sample-size conditions.
  double n0_real = 0.0;
  double lambda = 0.0;
  std::vector<double> lambda_terms;
  double g_inverse = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
};

/// Smallest grid gamma with g(gamma) >= level; throws ArgumentError when g
/// never reaches the level.
double margin_fn_inverse(std::span<const std::pair<double, double>> margin_fn, double level);

SampleComplexity sample_complexity(const SampleComplexityInput& input);

/// Builds the margin function g(gamma) = l_gamma - l_0 on `gamma_grid`.
std::vector<std::pair<double, double>> margin_function(const MlpParams& params, const LabeledDataset& data,
                                                       std::span<const double> gamma_grid);

struct SpectralNorm {
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Largest singular value by power iteration on W^T W from a seeded start.
SpectralNorm spectral_norm(const Matrix& w, std::size_t max_iters = 200, double tol = 1e-10,
                           std::uint64_t seed = 0);

/// prod_h |W_h|_2; converged is the conjunction over layers.
SpectralNorm spectral_norm_product(const MlpParams& params, std::size_t max_iters = 200, double tol = 1e-10);

}  // namespace pacbayes
