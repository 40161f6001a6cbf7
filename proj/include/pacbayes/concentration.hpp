#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pacbayes/matrix.hpp"
#include "pacbayes/network.hpp"

namespace pacbayes {

/// One threshold of a Monte-Carlo tail check.
struct TailPoint {
  double threshold = 0.0;
  std::uint64_t exceedances = 0;
  double empirical = 0.0;
  double stderr_ = 0.0;
  double bound = 0.0;
  /// empirical <= bound + 3 * stderr
  bool pass = false;
};

struct TailCheckReport {
  std::vector<TailPoint> points;
  std::uint64_t trials = 0;
  std::uint64_t seed = 0;

  bool all_pass() const;
  /// Columns: threshold,empirical,stderr,bound,pass
  std::string to_csv() const;
};

/// Fills empirical frequency, standard error and pass flag from counts.
TailPoint make_tail_point(double threshold, std::uint64_t exceedances, std::uint64_t trials, double bound);

/// Predictable binary coefficient rule b_t for the martingale check.
enum class CoefficientRule {
  kAllOnes,
  /// b_t = 1 iff the running sum sum_{s<t} b_s u_s z_s is >= 0.
  kRunningSumSign,
};

/// 2 exp(-tau^2 / (2 kappa^2 |u|^2)); 0 when u = 0 and tau > 0.
double mds_linear_bound(double tau, double kappa, double u_norm_sq);

/// exp(-min(alpha^2 (g-1)^2 / kappa, alpha (g-1)) / 2) for g > 1; 1 for g <= 1.
double hanson_wright_bound(double gamma_tilde, double alpha, double kappa);

/// z_t ~ N(0, kappa^2) i.i.d.; empirical P(|sum_t b_t u_t z_t| >= tau) per tau
/// against mds_linear_bound.
TailCheckReport simulate_mds_linear(std::span<const double> u, double kappa, std::uint64_t trials,
                                    std::span<const double> tau_grid, std::uint64_t seed,
                                    CoefficientRule rule = CoefficientRule::kRunningSumSign);

/// A fixed network, input and perturbation scale for the masked checks:
/// delta ~ N(0, diag(variances)) and the mask is that of center + delta at x.
struct MaskedNetwork {
  MlpParams center;
  std::vector<double> x;
  std::vector<double> variances;
  /// Treat every unit as active (linear activations).
  bool all_active = false;
  EdgeMaskLayout layout = EdgeMaskLayout::kOutgoingColumns;

  void validate() const;
};

/// delta (.) xi for one draw: writes the masked perturbation into `out`.
void masked_perturbation(const MaskedNetwork& net, std::span<const double> delta, std::span<double> out);

/// P(|<delta (.) xi, u>| >= tau) against 2 exp(-tau^2 / (2 kappa^2 |u|^2)),
/// kappa = max_j sqrt(variances_j).
TailCheckReport simulate_network_mask_linear(const MaskedNetwork& net, std::span<const double> u,
                                             std::uint64_t trials, std::span<const double> tau_grid,
                                             std::uint64_t seed);

/// Operator norm zeta, stable rank alpha = tr/zeta and kappa = |H|_F^2/zeta^2
/// of a symmetric PSD matrix. Throws ArgumentError if H is not symmetric PSD.
struct QuadraticConstants {
  double zeta = 0.0;
  double alpha = 0.0;
  double kappa = 0.0;
};
QuadraticConstants quadratic_constants(const Matrix& h);

/// P[(delta (.) xi)^T H (delta (.) xi) > sigma^2 zeta alpha g] with
/// sigma^2 = max_j variances_j, against hanson_wright_bound(g).
TailCheckReport simulate_masked_quadratic(const MaskedNetwork& net, const Matrix& h, std::uint64_t trials,
                                          std::span<const double> gamma_grid, std::uint64_t seed);

/// Same with delta ~ N(0, sigma^2 I) and no mask.
TailCheckReport simulate_isotropic_quadratic(double sigma2, const Matrix& h, std::uint64_t trials,
                                             std::span<const double> gamma_grid, std::uint64_t seed);

/// Dense PSD test matrix A^T A / p with A a p x p standard Gaussian matrix.
Matrix random_wishart(std::size_t p, std::uint64_t seed);

/// ReLU net with N(0, 1/fan_in) weights and a N(0, 1) input, perturbed with
/// variance sigma2 on every parameter.
MaskedNetwork random_masked_network(std::span<const std::size_t> widths, double sigma2, std::uint64_t seed);

}  // namespace pacbayes
