#pragma once

// Single-threaded reference versions of the OpenMP kernels. They keep the
// plainest possible loop structure and exist for tests and benchmarks.

#include <cstdint>
#include <span>
#include <vector>

#include "pacbayes/concentration.hpp"
#include "pacbayes/dataset.hpp"
#include "pacbayes/network.hpp"

namespace pacbayes::serial {

/// Sequential sum over samples of the per-sample Gauss-Newton diagonal.
std::vector<double> hessian_diag(const MlpParams& params, const LabeledDataset& data);

std::vector<double> margins(const MlpParams& params, const LabeledDataset& data);

double margin_loss(const MlpParams& params, const LabeledDataset& data, double gamma);

// Monte-Carlo checks: same trial blocks and seeds as the parallel versions,
// executed in block order on the calling thread.
TailCheckReport simulate_mds_linear(std::span<const double> u, double kappa, std::uint64_t trials,
                                    std::span<const double> tau_grid, std::uint64_t seed,
                                    CoefficientRule rule = CoefficientRule::kRunningSumSign);
TailCheckReport simulate_network_mask_linear(const MaskedNetwork& net, std::span<const double> u,
                                             std::uint64_t trials, std::span<const double> tau_grid,
                                             std::uint64_t seed);
TailCheckReport simulate_masked_quadratic(const MaskedNetwork& net, const Matrix& h, std::uint64_t trials,
                                          std::span<const double> gamma_grid, std::uint64_t seed);
TailCheckReport simulate_isotropic_quadratic(double sigma2, const Matrix& h, std::uint64_t trials,
                                             std::span<const double> gamma_grid, std::uint64_t seed);

}  // namespace pacbayes::serial
