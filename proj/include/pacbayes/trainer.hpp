#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pacbayes/dataset.hpp"
#include "pacbayes/loss.hpp"
#include "pacbayes/network.hpp"

namespace pacbayes {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 128;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Initial weights ~ N(0, (init_scale / sqrt(fan_in))^2).
  double init_scale = 1.0;
  /// End training after the first epoch with zero training error.
  bool stop_at_zero_error = false;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  AdamState() = default;
  explicit AdamState(std::size_t p) : m(p, 0.0), v(p, 0.0) {}
};

struct TrainHistory {
  std::vector<double> mean_loss;
  std::vector<double> train_error;
};

struct TrainResult {
  MlpParams params;
  TrainHistory history;
};

/// One bias-corrected Adam update of `theta` in place. Throws TrainingError
/// (carrying the step index) on a non-finite gradient or parameter.
void adam_step(std::span<double> theta, std::span<const double> grad, AdamState& state,
               const TrainConfig& config);

/// Initial weights for `widths` from the config's seed.
MlpParams initial_params(std::span<const std::size_t> widths, const TrainConfig& config);

/// Up to epochs x ceil(n / batch_size) Adam steps over a fresh seeded shuffle per
/// epoch; the last partial batch is used as-is. History records the mean
/// loss and 0-1 error on the full training set after each epoch.
TrainResult train(const MlpParams& init, const LabeledDataset& data, const TrainConfig& config);

/// Fraction of rows whose argmax logit differs from the label.
double error_rate(const MlpParams& params, const LabeledDataset& data);
double mean_loss(const MlpParams& params, const LabeledDataset& data);

}  // namespace pacbayes
