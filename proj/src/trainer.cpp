#include "pacbayes/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pacbayes/errors.hpp"
#include "pacbayes/rng.hpp"

namespace pacbayes {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (batch_size < 1) throw ArgumentError("batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ArgumentError("Adam betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ArgumentError("Adam epsilon must be positive");
  if (!(init_scale >= 0.0)) throw ArgumentError("init_scale must be nonnegative");
}

void adam_step(std::span<double> theta, std::span<const double> grad, AdamState& state,
               const TrainConfig& config) {
  const std::size_t p = theta.size();
  if (grad.size() != p || state.m.size() != p || state.v.size() != p) {
    throw ArgumentError("Adam: gradient/state length does not match parameters");
  }
  const std::uint64_t step = state.t + 1;
  for (double g : grad) {
    if (!std::isfinite(g)) throw TrainingError("non-finite gradient", step);
  }
  state.t = step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t j = 0; j < p; ++j) {
    const double g = grad[j];
    state.m[j] = b1 * state.m[j] + (1.0 - b1) * g;
    state.v[j] = b2 * state.v[j] + (1.0 - b2) * g * g;
    const double m_hat = state.m[j] / c1;
    const double v_hat = state.v[j] / c2;
    theta[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    if (!std::isfinite(theta[j])) throw TrainingError("non-finite parameter", step);
  }
}

MlpParams initial_params(std::span<const std::size_t> widths, const TrainConfig& config) {
  return init_gaussian(widths, config.init_scale, derive_seed(config.seed, streams::kInit));
}

double error_rate(const MlpParams& params, const LabeledDataset& data) {
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto z = logits(params, data.features.row(i));
    if (argmax(z) != static_cast<std::size_t>(data.labels[i])) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

double mean_loss(const MlpParams& params, const LabeledDataset& data) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total += cross_entropy(logits(params, data.features.row(i)), data.labels[i]).loss;
  }
  return total / static_cast<double>(data.size());
}

TrainResult train(const MlpParams& init, const LabeledDataset& data, const TrainConfig& config) {
  config.validate();
  init.validate();
  data.validate();
  if (data.dim() != init.input_dim()) throw ArgumentError("data dimension does not match network");
  if (static_cast<std::size_t>(data.num_classes) != init.output_dim()) {
    throw ArgumentError("class count does not match network outputs");
  }

  TrainResult result{init, {}};
  std::vector<double> theta = init.flatten();
  AdamState state(theta.size());
  Rng rng(derive_seed(config.seed, streams::kShuffle));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  MlpParams& current = result.params;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[uniform_index(rng, i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const auto grad = loss_gradient_rows(current, data.features, data.labels, batch, nullptr);
      adam_step(theta, grad, state, config);
      current.assign(theta);
    }
    result.history.mean_loss.push_back(mean_loss(current, data));
    result.history.train_error.push_back(error_rate(current, data));
    if (!std::isfinite(result.history.mean_loss.back())) {
      throw TrainingError("non-finite training loss", state.t);
    }
    if (config.stop_at_zero_error && result.history.train_error.back() == 0.0) break;
  }
  return result;
}

}  // namespace pacbayes
