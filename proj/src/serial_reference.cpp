#include <algorithm>
#include <limits>

#include "pacbayes/errors.hpp"
#include "pacbayes/loss.hpp"
#include "pacbayes/serial.hpp"

namespace pacbayes::serial {

std::vector<double> hessian_diag(const MlpParams& params, const LabeledDataset& data) {
  if (data.size() == 0) throw ArgumentError("hessian_diag needs a nonempty dataset");
  const std::size_t p = params.num_params();
  std::vector<double> h(p, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.features.row(i);
    const Matrix jac = output_jacobian(params, x);
    const auto probs = cross_entropy(logits(params, x), data.labels[i]).probs;
    for (std::size_t j = 0; j < p; ++j) {
      // g^T (diag(p) - p p^T) g
      double quad = 0.0, lin = 0.0;
      for (std::size_t c = 0; c < probs.size(); ++c) {
        quad += probs[c] * jac(c, j) * jac(c, j);
        lin += probs[c] * jac(c, j);
      }
      h[j] += std::max(0.0, quad - lin * lin);
    }
  }
  for (double& v : h) v /= static_cast<double>(data.size());
  return h;
}

std::vector<double> margins(const MlpParams& params, const LabeledDataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto z = logits(params, data.features.row(i));
    const auto y = static_cast<std::size_t>(data.labels[i]);
    double other = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < z.size(); ++c) {
      if (c != y) other = std::max(other, z[c]);
    }
    out.push_back(z[y] - other);
  }
  return out;
}

double margin_loss(const MlpParams& params, const LabeledDataset& data, double gamma) {
  const auto m = margins(params, data);
  const auto count = std::count_if(m.begin(), m.end(), [gamma](double v) { return v <= gamma; });
  return static_cast<double>(count) / static_cast<double>(m.size());
}

}  // namespace pacbayes::serial
