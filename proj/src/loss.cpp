#include "pacbayes/loss.hpp"

#include <algorithm>
#include <cmath>

#include "pacbayes/errors.hpp"

namespace pacbayes {

CrossEntropy cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ArgumentError("label " + std::to_string(label) + " out of range");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  CrossEntropy out;
  out.probs.resize(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out.probs[c] = std::exp(logits[c] - m);
    sum += out.probs[c];
  }
  for (double& p : out.probs) p /= sum;
  out.loss = std::log(sum) - (logits[static_cast<std::size_t>(label)] - m);
  return out;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace pacbayes
