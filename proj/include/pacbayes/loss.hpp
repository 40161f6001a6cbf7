#pragma once

#include <span>
#include <vector>

namespace pacbayes {

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> probs;
};

/// Softmax cross-entropy with max-subtraction; loss = -log p[label].
CrossEntropy cross_entropy(std::span<const double> logits, int label);

/// Index of the largest logit (first on ties).
std::size_t argmax(std::span<const double> v);

}  // namespace pacbayes
