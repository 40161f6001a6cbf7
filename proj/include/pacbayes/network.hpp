#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pacbayes/matrix.hpp"

namespace pacbayes {

/// Weights of a bias-free depth-k ReLU network. Layer h maps in_h -> out_h and
/// ReLU is applied after layers 1..k-1 only.
///
/// The flattened parameter vector lists layer 1 first, each layer row-major.
struct MlpParams {
  std::vector<Matrix> layers;

  /// Zero weights for widths {in_1, out_1, ..., out_k}.
  static MlpParams zeros(std::span<const std::size_t> widths);
  static MlpParams unflatten(std::span<const std::size_t> widths, std::span<const double> theta);

  std::size_t depth() const { return layers.size(); }
  std::size_t input_dim() const { return layers.front().cols(); }
  std::size_t output_dim() const { return layers.back().rows(); }
  std::size_t num_params() const;
  std::vector<std::size_t> widths() const;
  /// Index of layer h's first weight in the flattened vector.
  std::size_t layer_offset(std::size_t h) const;

  std::vector<double> flatten() const;
  /// Overwrites the weights in place; theta must have num_params() entries.
  void assign(std::span<const double> theta);

  /// Throws ArgumentError unless depth >= 2 and dimensions chain.
  void validate() const;

  bool operator==(const MlpParams&) const = default;
};

/// Gaussian weights with standard deviation init_scale / sqrt(fan_in).
MlpParams init_gaussian(std::span<const std::size_t> widths, double init_scale, std::uint64_t seed);

/// Per hidden layer, 1 where the unit's pre-activation is strictly positive.
struct ActivationMask {
  std::vector<std::vector<std::uint8_t>> layers;

  bool operator==(const ActivationMask&) const = default;
};

struct ForwardResult {
  std::vector<double> logits;
  /// pre_activations[h] = z_{h+1}; the last entry equals logits.
  std::vector<std::vector<double>> pre_activations;
};

ForwardResult forward(const MlpParams& params, std::span<const double> x);
std::vector<double> logits(const MlpParams& params, std::span<const double> x);

ActivationMask activation_mask(const MlpParams& params, std::span<const double> x);

/// (W_k D_{k-1} W_{k-1} ... D_1 W_1) x with D_h = diag(mask_h); each D_h is
/// applied to the output of the corresponding matvec, which makes the result
/// bitwise equal to forward() when mask = activation_mask(params, x).
std::vector<double> realized_linear_forward(const MlpParams& params, const ActivationMask& mask,
                                            std::span<const double> x);

MlpParams scale_params(const MlpParams& params, double lambda);

/// d logits / d theta at x (rows: outputs, columns: flattened parameters).
/// The ReLU derivative is the mask bit, so a tie at 0 contributes nothing.
Matrix output_jacobian(const MlpParams& params, std::span<const double> x);

/// Gradient of the mean softmax cross-entropy over the rows of `batch`.
std::vector<double> loss_gradient(const MlpParams& params, const Matrix& batch,
                                  std::span<const int> labels);

/// Gradient restricted to rows `rows` of `inputs`; also returns the summed
/// loss of those rows. Used by the trainer to avoid copying mini-batches.
std::vector<double> loss_gradient_rows(const MlpParams& params, const Matrix& inputs,
                                       std::span<const int> labels,
                                       std::span<const std::size_t> rows, double* loss_sum);

/// How a unit mask expands to one bit per weight.
enum class EdgeMaskLayout {
  /// Row u of W_h is off when unit u of layer h is off; layer k always on.
  kIncomingRows,
  /// Column u of W_{h+1} is off when unit u of layer h is off; layer 1
  /// always on. A weight's bit then depends only on earlier layers.
  kOutgoingColumns,
};

std::vector<std::uint8_t> edge_mask(const MlpParams& params, const ActivationMask& mask,
                                    EdgeMaskLayout layout);

// Checkpoint file layout (all integers little-endian):
//   bytes 0-3   ASCII "PBNN"
//   bytes 4-7   u32 format version (1)
//   bytes 8-11  u32 depth k
//   then (k+1) u32 widths in_1, out_1, ..., out_k
//   then num_params IEEE-754 binary64 values in flatten order
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const MlpParams& params);
MlpParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const MlpParams& params);
MlpParams read_checkpoint(const std::filesystem::path& path);

}  // namespace pacbayes
