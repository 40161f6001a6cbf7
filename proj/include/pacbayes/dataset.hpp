#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pacbayes/matrix.hpp"

namespace pacbayes {

/// Feature matrix (one sample per row) with integer class labels.
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  /// Throws ArgumentError unless n > 0, d > 0, k >= 2, rows match labels and
  /// every label is in [0, k).
  void validate() const;

  std::vector<std::size_t> class_counts() const;

  /// Rows `indices` in the given order.
  LabeledDataset select(std::span<const std::size_t> indices) const;
};

struct SyntheticSpec {
  int num_classes = 3;
  std::size_t dim = 20;
  std::size_t samples_per_class = 100;
  double cluster_separation = 4.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// MNIST IDX magic numbers.
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
// One label byte followed by 3 x 32 x 32 channel-major pixel bytes.
inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarPixels = 3072;

LabeledDataset load_mnist_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path);

LabeledDataset load_cifar10_bin(std::span<const std::filesystem::path> paths);

/// IDX encoders (inverse of load_mnist_idx); pixel values must be integral in [0, 255].
std::vector<std::uint8_t> encode_idx_images(const LabeledDataset& ds, std::uint32_t rows,
                                            std::uint32_t cols);
std::vector<std::uint8_t> encode_idx_labels(const LabeledDataset& ds);
std::vector<std::uint8_t> encode_cifar10(const LabeledDataset& ds);

/// k Gaussian clusters; class c is centred at (separation / sqrt 2) * e_c so
/// every pair of centres is exactly `cluster_separation` apart. Samples are
/// class-major.
LabeledDataset make_synthetic(const SyntheticSpec& spec);

/// Scalar statistics over every entry of a feature matrix.
struct ScalarStats {
  double mean = 0.0;
  double stddev = 1.0;
};

inline constexpr double kStdFloor = 1e-12;

ScalarStats scalar_stats(const LabeledDataset& ds);
LabeledDataset apply_normalization(const LabeledDataset& ds, const ScalarStats& stats);
/// Subtract the global mean and divide by the global standard deviation
/// (floored at kStdFloor).
LabeledDataset normalize(const LabeledDataset& ds);

struct LabelRandomization {
  LabeledDataset data;
  /// Row indices whose label was redrawn, ascending.
  std::vector<std::size_t> redrawn;
};

/// For each class c, round(r * n_c) members chosen without replacement get a
/// label drawn uniformly from all k classes (the draw may repeat the
/// original label).
LabelRandomization randomize_labels_tracked(const LabeledDataset& ds, double r, std::uint64_t seed);
LabeledDataset randomize_labels(const LabeledDataset& ds, double r, std::uint64_t seed);

/// n / k rows per class drawn without replacement. Output is class-major,
/// each class's rows in ascending source order.
LabeledDataset balanced_subsample(const LabeledDataset& ds, std::size_t n, std::uint64_t seed);

/// Disjoint balanced train/test subsamples of one source.
struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset test;
};
DatasetSplit balanced_split(const LabeledDataset& ds, std::size_t n_train, std::size_t n_test,
                            std::uint64_t seed);

}  // namespace pacbayes
