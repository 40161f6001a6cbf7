#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pacbayes/bound.hpp"
#include "pacbayes/dataset.hpp"
#include "pacbayes/network.hpp"
#include "pacbayes/trainer.hpp"

namespace pacbayes {

enum class DataKind { kSynthetic, kMnist, kCifar };

struct DataSourceConfig {
  DataKind kind = DataKind::kSynthetic;
  /// Class count, dimension, separation and noise for synthetic data;
  /// samples_per_class and seed are set per run.
  SyntheticSpec synthetic;
  std::filesystem::path mnist_images;
  std::filesystem::path mnist_labels;
  std::vector<std::filesystem::path> cifar_bins;
  /// Held-out test rows per run (balanced).
  std::size_t n_test = 600;

  int num_classes() const;
};

/// Sweep training defaults: Adam lr 0.001, batch 128, trained until the
/// first epoch with zero training error (at most 20000 epochs).
inline TrainConfig default_sweep_training() {
  TrainConfig t;
  t.learning_rate = 0.001;
  t.batch_size = 128;
  t.epochs = 20000;
  t.stop_at_zero_error = true;
  return t;
}

struct SweepConfig {
  DataSourceConfig data;
  std::vector<std::size_t> n_grid{300};
  std::vector<double> r_grid{0.0};
  /// Number of weight layers.
  std::size_t depth = 2;
  std::size_t width = 16;
  TrainConfig train = default_sweep_training();
  BoundConfig bound;
  std::size_t repeats = 5;
  /// Repeat i runs with seed + i.
  std::uint64_t seed = 0;
  /// Prior mean 0 instead of the initialization.
  bool theta0_zero = false;
  std::filesystem::path out_dir;

  void validate() const;
  /// Every setting as key=value lines, defaults resolved.
  std::string describe() const;
};

/// Result of one (grid point, seed) job.
struct RunRow {
  double r = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  double train_error = 0.0;
  double test_error = 0.0;
  BoundReport bound;
  /// |theta - theta_0|^2
  double dist_sq = 0.0;
  /// |theta|^2
  double theta_l2_sq = 0.0;
  double spec_prod = 0.0;
  double wall_seconds = 0.0;

  bool ok() const { return status == "ok"; }
};

struct SweepResult {
  /// Sorted by (r, n, seed).
  std::vector<RunRow> rows;
};

/// Column list of results.csv.
std::string sweep_csv_header();
std::string sweep_csv_row(const RunRow& row);
/// Parses a results.csv row written by sweep_csv_row.
RunRow parse_sweep_csv_row(const std::string& line);

struct RunData {
  LabeledDataset train;
  LabeledDataset test;
};

/// Normalized training set (labels randomized with fraction r) and clean
/// test set for one run. `source` is the loaded image data for MNIST/CIFAR.
RunData prepare_run_data(const SweepConfig& cfg, const LabeledDataset* source, std::size_t n, double r,
                         std::uint64_t seed);

/// Loads the configured image files; nullopt for synthetic data.
std::optional<LabeledDataset> load_source(const DataSourceConfig& data);

std::vector<std::size_t> network_widths(const SweepConfig& cfg, std::size_t input_dim);

/// Trains and evaluates one job. Reuses out_dir checkpoints when present.
RunRow run_single(const SweepConfig& cfg, const LabeledDataset* source, std::size_t n, double r,
                  std::uint64_t seed);

/// Every (n, r, seed) job; writes results.csv, summary.csv, timings.csv and
/// config.txt to cfg.out_dir when set.
SweepResult run_grid(const SweepConfig& cfg);

SweepResult sweep_random_labels(const SweepConfig& cfg);
/// run_grid with r fixed at 0.
SweepResult sweep_sample_size(const SweepConfig& cfg);

struct GridStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

/// Mean and sample standard deviation of `metric` over successful rows at (r, n).
GridStats grid_stats(const SweepResult& result, double r, std::size_t n, const std::string& metric);
double metric_value(const RunRow& row, const std::string& metric);

struct SigmaRow {
  std::uint64_t seed = 0;
  double sigma2 = 0.0;
  double margin_loss = 0.0;
  std::size_t p_tilde = 0;
  double effective_curvature = 0.0;
  double l2_term = 0.0;
  double total = 0.0;
};

struct SigmaSeedSummary {
  std::uint64_t seed = 0;
  double argmin_sigma2 = 0.0;
  double min_total = 0.0;
  /// Minimum strictly inside the grid.
  bool u_shape = false;
};

struct SigmaSweepResult {
  std::vector<SigmaRow> rows;
  std::vector<SigmaSeedSummary> summary;
};

/// Sorted, deduplicated copy of a sigma^2 grid.
std::vector<double> canonical_sigma_grid(std::vector<double> grid);

/// Re-evaluates the bound of one trained network (first n, first r of the
/// config) per seed across the sigma^2 grid without retraining.
SigmaSweepResult sweep_sigma(const SweepConfig& cfg, const std::vector<double>& sigma2_grid);

/// Bound components across a sigma^2 grid for a fixed network.
SigmaSweepResult sigma_profile(const MlpParams& params, const LabeledDataset& train, const BoundConfig& base,
                               const std::vector<double>& sigma2_grid, std::uint64_t seed);

struct NormRow {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double l2_sq = 0.0;
  double spec_prod = 0.0;
  double l2_sq_per_n = 0.0;
  double spec_prod_per_n = 0.0;
};

std::vector<NormRow> norm_rows(const SweepResult& result);
/// Columns: n,seed,l2_sq,spec_prod,l2_sq_per_n,spec_prod_per_n
std::string norms_csv(const std::vector<NormRow>& rows);
/// Runs sweep_sample_size and writes norms.csv.
std::vector<NormRow> compare_norms(const SweepConfig& cfg);

/// Plot kinds: random-labels, sample-size, sigma, norms.
/// Writes a static SVG with mean +/- std error bars per grid point and
/// series; throws ArgumentError (writing nothing) on an unknown kind,
/// missing columns or no data rows.
void emit_plot(const std::filesystem::path& csv_path, const std::string& kind,
               const std::filesystem::path& svg_path);
std::string render_plot_svg(const std::string& csv_text, const std::string& kind);

/// key=value lines; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_key_values(const std::string& text);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace pacbayes
