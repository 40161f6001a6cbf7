#include "pacbayes/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "pacbayes/errors.hpp"
#include "pacbayes/matrix.hpp"
#include "pacbayes/rng.hpp"

namespace pacbayes {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ArgumentError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw ArgumentError("not a number: '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    throw ArgumentError("not an integer: '" + s + "'");
  }
  if (used != s.size()) throw ArgumentError("not an integer: '" + s + "'");
  return v;
}

std::string clean_status(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

// Class c gets ceil(n/k) rows for c < n mod k, floor(n/k) otherwise.
LabeledDataset synthetic_rows(const SyntheticSpec& base, std::size_t n, std::uint64_t seed) {
  const auto k = static_cast<std::size_t>(base.num_classes);
  SyntheticSpec spec = base;
  spec.samples_per_class = (n + k - 1) / k;
  spec.seed = seed;
  const auto full = make_synthetic(spec);
  const std::size_t rem = n % k;
  std::vector<std::size_t> keep;
  keep.reserve(n);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t take = n / k + (c < rem ? 1 : 0);
    for (std::size_t i = 0; i < take; ++i) keep.push_back(c * spec.samples_per_class + i);
  }
  auto out = full.select(keep);
  out.name = "synthetic";
  return out;
}

fs::path run_dir(const fs::path& out, double r, std::size_t n, std::uint64_t seed) {
  return out / "runs" / ("r" + num(r) + "_n" + std::to_string(n) + "_s" + std::to_string(seed));
}

// Everything that determines the trained weights of one run.
std::string training_fingerprint(const SweepConfig& cfg, std::size_t n, double r, std::uint64_t seed) {
  SweepConfig c = cfg;
  c.n_grid = {n};
  c.r_grid = {r};
  c.seed = seed;
  c.repeats = 1;
  c.bound = BoundConfig{};
  c.theta0_zero = false;
  c.out_dir.clear();
  return c.describe();
}

struct TrainedJob {
  MlpParams init;
  MlpParams params;
  RunData data;
};

TrainedJob train_or_resume(const SweepConfig& cfg, const LabeledDataset* source, std::size_t n, double r,
                           std::uint64_t seed) {
  TrainedJob job;
  job.data = prepare_run_data(cfg, source, n, r, seed);
  const auto widths = network_widths(cfg, job.data.train.dim());
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  job.init = initial_params(widths, tc);

  fs::path ckpt, stamp;
  const auto fingerprint = training_fingerprint(cfg, n, r, seed);
  if (!cfg.out_dir.empty()) {
    ckpt = run_dir(cfg.out_dir, r, n, seed) / "params.ckpt";
    stamp = run_dir(cfg.out_dir, r, n, seed) / "train.txt";
    if (fs::exists(ckpt) && fs::exists(stamp) && read_text_file(stamp) == fingerprint) {
      job.params = read_checkpoint(ckpt);
      if (job.params.widths() != widths) {
        throw ConsistencyError("checkpoint " + ckpt.string() + " does not match the configured architecture");
      }
      return job;
    }
  }
  job.params = train(job.init, job.data.train, tc).params;
  if (!ckpt.empty()) {
    fs::create_directories(ckpt.parent_path());
    write_checkpoint(ckpt, job.params);
    write_text_file(stamp, fingerprint);
  }
  return job;
}

BoundConfig run_bound_config(const SweepConfig& cfg, const TrainedJob& job) {
  BoundConfig bc = cfg.bound;
  bc.num_classes = cfg.data.num_classes();
  bc.prior_mean = cfg.theta0_zero ? std::vector<double>{} : job.init.flatten();
  return bc;
}

const std::vector<std::string>& sweep_columns() {
  static const std::vector<std::string> cols = {
      "r",           "n",           "seed",        "status",
      "train_error", "test_error",  "gamma",       "sigma2",
      "eta",         "delta",       "p",           "margin_loss",
      "p_tilde",     "effective_curvature",        "l2_term",
      "kl_exact",    "kl_total",    "rate_a",      "rate_b",
      "tail_included", "tail_term", "confidence_term", "total",
      "ec_scaled",   "l2_scaled",   "dist_sq",     "theta_l2_sq",
      "spec_prod"};
  return cols;
}

void write_sweep_outputs(const SweepConfig& cfg, const SweepResult& result) {
  if (cfg.out_dir.empty()) return;
  fs::create_directories(cfg.out_dir);
  std::string csv = sweep_csv_header() + "\n";
  std::string timings = "r,n,seed,wall_seconds\n";
  for (const auto& row : result.rows) {
    csv += sweep_csv_row(row) + "\n";
    timings += num(row.r) + "," + std::to_string(row.n) + "," + std::to_string(row.seed) + "," +
               num(row.wall_seconds) + "\n";
  }
  write_text_file(cfg.out_dir / "results.csv", csv);
  write_text_file(cfg.out_dir / "timings.csv", timings);
  write_text_file(cfg.out_dir / "config.txt", cfg.describe());

  static const std::vector<std::string> metrics = {"train_error", "test_error", "margin_loss",
                                                   "effective_curvature", "l2_term", "total",
                                                   "dist_sq", "theta_l2_sq", "spec_prod"};
  std::string summary = "r,n,count";
  for (const auto& m : metrics) summary += ",mean_" + m + ",std_" + m;
  summary += "\n";
  std::set<std::pair<double, std::size_t>> points;
  for (const auto& row : result.rows) points.insert({row.r, row.n});
  for (const auto& [r, n] : points) {
    summary += num(r) + "," + std::to_string(n) + "," + std::to_string(grid_stats(result, r, n, "total").count);
    for (const auto& m : metrics) {
      const auto s = grid_stats(result, r, n, m);
      summary += "," + num(s.mean) + "," + num(s.stddev);
    }
    summary += "\n";
  }
  write_text_file(cfg.out_dir / "summary.csv", summary);
}

}  // namespace

int DataSourceConfig::num_classes() const {
  return kind == DataKind::kSynthetic ? synthetic.num_classes : 10;
}

void SweepConfig::validate() const {
  if (n_grid.empty()) throw ArgumentError("n grid must be nonempty");
  if (r_grid.empty()) throw ArgumentError("r grid must be nonempty");
  if (repeats < 1) throw ArgumentError("repeats must be >= 1");
  if (depth < 1) throw ArgumentError("depth must be >= 1");
  if (width < 1) throw ArgumentError("width must be >= 1");
  const auto k = static_cast<std::size_t>(data.num_classes());
  if (data.kind == DataKind::kSynthetic) {
    SyntheticSpec s = data.synthetic;
    s.samples_per_class = 1;
    s.validate();
  } else if (data.kind == DataKind::kMnist) {
    if (data.mnist_images.empty() || data.mnist_labels.empty()) {
      throw ArgumentError("MNIST needs both an images and a labels file");
    }
  } else if (data.cifar_bins.empty()) {
    throw ArgumentError("CIFAR-10 needs at least one batch file");
  }
  for (auto n : n_grid) {
    if (n < k) throw ArgumentError("n must be at least the class count");
    if (data.kind != DataKind::kSynthetic && n % k != 0) {
      throw ArgumentError("n must be divisible by the class count for image data");
    }
  }
  if (data.n_test < k) throw ArgumentError("test size must be at least the class count");
  if (data.kind != DataKind::kSynthetic && data.n_test % k != 0) {
    throw ArgumentError("test size must be divisible by the class count for image data");
  }
  for (double r : r_grid) {
    if (!(r >= 0.0 && r <= 1.0)) throw ArgumentError("randomness r must be in [0, 1]");
  }
  train.validate();
  if (!(bound.gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  if (!(bound.sigma2 > 0.0)) throw ArgumentError("sigma2 must be positive");
  if (!(bound.eta > 0.0 && bound.eta < 1.0)) throw ArgumentError("eta must be in (0, 1)");
  if (!(bound.delta > 0.0 && bound.delta < 1.0)) throw ArgumentError("delta must be in (0, 1)");
}

std::string SweepConfig::describe() const {
  std::ostringstream s;
  const char* kind = data.kind == DataKind::kSynthetic ? "synthetic" : data.kind == DataKind::kMnist ? "mnist" : "cifar";
  s << "data=" << kind << "\n";
  if (data.kind == DataKind::kSynthetic) {
    s << "synthetic_classes=" << data.synthetic.num_classes << "\n"
      << "synthetic_dim=" << data.synthetic.dim << "\n"
      << "synthetic_separation=" << num(data.synthetic.cluster_separation) << "\n"
      << "synthetic_noise=" << num(data.synthetic.noise_std) << "\n";
  } else if (data.kind == DataKind::kMnist) {
    s << "mnist_images=" << data.mnist_images.string() << "\n"
      << "mnist_labels=" << data.mnist_labels.string() << "\n";
  } else {
    for (const auto& p : data.cifar_bins) s << "cifar_bin=" << p.string() << "\n";
  }
  s << "n_test=" << data.n_test << "\n";
  s << "n=";
  for (std::size_t i = 0; i < n_grid.size(); ++i) s << (i ? "," : "") << n_grid[i];
  s << "\nr=";
  for (std::size_t i = 0; i < r_grid.size(); ++i) s << (i ? "," : "") << num(r_grid[i]);
  s << "\ndepth=" << depth << "\n"
    << "width=" << width << "\n"
    << "repeats=" << repeats << "\n"
    << "seed=" << seed << "\n"
    << "theta0_zero=" << (theta0_zero ? "true" : "false") << "\n"
    << "lr=" << num(train.learning_rate) << "\n"
    << "batch=" << train.batch_size << "\n"
    << "epochs=" << train.epochs << "\n"
    << "beta1=" << num(train.beta1) << "\n"
    << "beta2=" << num(train.beta2) << "\n"
    << "adam_epsilon=" << num(train.epsilon) << "\n"
    << "init_scale=" << num(train.init_scale) << "\n"
    << "stop_at_zero_error=" << (train.stop_at_zero_error ? "true" : "false") << "\n"
    << "sigma2=" << num(bound.sigma2) << "\n"
    << "gamma=" << num(bound.gamma) << "\n"
    << "eta=" << num(bound.eta) << "\n"
    << "delta=" << num(bound.delta) << "\n"
    << "include_tail=" << (bound.include_tail ? "true" : "false") << "\n"
    << "tail_variant=" << (bound.variant == TailVariant::kNonSmoothTwoClass ? "nonsmooth" : "multiclass") << "\n"
    << "margin_inflation=" << (bound.margin_inflation ? "true" : "false") << "\n"
    << "exact_kl=" << (bound.use_exact_kl ? "true" : "false") << "\n";
  if (bound.tail_constants) {
    s << "tail_G=" << num(bound.tail_constants->G) << "\n"
      << "tail_zeta=" << num(bound.tail_constants->zeta) << "\n"
      << "tail_kappa=" << num(bound.tail_constants->kappa) << "\n"
      << "tail_alpha=" << num(bound.tail_constants->alpha) << "\n";
  }
  return s.str();
}

std::string sweep_csv_header() {
  std::string h;
  for (const auto& c : sweep_columns()) h += (h.empty() ? "" : ",") + c;
  return h;
}

std::string sweep_csv_row(const RunRow& row) {
  const auto& b = row.bound;
  const double scale = b.rate.b / (2.0 * static_cast<double>(row.n));
  std::vector<std::string> f = {num(row.r),
                                std::to_string(row.n),
                                std::to_string(row.seed),
                                clean_status(row.status),
                                num(row.train_error),
                                num(row.test_error),
                                num(b.gamma),
                                num(b.sigma2),
                                num(b.eta),
                                num(b.delta),
                                std::to_string(b.p),
                                num(b.margin_loss),
                                std::to_string(b.hessian.p_tilde),
                                num(b.effective_curvature),
                                num(b.l2_term),
                                num(b.kl_exact),
                                num(b.kl_total),
                                num(b.rate.a),
                                num(b.rate.b),
                                b.tail_included ? "1" : "0",
                                num(b.tail_term),
                                num(b.confidence_term),
                                num(b.total_bound),
                                num(scale * b.effective_curvature),
                                num(scale * b.l2_term),
                                num(row.dist_sq),
                                num(row.theta_l2_sq),
                                num(row.spec_prod)};
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
  return out;
}

RunRow parse_sweep_csv_row(const std::string& line) {
  const auto f = split(trim(line), ',');
  if (f.size() != sweep_columns().size()) {
    throw FormatError("results row has " + std::to_string(f.size()) + " fields, expected " +
                      std::to_string(sweep_columns().size()));
  }
  RunRow row;
  auto& b = row.bound;
  row.r = parse_double(f[0]);
  row.n = parse_u64(f[1]);
  row.seed = parse_u64(f[2]);
  row.status = f[3];
  row.train_error = parse_double(f[4]);
  row.test_error = parse_double(f[5]);
  b.n = row.n;
  b.gamma = parse_double(f[6]);
  b.effective_gamma = b.gamma;
  b.sigma2 = parse_double(f[7]);
  b.eta = parse_double(f[8]);
  b.delta = parse_double(f[9]);
  b.p = parse_u64(f[10]);
  b.margin_loss = parse_double(f[11]);
  b.hessian.p_tilde = parse_u64(f[12]);
  b.effective_curvature = parse_double(f[13]);
  b.l2_term = parse_double(f[14]);
  b.kl_exact = parse_double(f[15]);
  b.kl_total = parse_double(f[16]);
  b.rate.a = parse_double(f[17]);
  b.rate.b = parse_double(f[18]);
  b.tail_included = f[19] == "1";
  b.tail_term = parse_double(f[20]);
  b.confidence_term = parse_double(f[21]);
  b.total_bound = parse_double(f[22]);
  row.dist_sq = parse_double(f[25]);
  row.theta_l2_sq = parse_double(f[26]);
  row.spec_prod = parse_double(f[27]);
  return row;
}

std::optional<LabeledDataset> load_source(const DataSourceConfig& data) {
  switch (data.kind) {
    case DataKind::kSynthetic:
      return std::nullopt;
    case DataKind::kMnist:
      return load_mnist_idx(data.mnist_images, data.mnist_labels);
    case DataKind::kCifar:
      return load_cifar10_bin(data.cifar_bins);
  }
  return std::nullopt;
}

RunData prepare_run_data(const SweepConfig& cfg, const LabeledDataset* source, std::size_t n, double r,
                         std::uint64_t seed) {
  LabeledDataset train_raw, test_raw;
  if (cfg.data.kind == DataKind::kSynthetic) {
    train_raw = synthetic_rows(cfg.data.synthetic, n, derive_seed(seed, streams::kSyntheticTrain));
    test_raw = synthetic_rows(cfg.data.synthetic, cfg.data.n_test, derive_seed(seed, streams::kSyntheticTest));
  } else {
    if (source == nullptr) throw ArgumentError("image data source not loaded");
    auto split_sets = balanced_split(*source, n, cfg.data.n_test, derive_seed(seed, streams::kSubsample));
    train_raw = std::move(split_sets.train);
    test_raw = std::move(split_sets.test);
  }
  const auto stats = scalar_stats(train_raw);
  RunData out;
  out.train = randomize_labels(apply_normalization(train_raw, stats), r, derive_seed(seed, streams::kLabels));
  out.test = apply_normalization(test_raw, stats);
  return out;
}

std::vector<std::size_t> network_widths(const SweepConfig& cfg, std::size_t input_dim) {
  std::vector<std::size_t> widths{input_dim};
  for (std::size_t h = 1; h < cfg.depth; ++h) widths.push_back(cfg.width);
  widths.push_back(static_cast<std::size_t>(cfg.data.num_classes()));
  return widths;
}

RunRow run_single(const SweepConfig& cfg, const LabeledDataset* source, std::size_t n, double r,
                  std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  RunRow row;
  row.r = r;
  row.n = n;
  row.seed = seed;

  fs::path row_file;
  if (!cfg.out_dir.empty()) row_file = run_dir(cfg.out_dir, r, n, seed) / "row.csv";

  try {
    const auto job = train_or_resume(cfg, source, n, r, seed);
    const auto bc = run_bound_config(cfg, job);
    row.bound = evaluate_bound(job.params, job.data.train, bc);
    row.train_error = error_rate(job.params, job.data.train);
    row.test_error = error_rate(job.params, job.data.test);
    const auto theta = job.params.flatten();
    const auto theta0 = bc.resolved_prior_mean(theta.size());
    row.theta_l2_sq = squared_norm(theta);
    double d2 = 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) d2 += (theta[j] - theta0[j]) * (theta[j] - theta0[j]);
    row.dist_sq = d2;
    row.spec_prod = spectral_norm_product(job.params).value;
  } catch (const TrainingError& e) {
    const double nan = std::nan("");
    row.status = std::string("failed: ") + e.what();
    row.train_error = row.test_error = nan;
    row.dist_sq = row.theta_l2_sq = row.spec_prod = nan;
    row.bound.n = n;
    row.bound.gamma = cfg.bound.gamma;
    row.bound.sigma2 = cfg.bound.sigma2;
    row.bound.eta = cfg.bound.eta;
    row.bound.delta = cfg.bound.delta;
    row.bound.margin_loss = row.bound.effective_curvature = row.bound.l2_term = nan;
    row.bound.kl_exact = row.bound.kl_total = row.bound.total_bound = nan;
    row.bound.confidence_term = row.bound.tail_term = nan;
  }
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!row_file.empty()) {
    fs::create_directories(row_file.parent_path());
    write_text_file(row_file, sweep_csv_header() + "\n" + sweep_csv_row(row) + "\n");
  }
  return row;
}

SweepResult run_grid(const SweepConfig& cfg) {
  cfg.validate();
  const auto source = load_source(cfg.data);
  const LabeledDataset* src = source ? &*source : nullptr;

  std::vector<std::tuple<double, std::size_t, std::uint64_t>> jobs;
  for (double r : cfg.r_grid) {
    for (auto n : cfg.n_grid) {
      for (std::size_t s = 0; s < cfg.repeats; ++s) jobs.emplace_back(r, n, cfg.seed + s);
    }
  }
  std::sort(jobs.begin(), jobs.end());
  jobs.erase(std::unique(jobs.begin(), jobs.end()), jobs.end());

  SweepResult result;
  result.rows.resize(jobs.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    try {
      const auto& [r, n, seed] = jobs[i];
      result.rows[i] = run_single(cfg, src, n, r, seed);
    } catch (...) {
#pragma omp critical(pacbayes_sweep_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  write_sweep_outputs(cfg, result);
  return result;
}

SweepResult sweep_random_labels(const SweepConfig& cfg) { return run_grid(cfg); }

SweepResult sweep_sample_size(const SweepConfig& cfg) {
  SweepConfig c = cfg;
  c.r_grid = {0.0};
  return run_grid(c);
}

double metric_value(const RunRow& row, const std::string& metric) {
  const auto& b = row.bound;
  if (metric == "train_error") return row.train_error;
  if (metric == "test_error") return row.test_error;
  if (metric == "margin_loss") return b.margin_loss;
  if (metric == "effective_curvature") return b.effective_curvature;
  if (metric == "l2_term") return b.l2_term;
  if (metric == "kl_exact") return b.kl_exact;
  if (metric == "total") return b.total_bound;
  if (metric == "p_tilde") return static_cast<double>(b.hessian.p_tilde);
  if (metric == "dist_sq") return row.dist_sq;
  if (metric == "theta_l2_sq") return row.theta_l2_sq;
  if (metric == "spec_prod") return row.spec_prod;
  throw ArgumentError("unknown metric '" + metric + "'");
}

GridStats grid_stats(const SweepResult& result, double r, std::size_t n, const std::string& metric) {
  std::vector<double> v;
  for (const auto& row : result.rows) {
    if (row.ok() && row.r == r && row.n == n) v.push_back(metric_value(row, metric));
  }
  GridStats s;
  s.count = v.size();
  if (v.empty()) {
    s.mean = s.stddev = std::nan("");
    return s;
  }
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::vector<double> canonical_sigma_grid(std::vector<double> grid) {
  for (double s : grid) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ArgumentError("sigma2 grid values must be positive and finite");
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.empty()) throw ArgumentError("sigma2 grid must be nonempty");
  return grid;
}

SigmaSweepResult sigma_profile(const MlpParams& params, const LabeledDataset& train_set, const BoundConfig& base,
                               const std::vector<double>& sigma2_grid, std::uint64_t seed) {
  const auto grid = canonical_sigma_grid(sigma2_grid);
  const auto hdiag = hessian_diag(params, train_set);
  SigmaSweepResult out;
  for (double s2 : grid) {
    BoundConfig bc = base;
    bc.sigma2 = s2;
    bc.prior_variances.clear();
    const auto rep = evaluate_bound_with_hessian(params, train_set, bc, hdiag);
    out.rows.push_back({seed, s2, rep.margin_loss, rep.hessian.p_tilde, rep.effective_curvature, rep.l2_term,
                        rep.total_bound});
  }
  SigmaSeedSummary sum;
  sum.seed = seed;
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    if (out.rows[i].total < out.rows[best].total) best = i;
  }
  sum.argmin_sigma2 = out.rows[best].sigma2;
  sum.min_total = out.rows[best].total;
  sum.u_shape = best > 0 && best + 1 < out.rows.size();
  out.summary.push_back(sum);
  return out;
}

SigmaSweepResult sweep_sigma(const SweepConfig& cfg, const std::vector<double>& sigma2_grid) {
  cfg.validate();
  const auto grid = canonical_sigma_grid(sigma2_grid);
  const auto source = load_source(cfg.data);
  const LabeledDataset* src = source ? &*source : nullptr;
  const std::size_t n = cfg.n_grid.front();
  const double r = cfg.r_grid.front();

  std::vector<SigmaSweepResult> per_seed(cfg.repeats);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t s = 0; s < cfg.repeats; ++s) {
    try {
      const std::uint64_t seed = cfg.seed + s;
      const auto job = train_or_resume(cfg, src, n, r, seed);
      per_seed[s] = sigma_profile(job.params, job.data.train, run_bound_config(cfg, job), grid, seed);
    } catch (...) {
#pragma omp critical(pacbayes_sigma_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  SigmaSweepResult out;
  for (auto& ps : per_seed) {
    out.rows.insert(out.rows.end(), ps.rows.begin(), ps.rows.end());
    out.summary.insert(out.summary.end(), ps.summary.begin(), ps.summary.end());
  }
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::string csv = "seed,sigma2,margin_loss,p_tilde,effective_curvature,l2_term,total\n";
    for (const auto& row : out.rows) {
      csv += std::to_string(row.seed) + "," + num(row.sigma2) + "," + num(row.margin_loss) + "," +
             std::to_string(row.p_tilde) + "," + num(row.effective_curvature) + "," + num(row.l2_term) + "," +
             num(row.total) + "\n";
    }
    std::string summary = "seed,argmin_sigma2,min_total,u_shape\n";
    for (const auto& s : out.summary) {
      summary += std::to_string(s.seed) + "," + num(s.argmin_sigma2) + "," + num(s.min_total) + "," +
                 (s.u_shape ? "1" : "0") + "\n";
    }
    write_text_file(cfg.out_dir / "sigma.csv", csv);
    write_text_file(cfg.out_dir / "sigma_summary.csv", summary);
    write_text_file(cfg.out_dir / "config.txt", cfg.describe());
  }
  return out;
}

std::vector<NormRow> norm_rows(const SweepResult& result) {
  std::vector<NormRow> out;
  for (const auto& row : result.rows) {
    if (!row.ok() || row.r != 0.0) continue;
    const double n = static_cast<double>(row.n);
    out.push_back({row.n, row.seed, row.theta_l2_sq, row.spec_prod, row.theta_l2_sq / n, row.spec_prod / n});
  }
  std::sort(out.begin(), out.end(),
            [](const NormRow& a, const NormRow& b) { return std::tie(a.n, a.seed) < std::tie(b.n, b.seed); });
  return out;
}

std::string norms_csv(const std::vector<NormRow>& rows) {
  std::string csv = "n,seed,l2_sq,spec_prod,l2_sq_per_n,spec_prod_per_n\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.n) + "," + std::to_string(r.seed) + "," + num(r.l2_sq) + "," + num(r.spec_prod) + "," +
           num(r.l2_sq_per_n) + "," + num(r.spec_prod_per_n) + "\n";
  }
  return csv;
}

std::vector<NormRow> compare_norms(const SweepConfig& cfg) {
  const auto rows = norm_rows(sweep_sample_size(cfg));
  if (!cfg.out_dir.empty()) write_text_file(cfg.out_dir / "norms.csv", norms_csv(rows));
  return rows;
}

// ---- plots ----

namespace {

struct PlotKind {
  std::string x;
  std::vector<std::string> series;
};

PlotKind plot_kind(const std::string& kind) {
  if (kind == "random-labels") return {"r", {"test_error", "margin_loss", "effective_curvature", "l2_term", "total"}};
  if (kind == "sample-size") return {"n", {"test_error", "total", "ec_scaled", "l2_scaled"}};
  if (kind == "sigma") return {"sigma2", {"total", "effective_curvature", "l2_term"}};
  if (kind == "norms") return {"n", {"l2_sq", "spec_prod"}};
  throw ArgumentError("unknown plot kind '" + kind + "'");
}

std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string label(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string render_plot_svg(const std::string& csv_text, const std::string& kind) {
  const auto pk = plot_kind(kind);
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ArgumentError("plot input has no header");
  const auto header = split(trim(line), ',');
  auto column = [&](const std::string& name) -> std::ptrdiff_t {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  const auto xi = column(pk.x);
  if (xi < 0) throw ArgumentError("plot input lacks column '" + pk.x + "'");
  std::vector<std::ptrdiff_t> si;
  for (const auto& s : pk.series) {
    si.push_back(column(s));
    if (si.back() < 0) throw ArgumentError("plot input lacks column '" + s + "'");
  }
  const auto status_i = column("status");

  // series -> x -> values
  std::vector<std::map<double, std::vector<double>>> data(pk.series.size());
  std::set<double> xs;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != header.size()) throw ArgumentError("plot input row has the wrong field count");
    if (status_i >= 0 && f[static_cast<std::size_t>(status_i)] != "ok") continue;
    const double x = parse_double(f[static_cast<std::size_t>(xi)]);
    xs.insert(x);
    ++rows;
    for (std::size_t s = 0; s < si.size(); ++s) {
      const double v = parse_double(f[static_cast<std::size_t>(si[s])]);
      if (std::isfinite(v)) data[s][x].push_back(v);
    }
  }
  if (rows == 0) throw ArgumentError("plot input has no data rows");

  const std::vector<double> xv(xs.begin(), xs.end());
  const double pw = 260, ph = 200, ml = 50, mt = 30, iw = 190, ih = 130;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(pw * static_cast<double>(pk.series.size()), 0)
      << "\" height=\"" << fixed(ph, 0) << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  for (std::size_t s = 0; s < pk.series.size(); ++s) {
    struct Mark {
      double x, mean, sd;
    };
    std::vector<Mark> marks;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const auto it = data[s].find(xv[i]);
      if (it == data[s].end() || it->second.empty()) continue;
      const auto& v = it->second;
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double sd = 0.0;
      if (v.size() > 1) {
        for (double x : v) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
      }
      marks.push_back({static_cast<double>(i), mean, sd});
    }
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto& m : marks) {
      lo = first ? m.mean - m.sd : std::min(lo, m.mean - m.sd);
      hi = first ? m.mean + m.sd : std::max(hi, m.mean + m.sd);
      first = false;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double ox = pw * static_cast<double>(s) + ml;
    auto px = [&](double i) {
      return xv.size() == 1 ? ox + iw / 2 : ox + iw * i / static_cast<double>(xv.size() - 1);
    };
    auto py = [&](double v) { return mt + ih * (hi - v) / (hi - lo); };

    svg << "<g class=\"panel\" data-series=\"" << pk.series[s] << "\">\n";
    svg << "<text x=\"" << fixed(ox + iw / 2) << "\" y=\"" << fixed(mt - 12) << "\" text-anchor=\"middle\">"
        << pk.series[s] << "</text>\n";
    svg << "<rect x=\"" << fixed(ox) << "\" y=\"" << fixed(mt) << "\" width=\"" << fixed(iw) << "\" height=\""
        << fixed(ih) << "\" fill=\"none\" stroke=\"#888\"/>\n";
    svg << "<text x=\"" << fixed(ox - 4) << "\" y=\"" << fixed(mt + 4) << "\" text-anchor=\"end\">" << label(hi)
        << "</text>\n";
    svg << "<text x=\"" << fixed(ox - 4) << "\" y=\"" << fixed(mt + ih) << "\" text-anchor=\"end\">" << label(lo)
        << "</text>\n";
    for (std::size_t i = 0; i < xv.size(); ++i) {
      svg << "<text x=\"" << fixed(px(static_cast<double>(i))) << "\" y=\"" << fixed(mt + ih + 14)
          << "\" text-anchor=\"middle\">" << label(xv[i]) << "</text>\n";
    }
    svg << "<text x=\"" << fixed(ox + iw / 2) << "\" y=\"" << fixed(mt + ih + 30) << "\" text-anchor=\"middle\">"
        << pk.x << "</text>\n";
    for (const auto& m : marks) {
      const double x = px(m.x);
      svg << "<line class=\"errbar\" x1=\"" << fixed(x) << "\" y1=\"" << fixed(py(m.mean - m.sd)) << "\" x2=\""
          << fixed(x) << "\" y2=\"" << fixed(py(m.mean + m.sd)) << "\" stroke=\"#1f77b4\"/>\n";
      svg << "<circle class=\"mark\" data-series=\"" << pk.series[s] << "\" cx=\"" << fixed(x) << "\" cy=\""
          << fixed(py(m.mean)) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_plot(const fs::path& csv_path, const std::string& kind, const fs::path& svg_path) {
  plot_kind(kind);
  const auto svg = render_plot_svg(read_text_file(csv_path), kind);
  write_text_file(svg_path, svg);
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ArgumentError("config line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string(), 0);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace pacbayes
