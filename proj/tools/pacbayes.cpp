// Command-line front end: training, bound evaluation, sweeps, concentration
// checks and plots.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <omp.h>

#include "pacbayes/bound.hpp"
#include "pacbayes/concentration.hpp"
#include "pacbayes/errors.hpp"
#include "pacbayes/experiments.hpp"
#include "pacbayes/network.hpp"
#include "pacbayes/rng.hpp"
#include "pacbayes/trainer.hpp"

namespace fs = std::filesystem;
using namespace pacbayes;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitArgument = 2;
constexpr int kExitData = 3;
constexpr int kExitRun = 4;

struct Options {
  std::vector<std::size_t> n{300};
  std::vector<double> r{0.0};
  std::size_t depth = 2;
  std::size_t width = 16;
  std::vector<double> sigma2{100.0};
  double gamma = 0.0;
  double eta = 0.1;
  double delta = 0.05;
  std::uint64_t seed = 0;
  std::size_t repeats = 5;
  std::string out;
  std::string mnist_images, mnist_labels;
  std::vector<std::string> cifar_bins;
  std::string synthetic = "3,20,100,4,1";
  std::size_t n_test = 600;
  std::size_t epochs = 20000;
  double lr = 0.001;
  std::size_t batch = 128;
  double init_scale = 1.0;
  bool stop_at_zero = true;
  bool include_tail = false;
  std::string tail_variant = "nonsmooth";
  bool margin_inflation = false;
  bool exact_kl = false;
  bool theta0_zero = false;
  int threads = 0;

  // train / bound
  std::string checkpoint;
  std::string init_checkpoint;
  std::string csv;

  // conc-check
  std::string conc_kind = "isotropic-quadratic";
  std::size_t p = 16;
  std::uint64_t trials = 100000;
  std::vector<double> grid;

  // plot
  std::string plot_kind;
  std::string plot_csv;
};

void add_data_options(CLI::App* app, Options& o, bool n_required) {
  auto* n = app->add_option("--n", o.n, "training set size (comma list for sweeps)")->delimiter(',');
  if (n_required) n->required();
  app->add_option("--depth", o.depth, "number of weight layers")->check(CLI::PositiveNumber);
  app->add_option("--width", o.width, "hidden width")->check(CLI::PositiveNumber);
  app->add_option("--seed", o.seed, "base seed");
  app->add_option("--mnist-images", o.mnist_images, "MNIST IDX image file");
  app->add_option("--mnist-labels", o.mnist_labels, "MNIST IDX label file");
  app->add_option("--cifar-bin", o.cifar_bins, "CIFAR-10 binary batch (repeatable)")->delimiter(',');
  app->add_option("--synthetic", o.synthetic, "k,dim,per-class,sep,noise");
  app->add_option("--n-test", o.n_test, "held-out test rows");
  app->add_option("--epochs", o.epochs, "training epochs (upper bound when stopping at zero error)");
  app->add_option("--lr", o.lr, "Adam learning rate");
  app->add_option("--batch", o.batch, "minibatch size");
  app->add_option("--init-scale", o.init_scale, "initial weight scale");
  app->add_option("--stop-at-zero-error", o.stop_at_zero, "end training at the first epoch with zero training error (true/false)");
  app->add_option("--threads", o.threads, "OpenMP threads (0 = runtime default)");
}

void add_bound_options(CLI::App* app, Options& o, bool gamma_required, bool sigma_list) {
  auto* s = app->add_option("--sigma2", o.sigma2, sigma_list ? "prior variance grid" : "prior variance");
  if (sigma_list) s->delimiter(',');
  else s->expected(1);
  auto* g = app->add_option("--gamma", o.gamma, "margin");
  if (gamma_required) g->required();
  app->add_option("--eta", o.eta, "fast-rate parameter in (0,1)");
  app->add_option("--delta", o.delta, "confidence parameter in (0,1)");
  app->add_flag("--include-tail", o.include_tail, "add the de-randomization tail term");
  app->add_option("--tail-variant", o.tail_variant, "nonsmooth or multiclass")
      ->check(CLI::IsMember({"nonsmooth", "multiclass"}));
  app->add_flag("--margin-inflation", o.margin_inflation, "measure the margin loss at gamma + 2 rho_k");
  app->add_flag("--exact-kl", o.exact_kl, "use 2 KL(Q||P) in the total");
  app->add_flag("--theta0-zero", o.theta0_zero, "prior mean 0 instead of the initialization");
}

SyntheticSpec parse_synthetic(const std::string& text, std::size_t* per_class) {
  std::vector<std::string> f;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',') {
      f.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (f.size() != 5) throw ArgumentError("--synthetic expects k,dim,per-class,sep,noise");
  SyntheticSpec s;
  try {
    s.num_classes = std::stoi(f[0]);
    s.dim = std::stoul(f[1]);
    s.samples_per_class = std::stoul(f[2]);
    s.cluster_separation = std::stod(f[3]);
    s.noise_std = std::stod(f[4]);
  } catch (const std::exception&) {
    throw ArgumentError("--synthetic has a malformed field: " + text);
  }
  s.validate();
  if (per_class) *per_class = s.samples_per_class;
  return s;
}

SweepConfig build_config(const Options& o, const CLI::App* app) {
  SweepConfig cfg;
  if (!o.mnist_images.empty() || !o.mnist_labels.empty()) {
    cfg.data.kind = DataKind::kMnist;
    cfg.data.mnist_images = o.mnist_images;
    cfg.data.mnist_labels = o.mnist_labels;
  } else if (!o.cifar_bins.empty()) {
    cfg.data.kind = DataKind::kCifar;
    for (const auto& p : o.cifar_bins) cfg.data.cifar_bins.emplace_back(p);
  }
  std::size_t per_class = 0;
  cfg.data.synthetic = parse_synthetic(o.synthetic, &per_class);
  cfg.data.n_test = o.n_test;
  cfg.n_grid = o.n;
  if (cfg.data.kind == DataKind::kSynthetic && app->count("--n") == 0) {
    cfg.n_grid = {per_class * static_cast<std::size_t>(cfg.data.synthetic.num_classes)};
  }
  cfg.r_grid = o.r;
  cfg.depth = o.depth;
  cfg.width = o.width;
  cfg.repeats = o.repeats;
  cfg.seed = o.seed;
  cfg.theta0_zero = o.theta0_zero;
  cfg.out_dir = o.out;
  cfg.train.epochs = o.epochs;
  cfg.train.learning_rate = o.lr;
  cfg.train.batch_size = o.batch;
  cfg.train.init_scale = o.init_scale;
  cfg.train.stop_at_zero_error = o.stop_at_zero;
  cfg.bound.sigma2 = o.sigma2.empty() ? 0.0 : o.sigma2.front();
  cfg.bound.gamma = o.gamma;
  cfg.bound.eta = o.eta;
  cfg.bound.delta = o.delta;
  cfg.bound.include_tail = o.include_tail;
  cfg.bound.variant = o.tail_variant == "multiclass" ? TailVariant::kMultiClassSmooth : TailVariant::kNonSmoothTwoClass;
  cfg.bound.margin_inflation = o.margin_inflation;
  cfg.bound.use_exact_kl = o.exact_kl;
  cfg.validate();
  return cfg;
}

void print_sweep_summary(const SweepResult& res) {
  std::printf("%-6s %-6s %-5s %-12s %-12s %-12s %-12s %-12s\n", "r", "n", "runs", "test_err", "margin", "eff_curv",
              "l2", "total");
  std::vector<std::pair<double, std::size_t>> points;
  for (const auto& row : res.rows) {
    if (points.empty() || points.back() != std::make_pair(row.r, row.n)) points.emplace_back(row.r, row.n);
  }
  for (const auto& [r, n] : points) {
    const auto t = grid_stats(res, r, n, "total");
    std::printf("%-6.3g %-6zu %-5zu %-12.5g %-12.5g %-12.5g %-12.5g %-12.5g\n", r, n, t.count,
                grid_stats(res, r, n, "test_error").mean, grid_stats(res, r, n, "margin_loss").mean,
                grid_stats(res, r, n, "effective_curvature").mean, grid_stats(res, r, n, "l2_term").mean, t.mean);
  }
  std::size_t failed = 0;
  for (const auto& row : res.rows) failed += row.ok() ? 0 : 1;
  if (failed) std::printf("%zu run(s) failed; see results.csv\n", failed);
}

int cmd_train(const Options& o, const CLI::App* app) {
  auto cfg = build_config(o, app);
  const auto source = load_source(cfg.data);
  const std::size_t n = cfg.n_grid.front();
  const auto data = prepare_run_data(cfg, source ? &*source : nullptr, n, cfg.r_grid.front(), cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const auto init = initial_params(network_widths(cfg, data.train.dim()), tc);
  const auto res = train(init, data.train, tc);
  const double train_err = error_rate(res.params, data.train);
  const double test_err = error_rate(res.params, data.test);
  std::printf("train error %.6g  test error %.6g  final loss %.6g\n", train_err, test_err,
              res.history.mean_loss.empty() ? mean_loss(res.params, data.train) : res.history.mean_loss.back());
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_checkpoint(fs::path(o.out) / "params.ckpt", res.params);
    write_checkpoint(fs::path(o.out) / "init.ckpt", init);
    std::string hist = "epoch,mean_loss,train_error\n";
    for (std::size_t e = 0; e < res.history.mean_loss.size(); ++e) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e + 1, res.history.mean_loss[e], res.history.train_error[e]);
      hist += buf;
    }
    write_text_file(fs::path(o.out) / "history.csv", hist);
    write_text_file(fs::path(o.out) / "config.txt", cfg.describe());
  }
  return kExitOk;
}

int cmd_bound(const Options& o, const CLI::App* app) {
  auto cfg = build_config(o, app);
  const auto source = load_source(cfg.data);
  const auto data = prepare_run_data(cfg, source ? &*source : nullptr, cfg.n_grid.front(), cfg.r_grid.front(), cfg.seed);
  const auto params = read_checkpoint(o.checkpoint);
  if (params.widths() != network_widths(cfg, data.train.dim())) {
    throw ConsistencyError("checkpoint architecture does not match --depth/--width and the data");
  }
  BoundConfig bc = cfg.bound;
  bc.num_classes = cfg.data.num_classes();
  if (!o.theta0_zero) {
    if (!o.init_checkpoint.empty()) {
      bc.prior_mean = read_checkpoint(o.init_checkpoint).flatten();
    } else {
      TrainConfig tc = cfg.train;
      tc.seed = cfg.seed;
      bc.prior_mean = initial_params(params.widths(), tc).flatten();
    }
  }
  const auto rep = evaluate_bound(params, data.train, bc);
  std::cout << rep.to_text();
  std::printf("test error           %.17g\n", error_rate(params, data.test));
  if (!o.csv.empty()) write_text_file(o.csv, bound_csv_header() + "\n" + bound_csv_row(rep) + "\n");
  return kExitOk;
}

int cmd_sweep(const Options& o, const CLI::App* app, bool sample_size) {
  auto cfg = build_config(o, app);
  const auto res = sample_size ? sweep_sample_size(cfg) : sweep_random_labels(cfg);
  print_sweep_summary(res);
  return kExitOk;
}

int cmd_sigma(const Options& o, const CLI::App* app) {
  auto cfg = build_config(o, app);
  const auto res = sweep_sigma(cfg, o.sigma2);
  std::printf("%-6s %-14s %-14s %s\n", "seed", "argmin_sigma2", "min_total", "u_shape");
  for (const auto& s : res.summary) {
    std::printf("%-6llu %-14.6g %-14.6g %s\n", static_cast<unsigned long long>(s.seed), s.argmin_sigma2,
                s.min_total, s.u_shape ? "yes" : "no");
  }
  return kExitOk;
}

int cmd_norms(const Options& o, const CLI::App* app) {
  auto cfg = build_config(o, app);
  const auto rows = compare_norms(cfg);
  std::cout << norms_csv(rows);
  return kExitOk;
}

int cmd_conc(const Options& o, const CLI::App* app) {
  const double sigma2 = app->count("--sigma2") ? o.sigma2.front() : 1.0;
  TailCheckReport rep;
  const std::vector<std::size_t> widths{2, 8, 2};
  if (o.conc_kind == "mds") {
    const std::vector<double> u(o.p, 1.0);
    const auto grid = o.grid.empty() ? std::vector<double>{1, 2, 4, 6, 8} : o.grid;
    rep = simulate_mds_linear(u, std::sqrt(sigma2), o.trials, grid, o.seed);
  } else if (o.conc_kind == "network-linear") {
    const auto net = random_masked_network(widths, sigma2, o.seed);
    Rng rng(derive_seed(o.seed, streams::kSyntheticTest));
    NormalSampler normal;
    std::vector<double> u(net.center.num_params());
    for (auto& v : u) v = normal(rng);
    const auto grid = o.grid.empty() ? std::vector<double>{1, 2, 4, 6, 8} : o.grid;
    rep = simulate_network_mask_linear(net, u, o.trials, grid, o.seed);
  } else if (o.conc_kind == "masked-quadratic") {
    const auto net = random_masked_network(widths, sigma2, o.seed);
    const auto h = random_wishart(net.center.num_params(), derive_seed(o.seed, streams::kSyntheticTest));
    const auto grid = o.grid.empty() ? std::vector<double>{2, 3, 4, 6} : o.grid;
    rep = simulate_masked_quadratic(net, h, o.trials, grid, o.seed);
  } else {
    const auto h = random_wishart(o.p, derive_seed(o.seed, streams::kSyntheticTest));
    const auto grid = o.grid.empty() ? std::vector<double>{2, 3, 4, 6} : o.grid;
    rep = simulate_isotropic_quadratic(sigma2, h, o.trials, grid, o.seed);
  }
  const auto csv = rep.to_csv();
  std::cout << csv;
  if (!o.out.empty()) write_text_file(o.out, csv);
  return rep.all_pass() ? kExitOk : kExitRun;
}

std::string canonical_key(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

// Prepends --key=value for every config-file key not given on the command line.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty() || args.empty()) return args;
  const auto kv = parse_key_values(read_text_file(config_path));
  auto given = [&](const std::string& key) {
    for (const auto& a : args) {
      if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> out{args.front()};
  for (const auto& [k, v] : kv) {
    const auto key = canonical_key(k);
    if (key == "config") throw ArgumentError("config files cannot include other config files");
    if (!given(key)) out.push_back("--" + key + "=" + v);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"PAC-Bayes bounds for ReLU networks"};
  app.require_subcommand(1);
  std::string config_path;

  auto* train_cmd = app.add_subcommand("train", "train one network and write checkpoints");
  auto* bound_cmd = app.add_subcommand("bound", "evaluate the bound for a checkpoint");
  auto* rl_cmd = app.add_subcommand("sweep-random-labels", "sweep the label randomness r");
  auto* ss_cmd = app.add_subcommand("sweep-sample-size", "sweep the training set size n");
  auto* sig_cmd = app.add_subcommand("sweep-sigma", "re-evaluate trained networks across a sigma2 grid");
  auto* nrm_cmd = app.add_subcommand("compare-norms", "L2 norm vs spectral norm product across n");
  auto* conc_cmd = app.add_subcommand("conc-check", "Monte-Carlo check of a concentration inequality");
  auto* plot_cmd = app.add_subcommand("plot", "render a sweep CSV to SVG");

  for (auto* sub : {train_cmd, bound_cmd, rl_cmd, ss_cmd, sig_cmd, nrm_cmd}) {
    sub->add_option("--config", config_path, "key=value file; command-line flags take precedence");
    add_data_options(sub, o, false);
    sub->add_option("--r", o.r, "label randomness (comma list for sweeps)")->delimiter(',');
    sub->add_option("--out", o.out, "output directory");
  }
  for (auto* sub : {rl_cmd, ss_cmd, sig_cmd, nrm_cmd}) {
    sub->add_option("--repeats", o.repeats, "seeds per grid point")->check(CLI::PositiveNumber);
  }
  for (auto* sub : {bound_cmd, rl_cmd, ss_cmd, nrm_cmd}) add_bound_options(sub, o, true, false);
  add_bound_options(sig_cmd, o, true, true);
  // train ignores the bound settings but accepts them so one config file serves every command
  add_bound_options(train_cmd, o, false, false);
  bound_cmd->add_option("--checkpoint", o.checkpoint, "trained parameters")->required();
  bound_cmd->add_option("--init", o.init_checkpoint, "prior mean checkpoint (default: regenerated initialization)");
  bound_cmd->add_option("--csv", o.csv, "write the report as CSV");

  conc_cmd->add_option("--kind", o.conc_kind, "mds, network-linear, masked-quadratic, isotropic-quadratic")
      ->check(CLI::IsMember({"mds", "network-linear", "masked-quadratic", "isotropic-quadratic"}));
  conc_cmd->add_option("--p", o.p, "dimension for mds / isotropic-quadratic")->check(CLI::PositiveNumber);
  conc_cmd->add_option("--trials", o.trials, "Monte-Carlo trials")->check(CLI::PositiveNumber);
  conc_cmd->add_option("--grid", o.grid, "tau or gamma-tilde grid")->delimiter(',');
  conc_cmd->add_option("--sigma2", o.sigma2, "perturbation variance")->expected(1);
  conc_cmd->add_option("--seed", o.seed, "seed");
  conc_cmd->add_option("--out", o.out, "CSV output file");
  conc_cmd->add_option("--threads", o.threads, "OpenMP threads (0 = runtime default)");

  plot_cmd->add_option("--csv", o.plot_csv, "input CSV")->required();
  plot_cmd->add_option("--kind", o.plot_kind, "random-labels, sample-size, sigma, norms")->required();
  plot_cmd->add_option("--out", o.out, "SVG output file")->required();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (o.threads > 0) omp_set_num_threads(o.threads);

    if (train_cmd->parsed()) return cmd_train(o, train_cmd);
    if (bound_cmd->parsed()) return cmd_bound(o, bound_cmd);
    if (rl_cmd->parsed()) return cmd_sweep(o, rl_cmd, false);
    if (ss_cmd->parsed()) return cmd_sweep(o, ss_cmd, true);
    if (sig_cmd->parsed()) return cmd_sigma(o, sig_cmd);
    if (nrm_cmd->parsed()) return cmd_norms(o, nrm_cmd);
    if (conc_cmd->parsed()) return cmd_conc(o, conc_cmd);
    if (plot_cmd->parsed()) {
      emit_plot(o.plot_csv, o.plot_kind, o.out);
      return kExitOk;
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitArgument;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgument;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kExitRun;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return kExitRun;
  }
  return kExitArgument;
}
