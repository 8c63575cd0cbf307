// noisyforge: train, sweep, upper-bound, scan and report from one config file.
//
// Exit codes: 0 ok, 2 configuration/usage error, 3 training diverged,
// 4 malformed input file, 5 missing prerequisite artifact.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "noisyforge/checkpoint.hpp"
#include "noisyforge/config.hpp"
#include "noisyforge/error.hpp"
#include "noisyforge/eval.hpp"
#include "noisyforge/format.hpp"
#include "noisyforge/parallel.hpp"
#include "noisyforge/report.hpp"
#include "noisyforge/scan.hpp"
#include "noisyforge/train.hpp"

namespace fs = std::filesystem;
using namespace noisyforge;

namespace {

enum Exit { kOk = 0, kConfig = 2, kDiverged = 3, kFormat = 4, kMissing = 5 };

std::size_t resolve_workers(std::size_t flag) {
  if (const char* env = std::getenv("NOISY_FORGE_WORKERS")) {
    try {
      std::size_t used = 0;
      const long v = std::stol(env, &used);
      if (used != std::string(env).size() || v < 1) throw std::invalid_argument(env);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError("NOISY_FORGE_WORKERS", std::string("expected a positive integer, got '") + env + "'");
    }
  }
  return flag == 0 ? default_workers() : flag;
}

ExperimentConfig load_config(const std::string& path) {
  if (!fs::exists(path)) throw MissingPrerequisiteError("config file not found: " + path);
  return parse_experiment_config(read_text_file(path));
}

void note(const std::string& line) { std::cerr << line << '\n'; }

fs::path out_path(const ExperimentConfig& c, const std::string& name) { return fs::path(c.output_dir) / name; }

ModelGraph load_model_for(const fs::path& path, const ExperimentConfig& c, const Dataset& data) {
  // Any problem with the checkpoint file itself, including its absence, is
  // a format error for the sweep command.
  if (!fs::exists(path)) throw FormatError("checkpoint not found: " + path.string());
  ModelGraph model = load_checkpoint(path, c.injection());
  if (model.input_shape() != data.sample_shape() || model.num_classes() != data.num_classes) {
    throw FormatError(path.string() + ": checkpoint expects input " + shape_string(model.input_shape()) + " and " +
                      std::to_string(model.num_classes()) + " classes, data has " +
                      shape_string(data.sample_shape()) + " and " + std::to_string(data.num_classes));
  }
  return model;
}

void write_dataset_side_files(const ExperimentConfig& c, const Dataset& train, const Dataset& test) {
  write_text_file(out_path(c, "config.resolved.json"), resolved_config_json(c));
  write_text_file(out_path(c, "dataset.json"), dataset_metadata_json(train, test));
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
};

int run_train(const TrainArgs& a) {
  const ExperimentConfig c = load_config(a.config);
  const auto [train_data, test_data] = load_experiment_data(c);
  write_dataset_side_files(c, train_data, test_data);
  const ModelGraph model = build_experiment_model(c, train_data);
  note("training " + c.model.preset + " on " + std::to_string(train_data.size()) + " samples, " +
       c.train.schedule.describe() + ", " + std::to_string(c.train.epochs) + " epochs");
  const TrainResult result = train(model, train_data, c.train);
  const fs::path ckpt = a.out.empty() ? out_path(c, "model.nfck") : fs::path(a.out);
  save_checkpoint(result.model, ckpt);
  write_text_file(ckpt.parent_path() / (ckpt.stem().string() + ".trainlog.csv"), trainlog_csv(result.log));
  const double test_acc = evaluate_clean(result.model, test_data, {c.eval.batch_size, 1});
  std::cout << "checkpoint " << ckpt.string() << "\n"
            << "final_loss " << format_real(result.log.back().loss) << "\n"
            << "test_clean_accuracy " << format_real(test_acc) << "\n";
  return kOk;
}

// ---- sweep ----------------------------------------------------------------

struct SweepArgs {
  std::string config;
  std::string checkpoint;
  std::optional<double> sigma_min, sigma_max, sigma_step;
  std::optional<std::size_t> repeats;
  std::optional<std::uint64_t> seed;
  bool no_logit_noise = false;
  std::string upper;
  std::string reference;
  std::optional<double> sigma_train;
  std::string out;
  std::string summary;
  std::size_t workers = 0;
};

int run_sweep(const SweepArgs& a) {
  ExperimentConfig c = load_config(a.config);
  if (a.no_logit_noise) c.model.logit_noise = false;
  if (a.sigma_min) c.eval.sigma_min = *a.sigma_min;
  if (a.sigma_max) c.eval.sigma_max = *a.sigma_max;
  if (a.sigma_step) c.eval.sigma_step = *a.sigma_step;
  if (a.repeats) {
    if (*a.repeats == 0) throw ConfigError("--repeats", "must be >= 1");
    c.eval.repeats = *a.repeats;
  }
  std::vector<double> sigmas;
  try {
    sigmas = c.eval_sigmas();
  } catch (const UsageError& e) {
    throw ConfigError("--sigma-min/--sigma-max/--sigma-step", e.what());
  }
  if (sigmas.front() <= 0.0) throw ConfigError("--sigma-min", "must be > 0");
  if (a.reference.empty() != !a.sigma_train.has_value()) {
    throw ConfigError("--reference", "--reference and --sigma-train must be given together");
  }
  std::optional<UpperBoundCurve> upper;
  std::optional<RobustnessCurve> reference;
  std::vector<std::string> absent;
  if (!a.upper.empty() && !fs::exists(a.upper)) absent.push_back(a.upper);
  if (!a.reference.empty() && !fs::exists(a.reference)) absent.push_back(a.reference);
  if (!absent.empty()) {
    std::string list;
    for (const auto& p : absent) list += "\n  " + p;
    throw MissingPrerequisiteError("missing input files:" + list);
  }
  if (!a.upper.empty()) upper = parse_upper_bound_csv(read_text_file(a.upper), a.upper);
  if (!a.reference.empty()) reference = parse_curve_csv(read_text_file(a.reference), a.reference);

  const auto [train_data, test_data] = load_experiment_data(c);
  (void)train_data;
  const ModelGraph model = load_model_for(a.checkpoint, c, test_data);
  const EvalOptions options{c.eval.batch_size, resolve_workers(a.workers)};
  const std::uint64_t seed = a.seed.value_or(c.seed);
  const RobustnessCurve curve = noise_sweep(model, test_data, sigmas, c.eval.repeats, seed, options);

  MetricsSummary summary;
  summary.auc = auc_trapezoid(curve);
  if (upper) summary.rauc_percent = compute_rauc(curve, *upper);
  if (reference) {
    summary.sigma_train = *a.sigma_train;
    summary.preserved_accuracy_pp = preserved_accuracy(curve, *reference, *a.sigma_train);
  }
  const fs::path out = a.out.empty() ? out_path(c, "curve.csv") : fs::path(a.out);
  const fs::path sum = a.summary.empty() ? out.parent_path() / (out.stem().string() + ".summary.json")
                                         : fs::path(a.summary);
  write_text_file(out, curve_csv(curve));
  write_text_file(sum, metrics_summary_json(summary));
  std::cout << "curve " << out.string() << "\n"
            << "summary " << sum.string() << "\n"
            << "clean_accuracy " << format_real(curve.clean_accuracy) << "\n"
            << "auc " << format_real(summary.auc) << "\n";
  return kOk;
}

// ---- upper-bound ----------------------------------------------------------

struct UpperArgs {
  std::string config;
  std::size_t workers = 0;
};

int run_upper(const UpperArgs& a) {
  const ExperimentConfig c = load_config(a.config);
  const auto [train_data, test_data] = load_experiment_data(c);
  write_dataset_side_files(c, train_data, test_data);
  const ModelGraph model = build_experiment_model(c, train_data);
  UpperBoundPlan plan;
  plan.train_sigmas = c.upper_bound_sigmas;
  plan.eval_sigmas = c.eval_sigmas();
  plan.repeats = c.eval.repeats;
  plan.eval_seed = c.seed;
  const fs::path dir = out_path(c, "upper_bound");
  const auto hook = [&](double sigma, const ModelGraph& m, const TrainLog& log) {
    const std::string id = "nt_sigma_" + format_real(sigma);
    save_checkpoint(m, dir / (id + ".nfck"));
    write_text_file(dir / (id + ".trainlog.csv"), trainlog_csv(log));
  };
  note("training " + std::to_string(plan.train_sigmas.size()) + " noisy-training models");
  const UpperBoundCurve upper = build_upper_bound([&] { return model.clone(); }, train_data, test_data, plan,
                                                  c.train, {c.eval.batch_size, resolve_workers(a.workers)}, hook);
  const fs::path out = out_path(c, "upper_bound.csv");
  write_text_file(out, upper_bound_csv(upper));
  std::cout << "upper_bound " << out.string() << "\n"
            << "auc " << format_real(auc_trapezoid(upper.curve)) << "\n";
  return kOk;
}

// ---- scan -----------------------------------------------------------------

struct ScanArgs {
  std::string config;
  std::string upper;
  std::string nt_checkpoint;
  std::size_t workers = 0;
};

int run_scan(const ScanArgs& a) {
  const ExperimentConfig c = load_config(a.config);
  const fs::path upper_path = a.upper.empty() ? out_path(c, "upper_bound.csv") : fs::path(a.upper);
  std::vector<std::string> absent;
  if (!fs::exists(upper_path)) absent.push_back(upper_path.string());
  if (!a.nt_checkpoint.empty() && !fs::exists(a.nt_checkpoint)) absent.push_back(a.nt_checkpoint);
  if (!absent.empty()) {
    std::string list;
    for (const auto& p : absent) list += "\n  " + p;
    throw MissingPrerequisiteError("missing input files (run upper-bound first):" + list);
  }
  const UpperBoundCurve upper = parse_upper_bound_csv(read_text_file(upper_path), upper_path.string());
  const ScanGrid grid = c.scan_grid();
  const std::size_t workers = resolve_workers(a.workers);

  const auto [train_data, test_data] = load_experiment_data(c);
  write_dataset_side_files(c, train_data, test_data);
  const ModelGraph model = build_experiment_model(c, train_data);
  TrainConfig cell_train = c.train;
  if (c.scan.epochs) cell_train.epochs = *c.scan.epochs;

  ModelGraph nt_model = model;
  if (!a.nt_checkpoint.empty()) {
    nt_model = load_model_for(a.nt_checkpoint, c, test_data);
  } else {
    TrainConfig nt_cfg = cell_train;
    nt_cfg.schedule = NoiseSchedule::fixed(grid.sigma_train);
    note("training the noisy-training reference at sigma " + format_real(grid.sigma_train));
    nt_model = train(model, train_data, nt_cfg).model;
    save_checkpoint(nt_model, out_path(c, "scan_models/nt_reference.nfck"));
  }
  const RobustnessCurve nt_curve =
      noise_sweep(nt_model, test_data, upper.curve.sigmas, c.eval.repeats, c.seed, {c.eval.batch_size, workers});
  write_text_file(out_path(c, "scan_curves/nt_reference.csv"), curve_csv(nt_curve));

  ScanSetup setup;
  setup.factory = [&] { return model.clone(); };
  setup.train_data = &train_data;
  setup.test_data = &test_data;
  setup.train_config = cell_train;
  setup.upper = upper;
  setup.nt_curve = nt_curve;
  setup.sigma_train = grid.sigma_train;
  setup.repeats = c.eval.repeats;
  setup.eval_seed = c.seed;
  setup.on_cell = [&](double alpha, double theta, const ModelGraph& m, const RobustnessCurve& curve) {
    const std::string id = cell_id(alpha, theta);
    save_checkpoint(m, out_path(c, "scan_models/" + id + ".nfck"));
    write_text_file(out_path(c, "scan_curves/" + id + ".csv"), curve_csv(curve));
  };
  note("scanning " + std::to_string(grid.alphas.size() * grid.thetas.size()) + " cells");
  const std::vector<ScanCell> cells = grid_scan(grid, make_training_evaluator(std::move(setup)), workers);
  std::size_t failed = 0;
  for (const auto& cell : cells) {
    if (cell.status == CellStatus::kFailed) {
      ++failed;
      note("cell alpha " + format_real(cell.alpha) + " theta " + format_real(cell.theta) + " failed: " + cell.error);
    }
  }
  write_text_file(out_path(c, "scan.csv"), scan_csv(cells));
  const Selection best = select_optimal(cells);
  write_text_file(out_path(c, "selection.json"), selection_json(best, grid.sigma_train, failed));
  std::cout << "scan " << out_path(c, "scan.csv").string() << "\n"
            << "selection " << out_path(c, "selection.json").string() << "\n"
            << "alpha " << format_real(best.cell.alpha) << "\n"
            << "theta " << format_real(best.cell.theta) << "\n"
            << "relaxed " << (best.relaxed ? "true" : "false") << "\n";
  return kOk;
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> series;
  std::string upper;
  std::string out;
};

int run_report(const ReportArgs& a) {
  std::vector<std::pair<std::string, std::string>> inputs;
  for (const auto& s : a.series) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      throw ConfigError("--series", "expected NAME=PATH, got '" + s + "'");
    }
    inputs.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (inputs.empty() && a.upper.empty()) throw ConfigError("--series", "nothing to report");
  std::vector<std::string> absent;
  for (const auto& [name, path] : inputs) {
    if (!fs::exists(path)) absent.push_back(path);
  }
  if (!a.upper.empty() && !fs::exists(a.upper)) absent.push_back(a.upper);
  if (!absent.empty()) {
    std::string list;
    for (const auto& p : absent) list += "\n  " + p;
    throw MissingPrerequisiteError("missing input files:" + list);
  }
  std::vector<std::pair<std::string, RobustnessCurve>> series;
  if (!a.upper.empty()) series.emplace_back("upper_bound", parse_upper_bound_csv(read_text_file(a.upper), a.upper).curve);
  for (const auto& [name, path] : inputs) series.emplace_back(name, parse_curve_csv(read_text_file(path), path));
  write_text_file(a.out, plot_data_csv(series));
  std::cout << "plot_data " << a.out << "\n";
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const MissingPrerequisiteError& e) {
    std::cerr << "missing prerequisite: " << e.what() << '\n';
    return kMissing;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noisyforge: noise-robust training at desk scale"};
  app.require_subcommand(1);
  int code = kOk;

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train one model as configured");
  train_cmd->add_option("--config", ta.config, "Experiment config (JSON)")->required();
  train_cmd->add_option("--out", ta.out, "Checkpoint path (default <output_dir>/model.nfck)");
  train_cmd->callback([&] { code = guarded([&] { return run_train(ta); }); });

  SweepArgs sa;
  auto* sweep_cmd = app.add_subcommand("sweep", "Accuracy vs. inference noise for a checkpoint");
  sweep_cmd->add_option("--config", sa.config, "Experiment config (JSON)")->required();
  sweep_cmd->add_option("--checkpoint", sa.checkpoint, "Model checkpoint")->required();
  sweep_cmd->add_option("--sigma-min", sa.sigma_min, "Smallest sigma (default 0.1)");
  sweep_cmd->add_option("--sigma-max", sa.sigma_max, "Largest sigma (default 3.0)");
  sweep_cmd->add_option("--sigma-step", sa.sigma_step, "Grid step (default 0.1)");
  sweep_cmd->add_option("--repeats", sa.repeats, "Noisy passes per sigma (default 5)");
  sweep_cmd->add_option("--seed", sa.seed, "Evaluation seed (default: config seed)");
  sweep_cmd->add_flag("--no-logit-noise", sa.no_logit_noise, "Do not inject noise into the logits");
  sweep_cmd->add_option("--upper", sa.upper, "Upper-bound CSV; adds rAUC to the summary");
  sweep_cmd->add_option("--reference", sa.reference, "Noisy-training curve CSV for preserved accuracy");
  sweep_cmd->add_option("--sigma-train", sa.sigma_train, "Training sigma for preserved accuracy");
  sweep_cmd->add_option("--out", sa.out, "Curve CSV (default <output_dir>/curve.csv)");
  sweep_cmd->add_option("--summary", sa.summary, "Summary JSON (default next to the curve)");
  sweep_cmd->add_option("--workers", sa.workers, "Worker threads (0 = all cores)");
  sweep_cmd->callback([&] { code = guarded([&] { return run_sweep(sa); }); });

  UpperArgs ua;
  auto* upper_cmd = app.add_subcommand("upper-bound", "Train the per-sigma noisy-training reference curve");
  upper_cmd->add_option("--config", ua.config, "Experiment config (JSON)")->required();
  upper_cmd->add_option("--workers", ua.workers, "Worker threads (0 = all cores)");
  upper_cmd->callback([&] { code = guarded([&] { return run_upper(ua); }); });

  ScanArgs sc;
  auto* scan_cmd = app.add_subcommand("scan", "Grid scan over (alpha, theta) and pick the best cell");
  scan_cmd->add_option("--config", sc.config, "Experiment config (JSON)")->required();
  scan_cmd->add_option("--upper", sc.upper, "Upper-bound CSV (default <output_dir>/upper_bound.csv)");
  scan_cmd->add_option("--nt-checkpoint", sc.nt_checkpoint, "Noisy-training model at sigma_train (default: train one)");
  scan_cmd->add_option("--workers", sc.workers, "Worker threads (0 = all cores)");
  scan_cmd->callback([&] { code = guarded([&] { return run_scan(sc); }); });

  ReportArgs ra;
  auto* report_cmd = app.add_subcommand("report", "Merge curves into long-format plot data");
  report_cmd->add_option("--series", ra.series, "NAME=CURVE.csv, repeatable");
  report_cmd->add_option("--upper", ra.upper, "Upper-bound CSV");
  report_cmd->add_option("--out", ra.out, "Output CSV")->required();
  report_cmd->callback([&] { code = guarded([&] { return run_report(ra); }); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfig;
  }
  return code;
}
