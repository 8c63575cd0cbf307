// Acceptance runner: one PASS / FAIL / BLOCKED / SKIPPED line per criterion.
//
// Criteria 5-7 need the CIFAR-10 binary distribution (--cifar-dir or
// NOISY_FORGE_CIFAR10_DIR). Without it they report BLOCKED and the same
// pipeline runs on a small synthetic image set so the code path is still
// exercised; surrogate numbers are printed but never counted as a pass.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "noisyforge/config.hpp"
#include "noisyforge/data.hpp"
#include "noisyforge/eval.hpp"
#include "noisyforge/noise.hpp"
#include "noisyforge/report.hpp"
#include "noisyforge/scan.hpp"
#include "noisyforge/train.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace noisyforge;
namespace fs = std::filesystem;

namespace {

enum class Status { kPass, kFail, kBlocked, kSkipped };

struct Outcome {
  Status status;
  std::string detail;
};

const char* label(Status s) {
  switch (s) {
    case Status::kPass: return "PASS";
    case Status::kFail: return "FAIL";
    case Status::kBlocked: return "BLOCKED";
    case Status::kSkipped: return "SKIPPED";
  }
  return "?";
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------- 1

Outcome reduction_equivalence() {
  const auto [data, unused] = synthetic_blobs(4, 100, 8, 6.0, 21);
  const ModelGraph init = build_preset("mlp2", {8}, 4, 21);
  auto trajectory = [&](NoiseSchedule schedule) {
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 32;
    cfg.seed = 21;
    cfg.schedule = std::move(schedule);
    cfg.log_clean_accuracy = false;
    std::vector<std::vector<float>> steps;
    train(init, data, cfg, [&](std::size_t, std::size_t, const ModelGraph& m) {
      std::vector<float> flat;
      for (const auto& p : m.parameters()) flat.insert(flat.end(), p.data().begin(), p.data().end());
      steps.push_back(std::move(flat));
    });
    return steps;
  };
  const auto nt = trajectory(NoiseSchedule::fixed(1.0));
  const auto vant = trajectory(NoiseSchedule::variance_aware(1.0, 1.0, 0.0));
  const auto other = trajectory(NoiseSchedule::variance_aware(1.0, 1.0, 0.2));
  const bool same = nt == vant;
  const bool sensitive = nt != other;
  return {same && sensitive ? Status::kPass : Status::kFail,
          std::to_string(nt.size()) + " steps, identical=" + (same ? "yes" : "no") +
              ", theta=0.2 differs=" + (sensitive ? "yes" : "no")};
}

// ---------------------------------------------------------------- 2

Outcome gradient_oracle() {
  RngStream rng(2, {Purpose::kTest});
  double worst = 0.0;
  std::string worst_op;
  std::size_t instances = 0;
  for (const auto& c : nftest::op_gradient_cases()) {
    for (int i = 0; i < 20; ++i) {
      const double e = c.run(rng);
      ++instances;
      if (e > worst) worst = e, worst_op = c.name;
    }
  }
  return {worst <= 1e-3 ? Status::kPass : Status::kFail,
          std::to_string(instances) + " instances, max rel err " + fmt("%.3g", worst) + " (" + worst_op +
              "), tol 1e-3"};
}

// ---------------------------------------------------------------- 3

Outcome noise_statistics() {
  const Tensor t = sample_activation_noise({1000, 1000}, 1.0, RngStream(3, {Purpose::kEvalNoise, 0, 0, 0, 1}));
  double s = 0.0, ss = 0.0;
  for (float v : t.data()) s += v, ss += static_cast<double>(v) * v;
  const double n = static_cast<double>(t.numel());
  const double mean = s / n, sd = std::sqrt(ss / n - mean * mean);
  bool ok = std::abs(mean) <= 0.004 && sd >= 0.995 && sd <= 1.005;
  std::string detail = "mean " + fmt("%.5f", mean) + ", std " + fmt("%.5f", sd);

  // mu = alpha * sigma_train = 0.18, theta = 0.25.
  for (const auto mode : {SigmaRectify::kClamp, SigmaRectify::kAbs, SigmaRectify::kResample}) {
    const auto draws = nftest::sigma_var_draws(NoiseSchedule::variance_aware(0.4, 0.45, 0.25, mode), 1000000, 3);
    const auto got = nftest::sample_moments(draws);
    const auto want = nftest::rectified_gaussian(mode, 0.18, 0.25);
    const double z = (got.mean - want.mean) / std::sqrt(want.var / draws.size());
    ok = ok && std::abs(z) < 3.0;
    detail += ", " + to_string(mode) + " z=" + fmt("%.2f", z);
  }
  return {ok ? Status::kPass : Status::kFail, detail};
}

// ---------------------------------------------------------------- 4

RobustnessCurve curve_of(std::vector<double> sigmas, std::vector<double> acc) {
  RobustnessCurve c;
  c.sigmas = std::move(sigmas);
  c.mean_accuracy = std::move(acc);
  c.std_accuracy.assign(c.sigmas.size(), 0.0);
  c.repeats = 1;
  return c;
}

Outcome metric_oracles() {
  bool ok = true;
  // Piecewise-linear fixtures with dyadic values: the trapezoid sum is exact.
  const std::vector<std::pair<RobustnessCurve, double>> fixtures{
      {curve_of({0.0, 1.0, 3.0, 4.0}, {0.25, 1.0, 0.0, 0.5}), 0.625 + 1.0 + 0.25},
      {curve_of({0.5, 1.0, 1.5}, {0.5, 0.5, 0.5}), 0.5},
      {curve_of({0.0, 0.5, 1.0}, {1.0, 0.5, 0.0}), 0.5}};
  for (const auto& [c, area] : fixtures) ok = ok && auc_trapezoid(c) == area;

  const auto grid = default_sigma_grid();
  std::vector<double> acc(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) acc[i] = 0.9 - 0.25 * grid[i] / 3.0;
  const auto c = curve_of(grid, acc);
  const double self = compute_rauc(c, {c, std::vector<std::string>(c.size(), "self")});
  ok = ok && self == 100.0;

  RngStream rng(4, {Purpose::kTest});
  std::size_t agree = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScanCell> cells;
    const std::size_t na = 1 + rng.next_below(6), nt = 1 + rng.next_below(8);
    for (std::size_t a = 0; a < na; ++a)
      for (std::size_t t = 0; t < nt; ++t) {
        ScanCell cell;
        cell.alpha = 0.15 * static_cast<double>(a + 1);
        cell.theta = 0.05 * static_cast<double>(t);
        cell.rauc_percent = 50.0 + 5.0 * static_cast<double>(rng.next_below(8));
        cell.preserved_acc_pp = -2.0 + 0.5 * static_cast<double>(rng.next_below(6)) - (trial % 5 == 0 ? 10.0 : 0.0);
        if (rng.next_below(10) == 0) cell.status = CellStatus::kFailed;
        cells.push_back(cell);
      }
    cells.front().status = CellStatus::kOk;
    const Selection got = select_optimal(cells);
    const Selection want = nftest::brute_force_selection(cells);
    agree += got.cell.alpha == want.cell.alpha && got.cell.theta == want.cell.theta && got.relaxed == want.relaxed;
  }
  ok = ok && agree == 50;
  return {ok ? Status::kPass : Status::kFail, "auc fixtures exact, rauc(self)=" + fmt("%.17g", self) +
                                                  ", select_optimal agrees on " + std::to_string(agree) + "/50 grids"};
}

// ---------------------------------------------------------------- 5-8

struct Workload {
  std::string name;  // "cifar10" or "surrogate"
  Dataset train;
  Dataset test;
  std::size_t epochs = 60;
  std::size_t scan_epochs = 30;
  std::size_t repeats = 5;
  std::size_t batch_size = 128;
  double lr0 = 0.001;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  ScanGrid grid;
  std::vector<double> upper_sigmas;
};

// CSV outputs of one pass over criteria 5-7, keyed by file name.
using Artifacts = std::map<std::string, std::string>;

TrainConfig base_config(const Workload& w, std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = w.batch_size;
  cfg.lr0 = w.lr0;
  cfg.seed = w.seed;
  cfg.log_clean_accuracy = false;
  return cfg;
}

ModelGraph lenet(const Workload& w) { return build_preset("lenet5", w.train.sample_shape(), w.train.num_classes, w.seed); }

RobustnessCurve sweep(const Workload& w, const ModelGraph& m, const std::vector<double>& sigmas) {
  return noise_sweep(m, w.test, sigmas, w.repeats, w.seed + 1000, {500, w.workers});
}

Outcome baseline_degradation(const Workload& w, Artifacts& out) {
  const ModelGraph model = train(lenet(w), w.train, base_config(w, w.epochs)).model;
  const RobustnessCurve curve = sweep(w, model, default_sigma_grid());
  out["baseline_curve.csv"] = curve_csv(curve);
  std::vector<double> sig{0.0}, acc{curve.clean_accuracy};
  sig.insert(sig.end(), curve.sigmas.begin(), curve.sigmas.end());
  acc.insert(acc.end(), curve.mean_accuracy.begin(), curve.mean_accuracy.end());
  const double drop = curve.clean_accuracy - accuracy_at(curve, 1.0);
  const double rho = nftest::spearman(sig, acc);
  const bool ok = drop >= 0.30 && rho <= -0.9;
  return {ok ? Status::kPass : Status::kFail, "clean " + fmt("%.4f", curve.clean_accuracy) + ", drop to sigma 1.0 " +
                                                 fmt("%.4f", drop) + " (need >= 0.30), spearman " + fmt("%.3f", rho) +
                                                 " (need <= -0.9)"};
}

Outcome nt_peak_locality(const Workload& w, Artifacts& out) {
  TrainConfig cfg = base_config(w, w.epochs);
  cfg.schedule = NoiseSchedule::fixed(1.0);
  const ModelGraph model = train(lenet(w), w.train, cfg).model;
  const RobustnessCurve curve = sweep(w, model, default_sigma_grid());
  out["nt_sigma_1_curve.csv"] = curve_csv(curve);
  const auto best = std::max_element(curve.mean_accuracy.begin(), curve.mean_accuracy.end());
  const double at = curve.sigmas[static_cast<std::size_t>(best - curve.mean_accuracy.begin())];
  const bool ok = std::abs(at - 1.0) <= 0.3 + 1e-9;
  return {ok ? Status::kPass : Status::kFail,
          "sweep maximum " + fmt("%.4f", *best) + " at sigma " + fmt("%.2f", at) + " (need within 1.0 +- 0.3)"};
}

Outcome vant_dominance(const Workload& w, Artifacts& out) {
  const ModelGraph init = lenet(w);
  const ModelFactory factory = [&] { return init.clone(); };
  const TrainConfig cfg = base_config(w, w.scan_epochs);
  const UpperBoundPlan plan{w.upper_sigmas, default_sigma_grid(), w.repeats, w.seed + 1000};
  const UpperBoundCurve upper = build_upper_bound(factory, w.train, w.test, plan, cfg, {500, w.workers});
  out["upper_bound.csv"] = upper_bound_csv(upper);

  TrainConfig nt_cfg = cfg;
  nt_cfg.schedule = NoiseSchedule::fixed(1.0);
  const RobustnessCurve nt = sweep(w, train(init, w.train, nt_cfg).model, upper.curve.sigmas);
  out["nt_reference.csv"] = curve_csv(nt);

  ScanSetup setup;
  setup.factory = factory;
  setup.train_data = &w.train;
  setup.test_data = &w.test;
  setup.train_config = cfg;
  setup.upper = upper;
  setup.nt_curve = nt;
  setup.sigma_train = 1.0;
  setup.repeats = w.repeats;
  setup.eval_seed = w.seed + 1000;
  const auto cells = grid_scan(w.grid, make_training_evaluator(setup), w.workers);
  out["scan.csv"] = scan_csv(cells);
  const Selection sel = select_optimal(cells);
  const double nt_rauc = compute_rauc(nt, upper);
  const double gain = sel.cell.rauc_percent - nt_rauc;
  const bool ok = !sel.relaxed && gain >= 10.0 && sel.cell.preserved_acc_pp >= -1.0;
  return {ok ? Status::kPass : Status::kFail,
          "selected alpha " + fmt("%.2f", sel.cell.alpha) + " theta " + fmt("%.2f", sel.cell.theta) + ": rAUC " +
              fmt("%.2f", sel.cell.rauc_percent) + "% vs NT " + fmt("%.2f", nt_rauc) + "% (gain " + fmt("%.2f", gain) +
              " pp, need >= 10), PA " + fmt("%.2f", sel.cell.preserved_acc_pp) + " pp (need >= -1.0)"};
}

std::optional<Workload> cifar_workload(const std::string& dir, std::size_t workers) {
  if (dir.empty()) return std::nullopt;
  auto [train_full, test_full] = load_cifar10_binary(dir);
  Workload w;
  w.name = "cifar10";
  w.seed = 7;
  w.train = subsample(train_full, 10000, w.seed);
  w.test = subsample(test_full, 2000, w.seed + 1);
  restandardize(w.train, w.test);
  w.workers = workers;
  w.grid = default_scan_grid(1.0);
  w.upper_sigmas = default_upper_bound_sigmas();
  return w;
}

Workload surrogate_workload(std::size_t workers) {
  Workload w;
  w.name = "surrogate";
  w.seed = 7;
  std::tie(w.train, w.test) = synthetic_images(10, 30, 3, 32, 32, 1.0, w.seed);
  w.epochs = 8;
  w.scan_epochs = 4;
  w.repeats = 2;
  w.batch_size = 16;
  w.lr0 = 0.002;
  w.workers = workers;
  w.grid = {{0.6, 1.0}, {0.0, 0.4}, 1.0};
  w.upper_sigmas = {0.5, 1.0, 2.0};
  return w;
}

void print(int id, const std::string& name, const Outcome& o, double secs) {
  std::printf("[%s] %d %s: %s (%.1f s)\n", label(o.status), id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noisyforge acceptance criteria"};
  bool full = false;
  std::string cifar_dir;
  std::size_t workers = 1;
  std::string artifacts_dir;
  app.add_flag("--full", full, "Run the long criterion 7 (upper bound + 6x8 scan)");
  app.add_option("--cifar-dir", cifar_dir, "CIFAR-10 binary directory (default: $NOISY_FORGE_CIFAR10_DIR)");
  app.add_option("--workers", workers, "Worker threads for evaluation and scans")->check(CLI::PositiveNumber);
  app.add_option("--artifacts", artifacts_dir, "Directory for the CSVs of criteria 5-7");
  CLI11_PARSE(app, argc, argv);
  if (cifar_dir.empty()) {
    if (const char* env = std::getenv("NOISY_FORGE_CIFAR10_DIR")) cifar_dir = env;
  }

  bool failed = false;
  auto run = [&](int id, const std::string& name, auto&& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Status::kFail, std::string("exception: ") + e.what()};
    }
    failed = failed || o.status == Status::kFail;
    print(id, name, o, seconds_since(t0));
  };

  run(1, "reduction equivalence", reduction_equivalence);
  run(2, "gradient oracle", gradient_oracle);
  run(3, "noise statistics", noise_statistics);
  run(4, "metric oracles", metric_oracles);

  std::optional<Workload> cifar;
  std::string blocked_reason;
  try {
    cifar = cifar_workload(cifar_dir, workers);
    if (!cifar) blocked_reason = "CIFAR-10 not available (set --cifar-dir or NOISY_FORGE_CIFAR10_DIR)";
  } catch (const std::exception& e) {
    blocked_reason = std::string("CIFAR-10 could not be loaded: ") + e.what();
  }
  const Workload work = cifar ? *cifar : surrogate_workload(workers);
  const bool real = cifar.has_value();

  // Each long criterion runs twice; criterion 8 compares the CSVs.
  std::vector<Artifacts> passes(2);
  std::vector<int> ran;
  auto long_criterion = [&](int id, const std::string& name, auto fn, bool enabled, const std::string& off_reason) {
    const auto t0 = Clock::now();
    if (!enabled) {
      print(id, name, {real ? Status::kSkipped : Status::kBlocked, real ? off_reason : blocked_reason + "; " + off_reason},
            0.0);
      return;
    }
    Outcome o;
    try {
      o = fn(work, passes[0]);
      fn(work, passes[1]);
      ran.push_back(id);
      // Surrogate thresholds are not the criterion; only a crash counts.
      if (!real) o = {Status::kBlocked, blocked_reason + "; surrogate (synthetic images, " + o.detail + ")"};
    } catch (const std::exception& e) {
      o = {Status::kFail, std::string("exception: ") + e.what()};
    }
    failed = failed || o.status == Status::kFail;
    print(id, name, o, seconds_since(t0) / 2.0);
  };

  long_criterion(5, "baseline degradation", baseline_degradation, true, "");
  long_criterion(6, "NT peak locality", nt_peak_locality, true, "");
  long_criterion(7, "VANT dominance", vant_dominance, full, "requires --full");

  {
    std::size_t files = 0, identical = 0;
    for (const auto& [file, text] : passes[0]) {
      ++files;
      identical += passes[1].count(file) && passes[1].at(file) == text;
    }
    std::string covered;
    for (int id : ran) covered += (covered.empty() ? "" : ",") + std::to_string(id);
    Outcome o{files > 0 && identical == files ? Status::kPass : Status::kFail,
              std::to_string(identical) + "/" + std::to_string(files) + " CSVs byte-identical across reruns of criteria " +
                  (covered.empty() ? "none" : covered)};
    if (files == 0) o = {Status::kBlocked, "no criterion 5-7 ran"};
    if (!real && o.status != Status::kFail) o = {Status::kBlocked, blocked_reason + "; surrogate: " + o.detail};
    failed = failed || o.status == Status::kFail;
    print(8, "determinism", o, 0.0);
  }

  if (!artifacts_dir.empty()) {
    fs::create_directories(artifacts_dir);
    for (const auto& [file, text] : passes[0]) std::ofstream(fs::path(artifacts_dir) / file) << text;
  }
  return failed ? 1 : 0;
}
