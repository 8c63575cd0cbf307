#include "noisyforge/scan.hpp"

#include <algorithm>
#include <cmath>

#include "noisyforge/error.hpp"
#include "noisyforge/format.hpp"
#include "noisyforge/parallel.hpp"

namespace noisyforge {
namespace {

void check_increasing(const std::vector<double>& xs, const char* what) {
  if (xs.empty()) throw UsageError(std::string("scan grid: no ") + what);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (!(xs[i] > xs[i - 1])) throw UsageError(std::string("scan grid: ") + what + " must be strictly increasing");
  }
}

// True if `a` should be preferred over `b` at equal score.
bool tie_break(const ScanCell& a, const ScanCell& b) {
  if (a.theta != b.theta) return a.theta < b.theta;
  return a.alpha < b.alpha;
}

}  // namespace

void ScanGrid::validate() const {
  check_increasing(alphas, "alphas");
  check_increasing(thetas, "thetas");
  if (thetas.front() < 0.0) throw UsageError("scan grid: thetas must be >= 0");
  if (!(sigma_train >= 0.0)) throw UsageError("scan grid: sigma_train must be >= 0");
}

double theta_heuristic(double sigma_train) { return 0.4 * sigma_train; }

ScanGrid default_scan_grid(double sigma_train) {
  ScanGrid grid;
  grid.sigma_train = sigma_train;
  grid.alphas = {0.15, 0.3, 0.45, 0.6, 0.75, 1.0};
  grid.thetas = {0.0, 0.05, 0.15, 0.25, 0.35, 0.5, 0.75};
  const double h = std::round(theta_heuristic(sigma_train) * 1e9) / 1e9;
  if (std::none_of(grid.thetas.begin(), grid.thetas.end(), [&](double t) { return std::abs(t - h) < 1e-9; })) {
    grid.thetas.insert(std::upper_bound(grid.thetas.begin(), grid.thetas.end(), h), h);
  }
  return grid;
}

std::vector<ScanCell> grid_scan(const ScanGrid& grid, const CellEvaluator& evaluate, std::size_t workers) {
  grid.validate();
  const std::size_t nt = grid.thetas.size();
  std::vector<ScanCell> cells(grid.alphas.size() * nt);
  parallel_for(cells.size(), workers, [&](std::size_t i) {
    ScanCell& cell = cells[i];
    cell.alpha = grid.alphas[i / nt];
    cell.theta = grid.thetas[i % nt];
    try {
      const CellMetrics m = evaluate(cell.alpha, cell.theta);
      cell.rauc_percent = m.rauc_percent;
      cell.preserved_acc_pp = m.preserved_acc_pp;
      cell.checkpoint_id = m.checkpoint_id;
    } catch (const std::exception& e) {
      cell.status = CellStatus::kFailed;
      cell.error = e.what();
    }
  });
  return cells;
}

std::string cell_id(double alpha, double theta) {
  return "vant_alpha_" + format_real(alpha) + "_theta_" + format_real(theta);
}

CellEvaluator make_training_evaluator(ScanSetup setup) {
  if (setup.train_data == nullptr || setup.test_data == nullptr) throw UsageError("scan setup needs train and test data");
  return [setup = std::move(setup)](double alpha, double theta) {
    TrainConfig cfg = setup.train_config;
    cfg.schedule = NoiseSchedule::variance_aware(setup.sigma_train, alpha, theta, setup.rectify);
    const auto trained = train(setup.factory(), *setup.train_data, cfg);
    const auto curve = noise_sweep(trained.model, *setup.test_data, setup.upper.curve.sigmas, setup.repeats,
                                   setup.eval_seed);
    if (setup.on_cell) setup.on_cell(alpha, theta, trained.model, curve);
    CellMetrics m;
    m.rauc_percent = compute_rauc(curve, setup.upper);
    m.preserved_acc_pp = preserved_accuracy(curve, setup.nt_curve, setup.sigma_train);
    m.checkpoint_id = cell_id(alpha, theta);
    return m;
  };
}

Selection select_optimal(std::span<const ScanCell> cells) {
  if (cells.empty()) throw UsageError("select_optimal: no cells");
  const ScanCell* best = nullptr;
  for (const auto& c : cells) {
    if (c.status != CellStatus::kOk || !(c.preserved_acc_pp >= 0.0)) continue;
    if (!best || c.rauc_percent > best->rauc_percent ||
        (c.rauc_percent == best->rauc_percent && tie_break(c, *best))) {
      best = &c;
    }
  }
  if (best) return {*best, false};
  for (const auto& c : cells) {
    if (c.status != CellStatus::kOk) continue;
    if (!best || c.preserved_acc_pp > best->preserved_acc_pp ||
        (c.preserved_acc_pp == best->preserved_acc_pp && tie_break(c, *best))) {
      best = &c;
    }
  }
  if (!best) throw UsageError("select_optimal: every cell failed");
  return {*best, true};
}

}  // namespace noisyforge
