#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "noisyforge/eval.hpp"

namespace noisyforge {

struct ScanGrid {
  std::vector<double> alphas;
  std::vector<double> thetas;
  double sigma_train = 0.0;

  void validate() const;
};

// alpha in {0.15, 0.3, 0.45, 0.6, 0.75, 1.0}; theta in
// {0, 0.05, 0.15, 0.25, 0.35, 0.5, 0.75} plus the heuristic value.
ScanGrid default_scan_grid(double sigma_train);

// 0.4 * sigma_train. A starting point for the theta range, not a substitute
// for scanning.
double theta_heuristic(double sigma_train);

enum class CellStatus { kOk, kFailed };

struct ScanCell {
  double alpha = 0.0;
  double theta = 0.0;
  double rauc_percent = 0.0;
  double preserved_acc_pp = 0.0;
  std::string checkpoint_id;
  CellStatus status = CellStatus::kOk;
  std::string error;
};

struct CellMetrics {
  double rauc_percent = 0.0;
  double preserved_acc_pp = 0.0;
  std::string checkpoint_id;
};

using CellEvaluator = std::function<CellMetrics(double alpha, double theta)>;

// Evaluates every (alpha, theta) cell, alpha-major. A cell whose evaluator
// throws is kept with status kFailed and its message; the scan continues.
std::vector<ScanCell> grid_scan(const ScanGrid& grid, const CellEvaluator& evaluate, std::size_t workers = 1);

struct ScanSetup {
  ModelFactory factory;
  const Dataset* train_data = nullptr;
  const Dataset* test_data = nullptr;
  TrainConfig train_config;  // schedule is replaced per cell
  UpperBoundCurve upper;
  RobustnessCurve nt_curve;  // NT at grid.sigma_train, on upper's grid
  double sigma_train = 0.0;
  std::size_t repeats = 5;
  std::uint64_t eval_seed = 0;
  SigmaRectify rectify = SigmaRectify::kClamp;
  // Receives each cell's trained model and sweep.
  std::function<void(double alpha, double theta, const ModelGraph&, const RobustnessCurve&)> on_cell;
};

// Trains VANT(sigma_train, alpha, theta) per cell, sweeps it over the upper
// bound's grid and scores it against the upper bound and the NT curve.
CellEvaluator make_training_evaluator(ScanSetup setup);

std::string cell_id(double alpha, double theta);

struct Selection {
  ScanCell cell;
  bool relaxed = false;
};

/// Picks the best cell: among cells with preserved accuracy >= 0, the one
/// with the highest rAUC. If no cell preserves accuracy, the cell with the
/// highest preserved accuracy is returned with relaxed = true. Ties go to
/// smaller theta, then smaller alpha. Failed cells are ignored.
Selection select_optimal(std::span<const ScanCell> cells);

}  // namespace noisyforge
