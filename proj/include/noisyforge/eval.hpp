#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "noisyforge/data.hpp"
#include "noisyforge/model.hpp"
#include "noisyforge/train.hpp"

namespace noisyforge {

struct EvalOptions {
  std::size_t batch_size = 500;
  std::size_t workers = 1;
};

struct AccuracyStats {
  double mean = 0.0;
  double stddev = 0.0;  // population std over repeats
};

/// Accuracy vs. inference noise level.
///
/// `sigmas` is strictly increasing and excludes the clean point, which is
/// kept separately in clean_accuracy and never enters the AUC.
struct RobustnessCurve {
  std::vector<double> sigmas;
  std::vector<double> mean_accuracy;
  std::vector<double> std_accuracy;
  std::size_t repeats = 0;
  double clean_accuracy = 0.0;

  std::size_t size() const { return sigmas.size(); }
  // Throws UsageError if the invariants above do not hold.
  void validate() const;
};

// Per-sigma optimum of Noisy Training. provenance[i] names the trained
// model(s) that produced point i.
struct UpperBoundCurve {
  RobustnessCurve curve;
  std::vector<std::string> provenance;
};

// min, min + step, ... up to max inclusive (within 1e-9), values rounded to
// 1e-9 so that e.g. 0.1 + 2 * 0.1 prints as 0.3.
std::vector<double> sigma_grid(double min, double max, double step);
std::vector<double> default_sigma_grid();  // 0.1 .. 3.0 step 0.1

double evaluate_clean(const ModelGraph& model, const Dataset& data, const EvalOptions& options = {});

// `repeats` independent noisy passes over the whole dataset at a fixed sigma.
// Repeat r uses noise paths (seed, repeat r, sample id, layer), so the same
// seed gives the same numbers at any batch size or worker count. sigma = 0
// returns the clean accuracy with zero spread.
AccuracyStats evaluate_at_sigma(const ModelGraph& model, const Dataset& data, double sigma, std::size_t repeats,
                                std::uint64_t seed, const EvalOptions& options = {});

RobustnessCurve noise_sweep(const ModelGraph& model, const Dataset& data, const std::vector<double>& sigmas,
                            std::size_t repeats, std::uint64_t seed, const EvalOptions& options = {});

// Trapezoidal integral of mean accuracy over the sigma axis.
double auc_trapezoid(const RobustnessCurve& curve);

// 100 * AUC(method) / AUC(upper); the two grids must match.
double compute_rauc(const RobustnessCurve& method, const UpperBoundCurve& upper);

// Mean accuracy at `sigma`, linearly interpolated between grid points.
double accuracy_at(const RobustnessCurve& curve, double sigma);

// 100 * (acc_vant(sigma_train) - acc_nt(sigma_train)) in percentage points.
double preserved_accuracy(const RobustnessCurve& vant, const RobustnessCurve& nt, double sigma_train);

using ModelFactory = std::function<ModelGraph()>;
using TrainedHook = std::function<void(double sigma_train, const ModelGraph& model, const TrainLog& log)>;

struct UpperBoundPlan {
  std::vector<double> train_sigmas;  // where NT models are trained
  std::vector<double> eval_sigmas;   // grid of the resulting curve
  std::size_t repeats = 5;
  std::uint64_t eval_seed = 0;
};

std::vector<double> default_upper_bound_sigmas();  // {0.25, 0.5, 1.0, ..., 3.0}

/// Trains one NT model per plan.train_sigmas entry and evaluates it at its
/// own sigma. Evaluation points between two trained sigmas are linearly
/// interpolated; points outside the trained range are measured directly on
/// the nearest trained model.
UpperBoundCurve build_upper_bound(const ModelFactory& factory, const Dataset& train_data, const Dataset& test_data,
                                  const UpperBoundPlan& plan, const TrainConfig& base, const EvalOptions& options = {},
                                  const TrainedHook& on_trained = {});

}  // namespace noisyforge
