#include "noisyforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "noisyforge/error.hpp"
#include "noisyforge/format.hpp"
#include "noisyforge/parallel.hpp"

namespace noisyforge {
namespace {

constexpr double kGridTolerance = 1e-9;

std::size_t count_hits(const ModelGraph& model, const Dataset& data, std::optional<double> sigma, std::uint64_t seed,
                       std::uint64_t repeat, std::size_t batch_size) {
  std::size_t hits = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = data.gather_images(idx);
    Tensor logits;
    if (sigma) {
      const NoiseContext ctx =
          make_eval_noise_context(*sigma, seed, repeat, std::vector<std::uint64_t>(idx.begin(), idx.end()));
      logits = forward(model, x, &ctx);
    } else {
      logits = forward(model, x);
    }
    const auto predicted = predict_labels(logits);
    for (std::size_t i = 0; i < idx.size(); ++i) hits += predicted[i] == data.labels[idx[i]] ? 1 : 0;
  }
  return hits;
}

void check_eval_inputs(const Dataset& data, std::size_t repeats, const EvalOptions& options) {
  if (data.size() == 0) throw UsageError("evaluation dataset is empty");
  if (repeats == 0) throw UsageError("evaluation needs at least one repeat");
  if (options.batch_size == 0) throw UsageError("evaluation batch size must be positive");
}

AccuracyStats summarize(std::span<const double> values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x, std::size_t hi) {
  const std::size_t lo = hi - 1;
  const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

bool same_sigma(double a, double b) { return std::abs(a - b) <= kGridTolerance; }

}  // namespace

void RobustnessCurve::validate() const {
  if (sigmas.empty()) throw UsageError("robustness curve has no points");
  if (mean_accuracy.size() != sigmas.size() || std_accuracy.size() != sigmas.size()) {
    throw UsageError("robustness curve columns have different lengths");
  }
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] >= 0.0)) throw UsageError("robustness curve sigma must be >= 0");
    if (i > 0 && !(sigmas[i] > sigmas[i - 1])) throw UsageError("robustness curve sigmas must be strictly increasing");
    if (!(mean_accuracy[i] >= 0.0 && mean_accuracy[i] <= 1.0)) {
      throw UsageError("robustness curve accuracy outside [0, 1] at sigma " + format_real(sigmas[i]));
    }
    if (!(std_accuracy[i] >= 0.0)) throw UsageError("robustness curve std must be >= 0");
  }
}

std::vector<double> sigma_grid(double min, double max, double step) {
  if (!(min >= 0.0) || !(max >= min) || !(step > 0.0)) {
    throw UsageError("sigma grid needs 0 <= min <= max and step > 0");
  }
  std::vector<double> grid;
  for (std::size_t i = 0;; ++i) {
    const double v = min + static_cast<double>(i) * step;
    if (v > max + kGridTolerance) break;
    grid.push_back(std::round(v * 1e9) / 1e9);
  }
  return grid;
}

std::vector<double> default_sigma_grid() { return sigma_grid(0.1, 3.0, 0.1); }

std::vector<double> default_upper_bound_sigmas() { return {0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0}; }

double evaluate_clean(const ModelGraph& model, const Dataset& data, const EvalOptions& options) {
  check_eval_inputs(data, 1, options);
  return static_cast<double>(count_hits(model, data, std::nullopt, 0, 0, options.batch_size)) /
         static_cast<double>(data.size());
}

AccuracyStats evaluate_at_sigma(const ModelGraph& model, const Dataset& data, double sigma, std::size_t repeats,
                                std::uint64_t seed, const EvalOptions& options) {
  check_eval_inputs(data, repeats, options);
  if (!(sigma >= 0.0)) throw UsageError("evaluation sigma must be >= 0");
  if (sigma == 0.0) return {evaluate_clean(model, data, options), 0.0};
  std::vector<double> acc(repeats);
  parallel_for(repeats, options.workers, [&](std::size_t r) {
    acc[r] = static_cast<double>(count_hits(model, data, sigma, seed, r, options.batch_size)) /
             static_cast<double>(data.size());
  });
  return summarize(acc);
}

RobustnessCurve noise_sweep(const ModelGraph& model, const Dataset& data, const std::vector<double>& sigmas,
                            std::size_t repeats, std::uint64_t seed, const EvalOptions& options) {
  check_eval_inputs(data, repeats, options);
  if (sigmas.empty()) throw UsageError("noise sweep needs at least one sigma");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] >= 0.0)) throw UsageError("noise sweep sigmas must be >= 0");
    if (i > 0 && !(sigmas[i] > sigmas[i - 1])) throw UsageError("noise sweep sigmas must be strictly increasing");
  }
  RobustnessCurve curve;
  curve.sigmas = sigmas;
  curve.repeats = repeats;
  curve.clean_accuracy = evaluate_clean(model, data, options);

  // One job per (sigma, repeat); slots are fixed so the assembly order does
  // not depend on scheduling.
  std::vector<double> acc(sigmas.size() * repeats);
  parallel_for(acc.size(), options.workers, [&](std::size_t job) {
    const std::size_t i = job / repeats, r = job % repeats;
    acc[job] = sigmas[i] == 0.0 ? curve.clean_accuracy
                                : static_cast<double>(count_hits(model, data, sigmas[i], seed, r, options.batch_size)) /
                                      static_cast<double>(data.size());
  });
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    const auto stats = summarize(std::span<const double>(acc.data() + i * repeats, repeats));
    curve.mean_accuracy.push_back(stats.mean);
    curve.std_accuracy.push_back(sigmas[i] == 0.0 ? 0.0 : stats.stddev);
  }
  return curve;
}

double auc_trapezoid(const RobustnessCurve& curve) {
  if (curve.sigmas.size() < 2) throw UsageError("AUC needs at least two grid points");
  if (curve.mean_accuracy.size() != curve.sigmas.size()) throw UsageError("AUC: curve columns differ in length");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.sigmas.size(); ++i) {
    area += 0.5 * (curve.sigmas[i] - curve.sigmas[i - 1]) * (curve.mean_accuracy[i] + curve.mean_accuracy[i - 1]);
  }
  return area;
}

double compute_rauc(const RobustnessCurve& method, const UpperBoundCurve& upper) {
  const auto& ref = upper.curve;
  if (method.sigmas.size() != ref.sigmas.size() ||
      !std::equal(method.sigmas.begin(), method.sigmas.end(), ref.sigmas.begin(), same_sigma)) {
    throw UsageError("rAUC: method and upper-bound curves use different sigma grids");
  }
  const double denom = auc_trapezoid(ref);
  if (!(denom > 0.0)) throw InputError("rAUC: upper-bound curve has zero area");
  return 100.0 * auc_trapezoid(method) / denom;
}

double accuracy_at(const RobustnessCurve& curve, double sigma) {
  const auto& xs = curve.sigmas;
  if (xs.empty()) throw UsageError("accuracy_at: empty curve");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (same_sigma(xs[i], sigma)) return curve.mean_accuracy[i];
  }
  if (sigma < xs.front() || sigma > xs.back()) {
    throw UsageError("sigma " + format_real(sigma) + " lies outside the curve's grid [" + format_real(xs.front()) +
                     ", " + format_real(xs.back()) + "]");
  }
  const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), sigma) - xs.begin());
  return interpolate(xs, curve.mean_accuracy, sigma, hi);
}

double preserved_accuracy(const RobustnessCurve& vant, const RobustnessCurve& nt, double sigma_train) {
  return 100.0 * (accuracy_at(vant, sigma_train) - accuracy_at(nt, sigma_train));
}

UpperBoundCurve build_upper_bound(const ModelFactory& factory, const Dataset& train_data, const Dataset& test_data,
                                  const UpperBoundPlan& plan, const TrainConfig& base, const EvalOptions& options,
                                  const TrainedHook& on_trained) {
  const auto& ts = plan.train_sigmas;
  if (ts.empty() || plan.eval_sigmas.empty()) throw UsageError("upper bound needs training and evaluation sigmas");
  for (std::size_t i = 1; i < ts.size(); ++i) {
    if (!(ts[i] > ts[i - 1])) throw UsageError("upper-bound training sigmas must be strictly increasing");
  }

  struct Trained {
    std::optional<ModelGraph> model;
    TrainLog log;
    AccuracyStats at_own_sigma;
  };
  std::vector<Trained> trained(ts.size());
  EvalOptions inner = options;
  inner.workers = 1;
  parallel_for(ts.size(), options.workers, [&](std::size_t i) {
    TrainConfig cfg = base;
    cfg.schedule = NoiseSchedule::fixed(ts[i]);
    try {
      auto result = train(factory(), train_data, cfg);
      trained[i].at_own_sigma = evaluate_at_sigma(result.model, test_data, ts[i], plan.repeats, plan.eval_seed, inner);
      trained[i].log = std::move(result.log);
      trained[i].model = std::move(result.model);
    } catch (const Error& e) {
      throw DivergenceError("upper bound: training at sigma " + format_real(ts[i]) + " failed: " + e.what());
    }
  });
  if (on_trained) {
    for (std::size_t i = 0; i < ts.size(); ++i) on_trained(ts[i], *trained[i].model, trained[i].log);
  }

  const auto id = [&](std::size_t i) { return "nt_sigma_" + format_real(ts[i]); };
  UpperBoundCurve upper;
  upper.curve.repeats = plan.repeats;
  upper.curve.sigmas = plan.eval_sigmas;
  upper.curve.clean_accuracy = evaluate_clean(*trained.front().model, test_data, inner);
  std::vector<double> means, stds;
  for (const auto& t : trained) {
    means.push_back(t.at_own_sigma.mean);
    stds.push_back(t.at_own_sigma.stddev);
  }
  for (double s : plan.eval_sigmas) {
    const auto exact = std::find_if(ts.begin(), ts.end(), [&](double t) { return same_sigma(t, s); });
    if (exact != ts.end()) {
      const auto i = static_cast<std::size_t>(exact - ts.begin());
      upper.curve.mean_accuracy.push_back(means[i]);
      upper.curve.std_accuracy.push_back(stds[i]);
      upper.provenance.push_back(id(i));
    } else if (s < ts.front() || s > ts.back()) {
      const std::size_t i = s < ts.front() ? 0 : ts.size() - 1;
      const auto stats = evaluate_at_sigma(*trained[i].model, test_data, s, plan.repeats, plan.eval_seed, options);
      upper.curve.mean_accuracy.push_back(stats.mean);
      upper.curve.std_accuracy.push_back(stats.stddev);
      upper.provenance.push_back(id(i));
    } else {
      const auto hi = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), s) - ts.begin());
      upper.curve.mean_accuracy.push_back(interpolate(ts, means, s, hi));
      upper.curve.std_accuracy.push_back(interpolate(ts, stds, s, hi));
      upper.provenance.push_back("interp(" + id(hi - 1) + "," + id(hi) + ")");
    }
  }
  return upper;
}

}  // namespace noisyforge
