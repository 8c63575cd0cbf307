#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "noisyforge/data.hpp"
#include "noisyforge/model.hpp"
#include "noisyforge/noise.hpp"

namespace noisyforge {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double lr0 = 0.001;
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  NoiseSchedule schedule;
  AdamConfig adam;
  bool shuffle = true;
  // Clean accuracy over the training set after every epoch (one extra
  // forward pass per epoch).
  bool log_clean_accuracy = true;
};

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

AdamState make_adam_state(const std::vector<Tensor>& params);

// lr0 * (1 + cos(pi * t / T)) / 2
double cosine_lr(double lr0, std::size_t step, std::size_t total_steps);

// One bias-corrected Adam update of `params` from their grad buffers (a
// missing buffer counts as zero). Throws DivergenceError naming the first
// parameter with a non-finite gradient, before anything is modified.
void adam_step(const std::vector<Tensor>& params, const std::vector<std::string>& names, AdamState& state, double lr,
               const AdamConfig& adam = {});

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // sample-weighted mean of batch losses
  double clean_accuracy = 0.0;
  double lr = 0.0;        // learning rate of the epoch's last step
};

using TrainLog = std::vector<EpochRecord>;

struct TrainResult {
  ModelGraph model;
  TrainLog log;
};

// Called after every optimizer step with (epoch, batch) indices.
using StepObserver = std::function<void(std::size_t epoch, std::size_t batch, const ModelGraph& model)>;

/// Trains a copy of `model` on `data`.
///
/// Every batch draws each image's noise level from cfg.schedule, runs a
/// noisy forward pass, and backpropagates through the noise-free graph.
/// The result is a pure function of (model, data, cfg).
TrainResult train(const ModelGraph& model, const Dataset& data, const TrainConfig& cfg,
                  const StepObserver& observer = {});

std::string trainlog_csv(const TrainLog& log);

}  // namespace noisyforge
