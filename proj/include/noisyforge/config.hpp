#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "noisyforge/data.hpp"
#include "noisyforge/eval.hpp"
#include "noisyforge/model.hpp"
#include "noisyforge/scan.hpp"
#include "noisyforge/train.hpp"

namespace noisyforge {

struct ModelConfig {
  std::string preset = "mlp2";
  bool logit_noise = true;
  bool inject_after_pool = false;
};

struct DataConfig {
  std::string source = "synthetic_blobs";  // synthetic_blobs | synthetic_images | cifar10 | idx
  // synthetic_blobs / synthetic_images
  std::size_t num_classes = 2;
  std::size_t n_per_class = 200;
  std::size_t dim = 8;
  double separation = 10.0;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  double pixel_noise = 0.5;
  // cifar10
  std::string dir;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // cifar10 / idx desk-scale reduction
  std::optional<std::size_t> train_subset;
  std::optional<std::size_t> test_subset;
};

struct EvalConfig {
  double sigma_min = 0.1;
  double sigma_max = 3.0;
  double sigma_step = 0.1;
  std::size_t repeats = 5;
  std::size_t batch_size = 500;
};

struct ScanConfig {
  double sigma_train = 1.0;
  std::vector<double> alphas;  // empty: default grid
  std::vector<double> thetas;  // empty: default grid
  std::optional<std::size_t> epochs;
};

/// Everything a command needs. A config file plus the code version fixes
/// every output byte: all randomness is derived from `seed`.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  ModelConfig model;
  DataConfig data;
  TrainConfig train;  // train.schedule holds the "schedule" section
  EvalConfig eval;
  std::vector<double> upper_bound_sigmas = default_upper_bound_sigmas();
  ScanConfig scan;

  InjectionOptions injection() const { return {true, model.inject_after_pool, model.logit_noise}; }
  std::vector<double> eval_sigmas() const { return sigma_grid(eval.sigma_min, eval.sigma_max, eval.sigma_step); }
  ScanGrid scan_grid() const;
};

// Parses and validates JSON config text. Unknown keys, wrong types and
// out-of-range values raise ConfigError naming the dotted field path.
ExperimentConfig parse_experiment_config(const std::string& text);
std::string resolved_config_json(const ExperimentConfig& config);

std::pair<Dataset, Dataset> load_experiment_data(const ExperimentConfig& config);

ModelGraph build_experiment_model(const ExperimentConfig& config, const Dataset& train);

// Class-template images with Gaussian pixel noise, [N x C x H x W].
std::pair<Dataset, Dataset> synthetic_images(std::size_t num_classes, std::size_t n_per_class, std::size_t channels,
                                             std::size_t height, std::size_t width, double pixel_noise,
                                             std::uint64_t seed);

}  // namespace noisyforge
