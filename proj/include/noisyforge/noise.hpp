#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "noisyforge/rng.hpp"
#include "noisyforge/tensor.hpp"

namespace noisyforge {

// How a negative draw of the per-image noise level is turned into a valid
// standard deviation.
enum class SigmaRectify { kClamp, kAbs, kResample };

std::string to_string(SigmaRectify mode);
SigmaRectify parse_sigma_rectify(const std::string& name);

struct NoNoise {
  bool operator==(const NoNoise&) const = default;
};

// Standard Noisy Training: every image sees sigma_train.
struct FixedNoise {
  double sigma_train = 0.0;
  bool operator==(const FixedNoise&) const = default;
};

// Variance-aware Noisy Training. Each image draws its own noise level
//   sigma_var ~ N(alpha * sigma_train, theta)
// and every activation of that image then receives x ~ N(0, sigma_var).
struct VarianceAwareNoise {
  double sigma_train = 0.0;
  double alpha = 1.0;
  double theta = 0.0;
  SigmaRectify rectify = SigmaRectify::kClamp;
  bool operator==(const VarianceAwareNoise&) const = default;
};

class NoiseSchedule {
 public:
  using Variant = std::variant<NoNoise, FixedNoise, VarianceAwareNoise>;

  NoiseSchedule() = default;
  // Throws UsageError on negative sigma_train or theta.
  NoiseSchedule(Variant v);  // NOLINT(google-explicit-constructor)

  static NoiseSchedule none() { return NoiseSchedule(NoNoise{}); }
  static NoiseSchedule fixed(double sigma_train) { return NoiseSchedule(FixedNoise{sigma_train}); }
  static NoiseSchedule variance_aware(double sigma_train, double alpha, double theta,
                                      SigmaRectify rectify = SigmaRectify::kClamp) {
    return NoiseSchedule(VarianceAwareNoise{sigma_train, alpha, theta, rectify});
  }

  const Variant& variant() const { return v_; }
  bool is_none() const { return std::holds_alternative<NoNoise>(v_); }
  std::string describe() const;
  bool operator==(const NoiseSchedule&) const = default;

 private:
  Variant v_ = NoNoise{};
};

// Per-image noise level for one presentation of an image. Fixed returns
// sigma_train exactly; VarianceAware draws from its Gaussian and rectifies.
double sample_sigma_var(const NoiseSchedule& schedule, RngStream stream);

// i.i.d. N(0, sigma) tensor of the given shape, drawn from `stream`.
Tensor sample_activation_noise(const Shape& shape, double sigma, RngStream stream);

enum class NoiseMode { kTrain, kEval };

/// Noise state for one forward pass over a batch.
///
/// Row i of the batch sees noise level per_sample_sigma[i] at every injection
/// point. Its activation noise at layer l comes from the stream
/// base.with_sample(sample_ids[i]).with_layer(l).
struct NoiseContext {
  std::vector<float> per_sample_sigma;
  std::vector<std::uint64_t> sample_ids;
  RngStream base{0, RngPath{}};
  NoiseMode mode = NoiseMode::kTrain;
  // Called once per (injection layer, row) with the sigma being applied.
  std::function<void(std::size_t layer, std::size_t row, float sigma)> on_inject;

  std::size_t rows() const { return per_sample_sigma.size(); }
};

// Draws sigma_var for every row of a training batch. For NoNoise the context
// is empty (rows() == 0).
NoiseContext make_train_noise_context(const NoiseSchedule& schedule, std::uint64_t seed, std::uint64_t epoch,
                                      std::uint64_t batch, std::size_t rows);

// Fixed sigma for evaluation; sample_ids are dataset indices so results do not
// depend on how the data is batched.
NoiseContext make_eval_noise_context(double sigma, std::uint64_t seed, std::uint64_t repeat,
                                     std::vector<std::uint64_t> sample_ids);

// Adds each row's noise to `activation` (rank >= 1, leading axis = batch) in
// place. Rows with sigma 0 are left untouched.
void inject_noise(Tensor& activation, const NoiseContext& ctx, std::size_t layer);

}  // namespace noisyforge
