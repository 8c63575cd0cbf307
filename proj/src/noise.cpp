#include "noisyforge/noise.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "noisyforge/error.hpp"

namespace noisyforge {
namespace {

// Bounded so that a schedule with almost no mass above zero cannot stall.
constexpr int kMaxResample = 64;

}  // namespace

std::string to_string(SigmaRectify mode) {
  switch (mode) {
    case SigmaRectify::kClamp: return "clamp";
    case SigmaRectify::kAbs: return "abs";
    case SigmaRectify::kResample: return "resample";
  }
  return "clamp";
}

SigmaRectify parse_sigma_rectify(const std::string& name) {
  if (name == "clamp") return SigmaRectify::kClamp;
  if (name == "abs") return SigmaRectify::kAbs;
  if (name == "resample") return SigmaRectify::kResample;
  throw UsageError("unknown sigma rectification mode '" + name + "'");
}

NoiseSchedule::NoiseSchedule(Variant v) : v_(std::move(v)) {
  if (const auto* f = std::get_if<FixedNoise>(&v_)) {
    if (!(f->sigma_train >= 0.0)) throw UsageError("noise schedule: sigma_train must be >= 0");
  } else if (const auto* va = std::get_if<VarianceAwareNoise>(&v_)) {
    if (!(va->sigma_train >= 0.0)) throw UsageError("noise schedule: sigma_train must be >= 0");
    if (!(va->theta >= 0.0)) throw UsageError("noise schedule: theta must be >= 0");
    if (!std::isfinite(va->alpha)) throw UsageError("noise schedule: alpha must be finite");
  }
}

std::string NoiseSchedule::describe() const {
  std::ostringstream out;
  if (std::holds_alternative<NoNoise>(v_)) {
    out << "none";
  } else if (const auto* f = std::get_if<FixedNoise>(&v_)) {
    out << "fixed(sigma_train=" << f->sigma_train << ")";
  } else {
    const auto& va = std::get<VarianceAwareNoise>(v_);
    out << "vant(sigma_train=" << va.sigma_train << ", alpha=" << va.alpha << ", theta=" << va.theta
        << ", rectify=" << to_string(va.rectify) << ")";
  }
  return out.str();
}

double sample_sigma_var(const NoiseSchedule& schedule, RngStream stream) {
  const auto& v = schedule.variant();
  if (std::holds_alternative<NoNoise>(v)) throw UsageError("sample_sigma_var: schedule has no noise");
  if (const auto* f = std::get_if<FixedNoise>(&v)) return f->sigma_train;

  const auto& va = std::get<VarianceAwareNoise>(v);
  const double mean = va.alpha * va.sigma_train;
  if (va.theta == 0.0) return std::max(0.0, mean);
  double draw = mean + va.theta * normal_draw(stream);
  switch (va.rectify) {
    case SigmaRectify::kClamp: return std::max(0.0, draw);
    case SigmaRectify::kAbs: return std::abs(draw);
    case SigmaRectify::kResample:
      for (int i = 0; i < kMaxResample && draw < 0.0; ++i) draw = mean + va.theta * normal_draw(stream);
      return std::max(0.0, draw);
  }
  return std::max(0.0, draw);
}

Tensor sample_activation_noise(const Shape& shape, double sigma, RngStream stream) {
  if (!(sigma >= 0.0)) throw UsageError("sample_activation_noise: sigma must be >= 0");
  Tensor out(shape, 0.0f);
  if (sigma > 0.0) stream.fill_normal(out.mutable_data(), static_cast<float>(sigma), false);
  return out;
}

NoiseContext make_train_noise_context(const NoiseSchedule& schedule, std::uint64_t seed, std::uint64_t epoch,
                                      std::uint64_t batch, std::size_t rows) {
  NoiseContext ctx;
  ctx.mode = NoiseMode::kTrain;
  if (schedule.is_none()) return ctx;
  ctx.base = RngStream(seed, RngPath{Purpose::kTrainNoise, epoch, batch, 0, 0});
  const RngStream sigma_stream(seed, RngPath{Purpose::kSigmaVar, epoch, batch, 0, 0});
  ctx.per_sample_sigma.resize(rows);
  ctx.sample_ids.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    ctx.per_sample_sigma[i] = static_cast<float>(sample_sigma_var(schedule, sigma_stream.with_sample(i)));
    ctx.sample_ids[i] = i;
  }
  return ctx;
}

NoiseContext make_eval_noise_context(double sigma, std::uint64_t seed, std::uint64_t repeat,
                                     std::vector<std::uint64_t> sample_ids) {
  if (!(sigma >= 0.0)) throw UsageError("evaluation sigma must be >= 0");
  NoiseContext ctx;
  ctx.mode = NoiseMode::kEval;
  ctx.base = RngStream(seed, RngPath{Purpose::kEvalNoise, repeat, 0, 0, 0});
  ctx.per_sample_sigma.assign(sample_ids.size(), static_cast<float>(sigma));
  ctx.sample_ids = std::move(sample_ids);
  return ctx;
}

void inject_noise(Tensor& activation, const NoiseContext& ctx, std::size_t layer) {
  if (ctx.rows() == 0) return;
  if (activation.rank() == 0 || activation.dim(0) != ctx.rows()) {
    throw DimensionError("inject_noise: activation " + shape_string(activation.shape()) + " does not have " +
                         std::to_string(ctx.rows()) + " rows");
  }
  const std::size_t per_row = activation.numel() / ctx.rows();
  auto data = activation.mutable_data();
  for (std::size_t i = 0; i < ctx.rows(); ++i) {
    const float sigma = ctx.per_sample_sigma[i];
    if (ctx.on_inject) ctx.on_inject(layer, i, sigma);
    if (sigma == 0.0f) continue;
    RngStream stream = ctx.base.with_sample(ctx.sample_ids[i]).with_layer(layer);
    stream.fill_normal(data.subspan(i * per_row, per_row), sigma, true);
  }
}

}  // namespace noisyforge
