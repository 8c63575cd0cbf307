#include "noisyforge/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "noisyforge/error.hpp"
#include "noisyforge/format.hpp"
#include "noisyforge/ops.hpp"
#include "noisyforge/rng.hpp"

namespace noisyforge {
namespace {

constexpr std::size_t kAccuracyBatch = 512;

double clean_accuracy(const ModelGraph& model, const Dataset& data) {
  std::size_t hits = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kAccuracyBatch) {
    const std::size_t end = std::min(data.size(), start + kAccuracyBatch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto predicted = predict_labels(forward(model, data.gather_images(idx)));
    for (std::size_t i = 0; i < idx.size(); ++i) hits += predicted[i] == data.labels[idx[i]] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!shuffle) return order;
  RngStream rng(seed, RngPath{Purpose::kShuffle, epoch, 0, 0, 0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
  return order;
}

}  // namespace

AdamState make_adam_state(const std::vector<Tensor>& params) {
  AdamState state;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0);
    state.second_moment.emplace_back(p.numel(), 0.0);
  }
  return state;
}

double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) throw UsageError("cosine_lr: total steps must be positive");
  if (step > total_steps) throw UsageError("cosine_lr: step beyond schedule end");
  if (step == total_steps) return 0.0;
  const double ratio = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * ratio));
}

void adam_step(const std::vector<Tensor>& params, const std::vector<std::string>& names, AdamState& state, double lr,
               const AdamConfig& adam) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel()) {
      throw DimensionError("adam_step: moment buffer size differs for parameter " + std::to_string(i));
    }
    for (float g : params[i].grad()) {
      if (!std::isfinite(g)) {
        const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
        throw DivergenceError("adam_step: non-finite gradient in parameter " + name + " at optimizer step " +
                              std::to_string(state.step + 1));
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(adam.beta1, t);
  const double correction2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    const auto grad = p.grad();
    auto values = p.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      m[j] = adam.beta1 * m[j] + (1.0 - adam.beta1) * g;
      v[j] = adam.beta2 * v[j] + (1.0 - adam.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] = static_cast<float>(values[j] - lr * m_hat / (std::sqrt(v_hat) + adam.eps));
    }
  }
}

TrainResult train(const ModelGraph& model, const Dataset& data, const TrainConfig& cfg, const StepObserver& observer) {
  if (data.size() == 0) throw UsageError("train: dataset is empty");
  if (data.sample_shape() != model.input_shape()) {
    throw DimensionError("train: data samples " + shape_string(data.sample_shape()) + " do not match model input " +
                         shape_string(model.input_shape()));
  }
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw UsageError("train: epochs and batch_size must be positive");
  if (!(cfg.lr0 > 0.0)) throw UsageError("train: lr0 must be positive");

  TrainResult result{model.clone(), {}};
  ModelGraph& net = result.model;
  const auto params = net.parameters();
  const auto names = net.parameter_names();
  AdamState adam = make_adam_state(params);

  const std::size_t n = data.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch, cfg.shuffle);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor x = data.gather_images(idx);
      const auto labels = data.gather_labels(idx);

      const auto where = [&] {
        return "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1);
      };
      for (Tensor p : params) p.zero_grad();
      const NoiseContext noise = make_train_noise_context(cfg.schedule, cfg.seed, epoch, b, idx.size());
      Tape tape;
      Tensor loss;
      try {
        const Tensor logits = forward(net, x, &noise, &tape);
        loss = ops::softmax_cross_entropy(logits, labels, &tape);
      } catch (const InputError& e) {
        throw DivergenceError("training diverged at " + where() + ": " + e.what());
      }
      if (!std::isfinite(loss.item())) throw DivergenceError("training diverged at " + where() + ": loss is not finite");
      tape.backward(loss);
      lr = cosine_lr(cfg.lr0, step, total_steps);
      try {
        adam_step(params, names, adam, lr, cfg.adam);
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at " + where() + ": " + e.what());
      }
      ++step;
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      if (observer) observer(epoch, b, net);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = loss_sum / static_cast<double>(n);
    rec.lr = lr;
    rec.clean_accuracy = cfg.log_clean_accuracy ? clean_accuracy(net, data) : 0.0;
    result.log.push_back(rec);
  }
  return result;
}

std::string trainlog_csv(const TrainLog& log) {
  std::ostringstream out;
  out << "epoch,loss,clean_acc,lr\n";
  for (const auto& r : log)
    out << r.epoch << ',' << format_real(r.loss) << ',' << format_real(r.clean_accuracy) << ',' << format_real(r.lr)
        << '\n';
  return out.str();
}

}  // namespace noisyforge
