#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "noisyforge/ops.hpp"

namespace nftest {

using namespace noisyforge;

Tensor uniform_tensor(const Shape& shape, RngStream& rng, double lo, double hi, bool requires_grad) {
  Tensor t(shape);
  for (auto& v : t.mutable_data()) v = static_cast<float>(lo + (hi - lo) * rng.next_uniform());
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor away_from_zero(const Shape& shape, RngStream& rng, double gap, double hi) {
  Tensor t(shape);
  for (auto& v : t.mutable_data()) {
    const double mag = gap + (hi - gap) * rng.next_uniform();
    v = static_cast<float>(rng.next_uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

Tensor distinct_tensor(const Shape& shape, RngStream& rng, double gap) {
  Tensor t(shape);
  auto d = t.mutable_data();
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
  const double span = gap * 3.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[order[i]] = static_cast<float>((static_cast<double>(i) - n / 2.0) * span + gap * rng.next_uniform());
  }
  return t;
}

namespace {

double contract(const Tensor& y, const std::vector<double>& w) {
  double s = 0.0;
  const auto d = y.data();
  for (std::size_t i = 0; i < d.size(); ++i) s += w[i] * d[i];
  return s;
}

}  // namespace

double max_gradient_error(const OpUnderTest& op, const std::vector<Tensor>& inputs, RngStream& rng, double h) {
  std::vector<Tensor> xs;
  for (const auto& x : inputs) {
    Tensor c = x.clone();
    c.set_requires_grad(true);
    xs.push_back(c);
  }
  const Tensor probe = op(xs, nullptr);
  std::vector<double> w(probe.numel());
  std::vector<float> wf(probe.numel());
  for (std::size_t i = 0; i < w.size(); ++i) {
    wf[i] = static_cast<float>(2.0 * rng.next_uniform() - 1.0);
    w[i] = wf[i];
  }

  Tape tape;
  const Tensor y = op(xs, &tape);
  const Tensor loss = y.numel() == 1 && y.rank() == 0 ? ops::scale(y, wf[0], &tape)
                                                      : ops::sum(ops::mul(y, Tensor(y.shape(), wf), &tape), &tape);
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const std::vector<float> analytic = xs[k].has_grad()
                                            ? std::vector<float>(xs[k].grad().begin(), xs[k].grad().end())
                                            : std::vector<float>(xs[k].numel(), 0.0f);
    for (std::size_t i = 0; i < xs[k].numel(); ++i) {
      std::vector<Tensor> plus, minus;
      for (std::size_t j = 0; j < xs.size(); ++j) {
        plus.push_back(xs[j].clone());
        minus.push_back(xs[j].clone());
      }
      const float x0 = xs[k].data()[i];
      const float xp = static_cast<float>(x0 + h);
      const float xm = static_cast<float>(x0 - h);
      plus[k].mutable_data()[i] = xp;
      minus[k].mutable_data()[i] = xm;
      const double numeric =
          (contract(op(plus, nullptr), w) - contract(op(minus, nullptr), w)) / (static_cast<double>(xp) - xm);
      const double a = analytic[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

std::vector<OpGradientCase> op_gradient_cases() {
  std::vector<OpGradientCase> cases;
  auto dim = [](RngStream& rng, std::size_t lo, std::size_t hi) { return lo + rng.next_below(hi - lo + 1); };

  cases.push_back({"matmul", [=](RngStream& rng) {
                     const std::size_t m = dim(rng, 1, 5), k = dim(rng, 1, 6), n = dim(rng, 1, 5);
                     return max_gradient_error([](const auto& in, Tape* t) { return ops::matmul(in[0], in[1], t); },
                                               {uniform_tensor({m, k}, rng, -1, 1), uniform_tensor({k, n}, rng, -1, 1)},
                                               rng);
                   }});
  cases.push_back({"conv2d", [=](RngStream& rng) {
                     const std::size_t n = dim(rng, 1, 2), c = dim(rng, 1, 2), f = dim(rng, 1, 2);
                     const std::size_t kk = dim(rng, 1, 3), stride = dim(rng, 1, 2), pad = rng.next_below(2);
                     const std::size_t hgt = dim(rng, kk, 4), wid = dim(rng, kk, 4);
                     return max_gradient_error(
                         [=](const auto& in, Tape* t) { return ops::conv2d(in[0], in[1], stride, pad, t); },
                         {uniform_tensor({n, c, hgt, wid}, rng, -1, 1), uniform_tensor({f, c, kk, kk}, rng, -1, 1)}, rng);
                   }});
  cases.push_back({"relu", [=](RngStream& rng) {
                     const std::size_t n = dim(rng, 1, 4), m = dim(rng, 1, 8);
                     return max_gradient_error([](const auto& in, Tape* t) { return ops::relu(in[0], t); },
                                               {away_from_zero({n, m}, rng, 0.01, 1.0)}, rng);
                   }});
  cases.push_back({"max_pool2d", [=](RngStream& rng) {
                     const std::size_t window = dim(rng, 1, 2), stride = dim(rng, 1, 2);
                     const std::size_t n = dim(rng, 1, 2), c = dim(rng, 1, 2);
                     const std::size_t hgt = dim(rng, window, 4), wid = dim(rng, window, 4);
                     return max_gradient_error(
                         [=](const auto& in, Tape* t) { return ops::max_pool2d(in[0], window, stride, t); },
                         {distinct_tensor({n, c, hgt, wid}, rng, 0.01)}, rng);
                   }});
  cases.push_back({"softmax_cross_entropy", [=](RngStream& rng) {
                     const std::size_t n = dim(rng, 1, 6), k = dim(rng, 2, 8);
                     std::vector<int> labels(n);
                     for (auto& l : labels) l = static_cast<int>(rng.next_below(k));
                     return max_gradient_error(
                         [labels](const auto& in, Tape* t) { return ops::softmax_cross_entropy(in[0], labels, t); },
                         {uniform_tensor({n, k}, rng, -3, 3)}, rng);
                   }});
  cases.push_back({"add_bias", [=](RngStream& rng) {
                     const std::size_t n = dim(rng, 1, 5), m = dim(rng, 1, 8);
                     return max_gradient_error([](const auto& in, Tape* t) { return ops::add_bias(in[0], in[1], t); },
                                               {uniform_tensor({n, m}, rng, -1, 1), uniform_tensor({m}, rng, -1, 1)},
                                               rng);
                   }});
  cases.push_back({"add_channel_bias", [=](RngStream& rng) {
                     const std::size_t n = dim(rng, 1, 2), c = dim(rng, 1, 3), s = dim(rng, 1, 3);
                     return max_gradient_error(
                         [](const auto& in, Tape* t) { return ops::add_channel_bias(in[0], in[1], t); },
                         {uniform_tensor({n, c, s, s}, rng, -1, 1), uniform_tensor({c}, rng, -1, 1)}, rng);
                   }});
  cases.push_back({"add", [=](RngStream& rng) {
                     const Shape s{dim(rng, 1, 4), dim(rng, 1, 6)};
                     return max_gradient_error([](const auto& in, Tape* t) { return ops::add(in[0], in[1], t); },
                                               {uniform_tensor(s, rng, -1, 1), uniform_tensor(s, rng, -1, 1)}, rng);
                   }});
  cases.push_back({"mul", [=](RngStream& rng) {
                     const Shape s{dim(rng, 1, 4), dim(rng, 1, 6)};
                     return max_gradient_error([](const auto& in, Tape* t) { return ops::mul(in[0], in[1], t); },
                                               {uniform_tensor(s, rng, -1, 1), uniform_tensor(s, rng, -1, 1)}, rng);
                   }});
  cases.push_back({"scale", [=](RngStream& rng) {
                     const Shape s{dim(rng, 1, 4), dim(rng, 1, 6)};
                     const float f = static_cast<float>(4.0 * rng.next_uniform() - 2.0);
                     return max_gradient_error([f](const auto& in, Tape* t) { return ops::scale(in[0], f, t); },
                                               {uniform_tensor(s, rng, -1, 1)}, rng);
                   }});
  cases.push_back({"sum", [=](RngStream& rng) {
                     const Shape s{dim(rng, 1, 4), dim(rng, 1, 6)};
                     return max_gradient_error([](const auto& in, Tape* t) { return ops::sum(in[0], t); },
                                               {uniform_tensor(s, rng, -1, 1)}, rng);
                   }});
  cases.push_back({"reshape", [=](RngStream& rng) {
                     const std::size_t a = dim(rng, 1, 4), b = dim(rng, 1, 4), c = dim(rng, 1, 4);
                     return max_gradient_error([=](const auto& in, Tape* t) { return ops::reshape(in[0], {a, b * c}, t); },
                                               {uniform_tensor({a, b, c}, rng, -1, 1)}, rng);
                   }});
  return cases;
}

}  // namespace nftest
