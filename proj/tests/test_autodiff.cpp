#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "noisyforge/error.hpp"
#include "noisyforge/ops.hpp"
#include "support/gradcheck.hpp"

using namespace noisyforge;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor leaf(Shape shape, std::vector<float> v) {
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("tensor construction") {
  Tensor t({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_FALSE(t.has_grad());
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor c = t.clone();
  c.mutable_data()[0] = 7.0f;
  CHECK(t.data()[0] == 1.5f);
  CHECK_FALSE(c.same_storage(t));
}

TEST_CASE("matmul values and shape errors") {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor b({2, 2}, {1, 2, 3, 4});
  CHECK(values(ops::matmul(eye, b)) == values(b));
  CHECK(values(ops::matmul(Tensor({2, 2}), b)) == std::vector<float>{0, 0, 0, 0});
  CHECK(values(ops::matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 2}, {5, 6, 7, 8}))) ==
        std::vector<float>{19, 22, 43, 50});
  try {
    ops::matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("conv2d matches a direct convolution") {
  RngStream rng(17, {Purpose::kTest});
  for (std::size_t stride = 1; stride <= 3; ++stride)
    for (std::size_t pad = 0; pad <= 2; ++pad) {
      const std::size_t n = 2, c = 2, f = 3, kk = 3, h = 7, w = 6;
      const Tensor x = nftest::uniform_tensor({n, c, h, w}, rng, -1, 1);
      const Tensor k = nftest::uniform_tensor({f, c, kk, kk}, rng, -1, 1);
      const Tensor y = ops::conv2d(x, k, stride, pad);
      const std::size_t oh = y.dim(2), ow = y.dim(3);
      CHECK(oh == (h + 2 * pad - kk) / stride + 1);
      double worst = 0.0;
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < f; ++o)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              double want = 0.0;
              for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t a = 0; a < kk; ++a)
                  for (std::size_t b = 0; b < kk; ++b) {
                    const long iy = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                    const long ix = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                    if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                    want += static_cast<double>(x.data()[((s * c + ch) * h + iy) * w + ix]) *
                            k.data()[((o * c + ch) * kk + a) * kk + b];
                  }
              worst = std::max(worst, std::abs(want - y.data()[((s * f + o) * oh + i) * ow + j]));
            }
      CAPTURE(stride);
      CAPTURE(pad);
      CHECK(worst <= 1e-6);
    }
}

TEST_CASE("conv2d values") {
  const Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(values(ops::conv2d(x, Tensor({1, 1, 1, 1}, 1.0f), 1, 0)) == values(x));
  CHECK(values(ops::conv2d(Tensor({1, 1, 3, 3}), Tensor({1, 1, 2, 2}, 1.0f), 1, 0)) == std::vector<float>(4, 0.0f));
  const Tensor y = ops::conv2d(Tensor({1, 1, 3, 3}, 1.0f), Tensor({1, 1, 2, 2}, 1.0f), 1, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(values(y) == std::vector<float>(4, 4.0f));
  // Padding 1 with a 3x3 kernel keeps the size; stride 2 halves it (floor).
  CHECK(ops::conv2d(Tensor({1, 1, 5, 5}), Tensor({2, 1, 3, 3}), 1, 1).shape() == Shape{1, 2, 5, 5});
  CHECK(ops::conv2d(Tensor({1, 1, 5, 5}), Tensor({2, 1, 3, 3}), 2, 0).shape() == Shape{1, 2, 2, 2});
  CHECK_THROWS_AS(ops::conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), 1, 0), DimensionError);
  CHECK_THROWS_AS(ops::conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 1, 3, 3}), 1, 0), DimensionError);
}

TEST_CASE("relu forward and subgradient") {
  CHECK(values(ops::relu(Tensor({3}, {-1, 0, 2}))) == std::vector<float>{0, 0, 2});
  CHECK(values(ops::relu(Tensor({2}, {0.5f, 3}))) == std::vector<float>{0.5f, 3});
  Tape tape;
  Tensor x = leaf({2}, {-1, 2});
  tape.backward(ops::sum(ops::relu(x, &tape), &tape));
  CHECK(values(Tensor({2}, {x.grad()[0], x.grad()[1]})) == std::vector<float>{0, 1});
  Tape tape0;
  Tensor z = leaf({1}, {0});
  tape0.backward(ops::sum(ops::relu(z, &tape0), &tape0));
  CHECK(z.grad()[0] == 0.0f);
}

TEST_CASE("max_pool2d values and tie routing") {
  CHECK(values(ops::max_pool2d(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2)) == std::vector<float>{4});
  CHECK(values(ops::max_pool2d(Tensor({1, 1, 4, 4}, 2.5f), 2, 2)) == std::vector<float>(4, 2.5f));
  const Tensor x({1, 1, 2, 3}, {1, -2, 3, 4, 5, -6});
  CHECK(values(ops::max_pool2d(x, 1, 1)) == values(x));
  CHECK_THROWS_AS(ops::max_pool2d(Tensor({1, 1, 2, 2}), 3, 1), DimensionError);

  Tape tape;
  Tensor t = leaf({1, 1, 2, 2}, {5, 5, 5, 5});
  tape.backward(ops::sum(ops::max_pool2d(t, 2, 2, &tape), &tape));
  CHECK(values(Tensor({4}, {t.grad()[0], t.grad()[1], t.grad()[2], t.grad()[3]})) == std::vector<float>{1, 0, 0, 0});
}

TEST_CASE("softmax cross entropy") {
  const std::vector<int> zeros(4, 0);
  CHECK(ops::softmax_cross_entropy(Tensor({4, 10}, 0.3f), zeros).item() == doctest::Approx(std::log(10.0)).epsilon(1e-6));
  const std::vector<int> l0{0};
  const float big = ops::softmax_cross_entropy(Tensor({1, 2}, {1000, 0}), l0).item();
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(0.0).epsilon(1e-6));
  const std::vector<int> l1{1};
  CHECK(ops::softmax_cross_entropy(Tensor({1, 2}, {1, 2}), l1).item() ==
        doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-6));
  const std::vector<int> bad{2};
  CHECK_THROWS_AS(ops::softmax_cross_entropy(Tensor({1, 2}), bad), InputError);
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(ops::softmax_cross_entropy(Tensor({1, 2}), negative), InputError);

  // Gradient = (softmax - onehot) / N.
  Tape tape;
  Tensor z = leaf({2, 2}, {0, 0, 1, 2});
  const std::vector<int> labels{0, 1};
  tape.backward(ops::softmax_cross_entropy(z, labels, &tape));
  const double p = 1.0 / (1.0 + std::exp(1.0));
  CHECK(z.grad()[0] == doctest::Approx((0.5 - 1.0) / 2));
  CHECK(z.grad()[1] == doctest::Approx(0.5 / 2));
  CHECK(z.grad()[2] == doctest::Approx(p / 2));
  CHECK(z.grad()[3] == doctest::Approx((1.0 - p - 1.0) / 2));
}

TEST_CASE("backward closed forms") {
  Tape tape;
  Tensor x = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  tape.backward(ops::sum(x, &tape));
  for (float g : x.grad()) CHECK(g == 1.0f);

  Tape sq;
  Tensor y = leaf({2}, {1, -2});
  Tensor unused = leaf({2}, {3, 4});
  sq.backward(ops::sum(ops::mul(y, y, &sq), &sq));
  CHECK(y.grad()[0] == 2.0f);
  CHECK(y.grad()[1] == -4.0f);
  CHECK_FALSE(unused.has_grad());
  for (float g : unused.grad_buffer()) CHECK(g == 0.0f);
}

TEST_CASE("backward usage errors") {
  Tape tape;
  Tensor x = leaf({2}, {1, 2});
  const Tensor y = ops::scale(x, 2.0f, &tape);
  CHECK_THROWS_AS(tape.backward(y), UsageError);
  Tape other;
  const Tensor s = ops::sum(x, &other);
  CHECK_THROWS_AS(tape.backward(s), UsageError);
}

TEST_CASE("fan-out accumulates and backward is linear") {
  // loss = a*f + b*g with f = sum(x*x), g = sum(3x); compare against the
  // separate gradients.
  const std::vector<float> v{0.5f, -1.25f, 2.0f};
  auto grad_of = [&](auto build) {
    Tape tape;
    Tensor x = leaf({3}, v);
    tape.backward(build(x, tape));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto gf = grad_of([](Tensor& x, Tape& t) { return ops::sum(ops::mul(x, x, &t), &t); });
  const auto gg = grad_of([](Tensor& x, Tape& t) { return ops::sum(ops::scale(x, 3.0f, &t), &t); });
  const auto gc = grad_of([](Tensor& x, Tape& t) {
    const Tensor f = ops::sum(ops::mul(x, x, &t), &t);
    const Tensor g = ops::sum(ops::scale(x, 3.0f, &t), &t);
    return ops::add(ops::scale(f, 0.5f, &t), ops::scale(g, -2.0f, &t), &t);
  });
  for (std::size_t i = 0; i < 3; ++i) CHECK(gc[i] == doctest::Approx(0.5 * gf[i] - 2.0 * gg[i]).epsilon(1e-12));
}

TEST_CASE("backward visits nodes in reverse construction order") {
  Tape tape;
  Tensor x = leaf({2}, {1, 2});
  const Tensor a = ops::scale(x, 2.0f, &tape);
  const Tensor b = ops::relu(a, &tape);
  const Tensor loss = ops::sum(b, &tape);
  REQUIRE(tape.size() == 3);
  CHECK(tape.node(0).op == "scale");
  CHECK(tape.node(2).op == "sum");
  tape.backward(loss);
  CHECK(x.grad()[1] == 2.0f);
}

TEST_CASE("ops are deterministic") {
  RngStream rng(11, {Purpose::kTest, 1});
  const Tensor x = nftest::uniform_tensor({2, 3, 6, 6}, rng, -1, 1);
  const Tensor k = nftest::uniform_tensor({4, 3, 3, 3}, rng, -1, 1);
  CHECK(values(ops::conv2d(x, k, 1, 1)) == values(ops::conv2d(x, k, 1, 1)));
}

TEST_CASE("non-finite outputs are rejected") {
  const float inf = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(ops::add(Tensor({1}, {inf}), Tensor({1}, {1})), InputError);
}

TEST_CASE("finite-difference gradients for every op") {
  for (const auto& c : nftest::op_gradient_cases()) {
    CAPTURE(c.name);
    RngStream rng(2024, {Purpose::kTest, 2});
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      RngStream instance = rng.with_sample(static_cast<std::uint64_t>(i)).with_layer(c.name.size());
      worst = std::max(worst, c.run(instance));
    }
    CHECK(worst <= 1e-3);
  }
}
