#include <doctest.h>

#include <cmath>

#include "noisyforge/error.hpp"
#include "noisyforge/eval.hpp"
#include "support/oracles.hpp"

using namespace noisyforge;

namespace {

RobustnessCurve make_curve(std::vector<double> sigmas, std::vector<double> acc) {
  RobustnessCurve c;
  c.sigmas = std::move(sigmas);
  c.mean_accuracy = std::move(acc);
  c.std_accuracy.assign(c.sigmas.size(), 0.0);
  c.repeats = 1;
  return c;
}

UpperBoundCurve as_upper(const RobustnessCurve& c) { return {c, std::vector<std::string>(c.size(), "fixture")}; }

TrainConfig blob_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.seed = 5;
  cfg.log_clean_accuracy = false;
  return cfg;
}

}  // namespace

TEST_CASE("sigma grids") {
  const auto g = default_sigma_grid();
  REQUIRE(g.size() == 30);
  CHECK(g.front() == 0.1);
  CHECK(g[2] == 0.3);
  CHECK(g.back() == 3.0);
  CHECK(sigma_grid(0.1, 3.0, 1.45) == std::vector<double>{0.1, 1.55, 3.0});
  CHECK(sigma_grid(0.5, 0.5, 0.1) == std::vector<double>{0.5});
  CHECK_THROWS_AS(sigma_grid(0.1, 3.0, 0.0), UsageError);
  CHECK_THROWS_AS(sigma_grid(1.0, 0.5, 0.1), UsageError);
  CHECK(default_upper_bound_sigmas() == std::vector<double>{0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0});
}

TEST_CASE("trapezoid AUC") {
  CHECK(auc_trapezoid(make_curve(default_sigma_grid(), std::vector<double>(30, 0.5))) ==
        doctest::Approx(1.45).epsilon(1e-14));
  CHECK(auc_trapezoid(make_curve({0.0, 0.5, 1.0}, {1.0, 0.5, 0.0})) == 0.5);
  CHECK(auc_trapezoid(make_curve(default_sigma_grid(), std::vector<double>(30, 0.0))) == 0.0);
  // Piecewise linear with breakpoints on the grid: closed-form area.
  CHECK(auc_trapezoid(make_curve({0.0, 1.0, 3.0, 4.0}, {0.2, 1.0, 0.0, 0.5})) == 0.6 + 1.0 + 0.25);
  CHECK_THROWS_AS(auc_trapezoid(make_curve({1.0}, {0.5})), UsageError);
}

TEST_CASE("relative AUC") {
  const auto g = default_sigma_grid();
  std::vector<double> up(30), half(30);
  for (std::size_t i = 0; i < 30; ++i) up[i] = 1.0 - g[i] / 4.0, half[i] = up[i] / 2.0;
  const auto upper = as_upper(make_curve(g, up));
  CHECK(compute_rauc(upper.curve, upper) == 100.0);
  CHECK(compute_rauc(make_curve(g, half), upper) == doctest::Approx(50.0).epsilon(1e-14));
  CHECK_THROWS_AS(compute_rauc(make_curve({0.1, 0.2}, {1, 1}), upper), UsageError);
  CHECK_THROWS_AS(compute_rauc(make_curve(g, half), as_upper(make_curve(g, std::vector<double>(30, 0.0)))), InputError);
}

TEST_CASE("interpolated accuracy and preserved accuracy") {
  const auto a = make_curve({0.5, 1.0, 1.5}, {0.9, 0.7, 0.4});
  CHECK(accuracy_at(a, 1.0) == 0.7);
  CHECK(accuracy_at(a, 1.25) == doctest::Approx(0.55).epsilon(1e-14));
  CHECK_THROWS_AS(accuracy_at(a, 0.2), UsageError);
  CHECK(preserved_accuracy(a, a, 1.0) == 0.0);
  const auto b = make_curve({0.5, 1.0, 1.5}, {0.8, 0.72, 0.3});
  CHECK(preserved_accuracy(b, a, 1.0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS_AS(preserved_accuracy(b, a, 2.0), UsageError);
}

TEST_CASE("curve validation") {
  auto c = make_curve({0.2, 0.1}, {0.5, 0.5});
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = make_curve({0.1, 0.2}, {0.5, 1.5});
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("noisy evaluation") {
  const auto [train_data, test_data] = synthetic_blobs(3, 60, 6, 8.0, 1);
  const ModelGraph model = train(build_preset("mlp2", {6}, 3, 2), train_data, blob_config(10)).model;
  const double clean = evaluate_clean(model, test_data);

  SUBCASE("sigma zero is the clean accuracy") {
    const auto s = evaluate_at_sigma(model, test_data, 0.0, 4, 9);
    CHECK(s.mean == clean);
    CHECK(s.stddev == 0.0);
  }
  SUBCASE("results do not depend on batching or workers") {
    const auto a = evaluate_at_sigma(model, test_data, 1.3, 4, 9, {500, 1});
    const auto b = evaluate_at_sigma(model, test_data, 1.3, 4, 9, {7, 3});
    CHECK(a.mean == b.mean);
    CHECK(a.stddev == b.stddev);
    CHECK(a.stddev > 0.0);
    const auto c = evaluate_at_sigma(model, test_data, 1.3, 4, 10);
    CHECK(c.mean != a.mean);
    const auto s1 = noise_sweep(model, test_data, {0.5, 1.0}, 3, 2, {500, 1});
    const auto s2 = noise_sweep(model, test_data, {0.5, 1.0}, 3, 2, {11, 4});
    CHECK(s1.mean_accuracy == s2.mean_accuracy);
    CHECK(s1.std_accuracy == s2.std_accuracy);
  }
  SUBCASE("errors") {
    Dataset empty = test_data;
    empty.labels.clear();
    CHECK_THROWS_AS(evaluate_at_sigma(model, empty, 1.0, 2, 1), UsageError);
    CHECK_THROWS_AS(evaluate_at_sigma(model, test_data, 1.0, 0, 1), UsageError);
    CHECK_THROWS_AS(noise_sweep(model, test_data, {}, 2, 1), UsageError);
  }
  SUBCASE("single-point sweep") {
    const auto c = noise_sweep(model, test_data, {0.7}, 2, 1);
    CHECK(c.size() == 1);
    CHECK(c.clean_accuracy == clean);
  }
}

TEST_CASE("huge noise gives chance accuracy") {
  const auto [train_data, test_data] = synthetic_blobs(10, 100, 4, 6.0, 3);
  const ModelGraph model = build_preset("mlp2", {4}, 10, 1);
  const std::size_t repeats = 5;
  const auto s = evaluate_at_sigma(model, test_data, 100.0, repeats, 4);
  const double band = 3.0 * std::sqrt(0.1 * 0.9 / (test_data.size() * repeats));
  CHECK(std::abs(s.mean - 0.1) <= band);
}

TEST_CASE("constant predictor gives a flat curve") {
  // Zero output weights and a bias favouring class 0; noise only after the
  // hidden ReLU, which the zero weights block.
  ModelGraph m({3}, {DenseLayer{3, 4, Tensor({3, 4}, 0.3f), Tensor({4})}, ReluLayer{},
                     DenseLayer{4, 2, Tensor({4, 2}), Tensor({2}, {2.0f, 0.0f})}},
               2, {1});
  Dataset d;
  d.images = Tensor({4, 3}, 1.0f);
  d.labels = {0, 1, 0, 0};
  d.num_classes = 2;
  const auto c = noise_sweep(m, d, {0.5, 1.0, 2.0}, 3, 1);
  for (double a : c.mean_accuracy) CHECK(a == 0.75);
  for (double s : c.std_accuracy) CHECK(s == 0.0);
}

TEST_CASE("clean-trained model degrades monotonically") {
  const auto [train_data, test_data] = synthetic_blobs(4, 150, 8, 5.0, 6);
  const ModelGraph model = train(build_preset("mlp2", {8}, 4, 3), train_data, blob_config(15)).model;
  const auto curve = noise_sweep(model, test_data, default_sigma_grid(), 5, 2);
  const auto fit = nftest::isotonic_decreasing(curve.mean_accuracy);
  double worst = 0.0;
  for (std::size_t i = 0; i < fit.size(); ++i) worst = std::max(worst, std::abs(fit[i] - curve.mean_accuracy[i]));
  CHECK(worst <= 0.02);
  CHECK(curve.mean_accuracy.back() < curve.mean_accuracy.front());
}

TEST_CASE("upper bound construction") {
  const auto [train_data, test_data] = synthetic_blobs(3, 80, 6, 4.0, 2);
  const ModelGraph init = build_preset("mlp2", {6}, 3, 4);
  const ModelFactory factory = [&] { return init.clone(); };
  const TrainConfig cfg = blob_config(8);

  SUBCASE("one trained sigma gives one measured point") {
    UpperBoundPlan plan{{1.0}, {1.0}, 3, 11};
    std::vector<ModelGraph> trained;
    const auto upper = build_upper_bound(factory, train_data, test_data, plan, cfg, {},
                                         [&](double, const ModelGraph& m, const TrainLog&) { trained.push_back(m); });
    REQUIRE(upper.curve.size() == 1);
    REQUIRE(trained.size() == 1);
    CHECK(upper.curve.mean_accuracy[0] == evaluate_at_sigma(trained[0], test_data, 1.0, 3, 11).mean);
    CHECK(upper.provenance[0] == "nt_sigma_1");
  }
  SUBCASE("midpoints are the mean of their neighbours") {
    UpperBoundPlan plan{{0.5, 1.5}, {0.5, 1.0, 1.5}, 3, 11};
    const auto upper = build_upper_bound(factory, train_data, test_data, plan, cfg);
    CHECK(upper.curve.mean_accuracy[1] ==
          doctest::Approx((upper.curve.mean_accuracy[0] + upper.curve.mean_accuracy[2]) / 2).epsilon(1e-14));
    CHECK(upper.provenance[1] == "interp(nt_sigma_0.5,nt_sigma_1.5)");
  }
  SUBCASE("points outside the trained range use the nearest model") {
    UpperBoundPlan plan{{1.0}, {0.5, 1.0, 2.0}, 3, 11};
    std::vector<ModelGraph> trained;
    const auto upper = build_upper_bound(factory, train_data, test_data, plan, cfg, {},
                                         [&](double, const ModelGraph& m, const TrainLog&) { trained.push_back(m); });
    CHECK(upper.curve.mean_accuracy[2] == evaluate_at_sigma(trained[0], test_data, 2.0, 3, 11).mean);
  }
  SUBCASE("upper bound dominates each single noisy-training model at its trained sigmas") {
    const auto [big_train, big_test] = synthetic_blobs(3, 400, 6, 4.0, 2);
    UpperBoundPlan plan{{0.5, 1.0, 2.0}, {0.5, 1.0, 2.0}, 5, 11};
    std::vector<ModelGraph> trained;
    const auto upper = build_upper_bound(factory, big_train, big_test, plan, blob_config(15), {},
                                         [&](double, const ModelGraph& m, const TrainLog&) { trained.push_back(m); });
    // Slack: 3 standard errors of a difference of two accuracies over
    // N * repeats noisy predictions each.
    const double slack = 3.0 * std::sqrt(2 * 0.25 / (big_test.size() * 5.0));
    for (const auto& m : trained) {
      const auto c = noise_sweep(m, big_test, plan.eval_sigmas, 5, 11);
      for (std::size_t i = 0; i < 3; ++i) {
        CAPTURE(i);
        CHECK(upper.curve.mean_accuracy[i] >= c.mean_accuracy[i] - slack);
      }
    }
  }
  SUBCASE("a failed training names its sigma") {
    TrainConfig bad = cfg;
    bad.lr0 = 1e38;
    UpperBoundPlan plan{{0.5, 1.0}, {0.5, 1.0}, 2, 1};
    try {
      build_upper_bound(factory, train_data, test_data, plan, bad);
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("sigma 0.5") != std::string::npos);
    }
  }
}
