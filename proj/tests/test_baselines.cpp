#include <doctest.h>

#include <Eigen/Dense>
#include <functional>

#include "helpers.hpp"
#include "stmrgnn/baselines.hpp"
#include "stmrgnn/errors.hpp"

using namespace stmrgnn;

namespace {

constexpr std::int64_t kStart = 1519862400;  // Thursday 2018-03-01

// One node, both channels from f(t, channel).
DemandPanel series_panel(std::size_t steps, std::int64_t interval, const std::function<double(std::size_t, std::size_t)>& f,
                         int mode_id = 1) {
  std::vector<std::int64_t> ts;
  for (std::size_t t = 0; t < steps; ++t) ts.push_back(kStart + static_cast<std::int64_t>(t) * interval);
  DemandPanel p = DemandPanel::zeros(mode_id, {"n0"}, ts);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t c = 0; c < kChannels; ++c) p.at(t, 0, c) = f(t, c);
  return p;
}

}  // namespace

TEST_CASE("historical average") {
  SUBCASE("slot mean") {
    // 12 h steps: Thursday and Friday slot 0 hold 10 and 20.
    std::vector<double> v{10, 1, 20, 3};
    auto p = series_panel(4, 43200, [&](std::size_t t, std::size_t) { return v[t]; });
    auto ha = HAModel::fit(p, 4);
    CHECK(ha.slots_per_day() == 2);
    CHECK(ha.predict(0, 0, kStart + 7 * 86400) == 15.0);
    CHECK(ha.predict(0, 1, kStart + 7 * 86400 + 43200) == 2.0);
    CHECK(ha.fallbacks() == 0);
  }
  SUBCASE("constant panel") {
    auto p = series_panel(24 * 21, 3600, [](std::size_t, std::size_t c) { return c == 0 ? 7.5 : 2.0; });
    auto bounds = SplitSpec{}.bounds(p.steps());
    auto out = ha_fit_predict({p}, bounds, 6);
    auto m = evaluate_metrics(out.predictions);
    CHECK(m[0].overall.rmse == 0.0);
    CHECK(out.fallbacks == 0);
  }
  SUBCASE("empty bucket") {
    // Training covers Thursday only; a Saturday target has no weekend bucket.
    auto p = series_panel(24 * 4, 3600, [](std::size_t t, std::size_t) { return static_cast<double>(t % 5); });
    auto ha = HAModel::fit(p, 24);
    CHECK(ha.empty_buckets() == 24 * kChannels);
    double global = 0.0;
    for (std::size_t t = 0; t < 24; ++t) global += static_cast<double>(t % 5);
    global /= 24.0;
    CHECK(ha.predict(0, 0, kStart + 2 * 86400 + 5 * 3600) == doctest::Approx(global).epsilon(1e-15));
    CHECK(ha.fallbacks() >= 1);
    auto out = ha_fit_predict({p}, SplitSpec::Bounds{24, 48, p.steps()}, 6);
    CHECK(out.fallbacks == (48 - 6) * kChannels);
  }
}

TEST_CASE("linear regression") {
  SUBCASE("exact AR(1)") {
    auto p = series_panel(40, 3600, [](std::size_t t, std::size_t c) { return (c == 0 ? 1000.0 : 300.0) * std::pow(0.5, t); });
    auto lr = LRModel::fit(p, 40, 1);
    for (std::size_t c = 0; c < kChannels; ++c) {
      REQUIRE(lr.fitted(0, c));
      const auto& w = lr.coefficients(0, c);
      REQUIRE(w.size() == 2);
      CHECK(std::abs(w[0] - 0.5) < 1e-6);
      CHECK(std::abs(w[1]) < 1e-6);
    }
  }
  SUBCASE("noisy AR(1) with six lags matches an independent least-squares fit") {
    Rng rng(3);
    std::vector<double> x(2000);
    x[0] = 10.0;
    for (std::size_t t = 1; t < x.size(); ++t) x[t] = 10.0 + 0.5 * (x[t - 1] - 10.0) + rng.normal(0.0, 1.0);
    auto p = series_panel(x.size(), 3600, [&](std::size_t t, std::size_t) { return x[t]; });
    const std::size_t T = 6, train_end = 1200;
    auto lr = LRModel::fit(p, train_end, T);
    const auto& w = lr.coefficients(0, 0);
    REQUIRE(w.size() == T + 1);

    Eigen::MatrixXd X(train_end - T, T + 1);
    Eigen::VectorXd y(train_end - T);
    for (std::size_t s = 0; s + T < train_end; ++s) {
      for (std::size_t tau = 0; tau < T; ++tau) X(s, tau) = x[s + tau];
      X(s, T) = 1.0;
      y(s) = x[s + T];
    }
    Eigen::VectorXd oracle = X.colPivHouseholderQr().solve(y);
    for (std::size_t k = 0; k <= T; ++k) CHECK(w[k] == doctest::Approx(oracle(k)).epsilon(1e-7));
    CHECK(std::abs(w[T - 1] - 0.5) < 0.06);
    for (std::size_t k = 0; k + 1 < T; ++k) CHECK(std::abs(w[k]) < 0.06);
  }
  SUBCASE("constant series") {
    auto p = series_panel(100, 3600, [](std::size_t, std::size_t c) { return c == 0 ? 4.0 : 9.0; });
    auto lr = LRModel::fit(p, 100, 6);
    for (std::size_t c = 0; c < kChannels; ++c) {
      const auto& w = lr.coefficients(0, c);
      REQUIRE(w.size() == 7);
      for (std::size_t k = 0; k < 6; ++k) CHECK(w[k] == 0.0);
      CHECK(w[6] == (c == 0 ? 4.0 : 9.0));
    }
  }
  SUBCASE("white noise has no skill") {
    Rng rng(11);
    std::vector<double> noise(2000 * kChannels);
    for (double& v : noise) v = 50.0 + rng.normal(0.0, 5.0);
    auto p = series_panel(2000, 3600, [&](std::size_t t, std::size_t c) { return noise[t * kChannels + c]; });
    auto out = lr_fit_predict({p}, SplitSpec{}.bounds(2000), 6);
    auto m = evaluate_metrics(out.predictions);
    REQUIRE(m[0].overall.r2.has_value());
    CHECK(*m[0].overall.r2 <= 0.1);
    CHECK(out.fallbacks == 0);
  }
  SUBCASE("too little training data falls back to the historical average") {
    auto p = series_panel(24 * 8, 3600, [](std::size_t t, std::size_t) { return static_cast<double>(t % 24); });
    auto lr = LRModel::fit(p, 7, 6);
    CHECK_FALSE(lr.fitted(0, 0));
    CHECK(lr.fallbacks() == kChannels);
  }
}

TEST_CASE("baselines are deterministic and score the model's test windows") {
  Rng rng(5);
  std::vector<NodeSet> sets{test::random_nodes(rng, 1, 4), test::random_nodes(rng, 2, 3)};
  std::vector<DemandPanel> panels{test::random_panel(rng, sets[0], 24 * 14), test::random_panel(rng, sets[1], 24 * 14)};
  auto bounds = SplitSpec{}.bounds(panels[0].steps());
  for (auto fit : {&ha_fit_predict, &lr_fit_predict}) {
    auto a = fit(panels, bounds, 6), b = fit(panels, bounds, 6);
    auto windows = make_windows(panels, bounds.val_end, bounds.steps, 6);
    CHECK(a.predictions.target_steps == windows.target_steps);
    for (std::size_t m = 0; m < 2; ++m) {
      CHECK(a.predictions.predictions[m] == b.predictions.predictions[m]);
      CHECK(a.predictions.targets[m] == windows.targets[m]);
      CHECK(a.predictions.predictions[m].size() == windows.size() * panels[m].nodes() * kChannels);
    }
  }
}
