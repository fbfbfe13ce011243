#include "stmrgnn/baselines.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "stmrgnn/csv.hpp"
#include "stmrgnn/errors.hpp"

namespace stmrgnn {

namespace {

constexpr std::int64_t kDay = 86400;

}  // namespace

HAModel HAModel::fit(const DemandPanel& panel, std::size_t train_end) {
  if (train_end == 0 || train_end > panel.steps()) throw ContractError("historical average: empty training range");
  HAModel m;
  m.nodes_ = panel.nodes();
  m.interval_ = panel.interval_seconds();
  if (m.interval_ <= 0 || kDay % m.interval_ != 0) {
    throw ContractError("historical average: interval must divide a day");
  }
  m.slots_ = static_cast<std::size_t>(kDay / m.interval_);
  const std::size_t buckets = m.slots_ * 2;
  const std::size_t cells = m.nodes_ * kChannels;
  std::vector<double> sum(cells * buckets, 0.0);
  std::vector<std::size_t> count(cells * buckets, 0);
  m.global_.assign(cells, 0.0);
  for (std::size_t t = 0; t < train_end; ++t) {
    const std::size_t b = m.bucket(panel.timestamps[t]);
    for (std::size_t i = 0; i < m.nodes_; ++i) {
      for (std::size_t c = 0; c < kChannels; ++c) {
        const double v = panel.at(t, i, c);
        sum[(i * kChannels + c) * buckets + b] += v;
        ++count[(i * kChannels + c) * buckets + b];
        m.global_[i * kChannels + c] += v;
      }
    }
  }
  for (double& g : m.global_) g /= static_cast<double>(train_end);
  m.mean_.assign(cells * buckets, 0.0);
  m.filled_.assign(cells * buckets, false);
  for (std::size_t k = 0; k < sum.size(); ++k) {
    if (count[k] > 0) {
      m.mean_[k] = sum[k] / static_cast<double>(count[k]);
      m.filled_[k] = true;
    } else {
      ++m.empty_buckets_;
    }
  }
  return m;
}

std::size_t HAModel::bucket(std::int64_t timestamp) const {
  std::int64_t sec = timestamp % kDay;
  if (sec < 0) sec += kDay;
  const auto slot = static_cast<std::size_t>(sec / interval_);
  const bool weekend = csv::weekday(timestamp) >= 5;
  return slot * 2 + (weekend ? 1 : 0);
}

double HAModel::predict(std::size_t node, std::size_t channel, std::int64_t timestamp) const {
  const std::size_t k = (node * kChannels + channel) * slots_ * 2 + bucket(timestamp);
  if (filled_[k]) return mean_[k];
  ++fallbacks_;
  return global_[node * kChannels + channel];
}

// ---------------------------------------------------------------------------

LRModel LRModel::fit(const DemandPanel& panel, std::size_t train_end, std::size_t T) {
  if (T == 0) throw ContractError("linear regression: window must be positive");
  if (train_end > panel.steps()) throw ContractError("linear regression: training range exceeds panel");
  LRModel m;
  m.nodes_ = panel.nodes();
  m.T_ = T;
  m.coef_.assign(m.nodes_ * kChannels, std::vector<double>(T + 1, 0.0));
  m.ok_.assign(m.nodes_ * kChannels, false);
  const std::size_t samples = train_end > T ? train_end - T : 0;
  const auto Ti = static_cast<Eigen::Index>(T);
  for (std::size_t i = 0; i < m.nodes_; ++i) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      auto& coef = m.coef_[i * kChannels + c];
      if (samples < T + 2) {
        ++m.fallbacks_;
        continue;
      }
      Eigen::MatrixXd X(static_cast<Eigen::Index>(samples), Ti);
      Eigen::VectorXd y(static_cast<Eigen::Index>(samples));
      for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t tau = 0; tau < T; ++tau) {
          X(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(tau)) = panel.at(s + tau, i, c);
        }
        y(static_cast<Eigen::Index>(s)) = panel.at(s + T, i, c);
      }
      // Centering removes the intercept column; the jitter picks the
      // minimum-norm solution for collinear or constant lags.
      const Eigen::RowVectorXd x_mean = X.colwise().mean();
      const double y_mean = y.mean();
      X.rowwise() -= x_mean;
      y.array() -= y_mean;
      Eigen::MatrixXd gram = X.transpose() * X;
      gram.diagonal().array() += kJitter;
      Eigen::LDLT<Eigen::MatrixXd> solver(gram);
      Eigen::VectorXd beta = solver.solve(X.transpose() * y);
      if (solver.info() != Eigen::Success || !beta.allFinite()) {
        ++m.fallbacks_;
        continue;
      }
      for (std::size_t tau = 0; tau < T; ++tau) coef[tau] = beta(static_cast<Eigen::Index>(tau));
      coef[T] = y_mean - x_mean.dot(beta);
      m.ok_[i * kChannels + c] = true;
    }
  }
  return m;
}

const std::vector<double>& LRModel::coefficients(std::size_t node, std::size_t channel) const {
  return coef_.at(node * kChannels + channel);
}

double LRModel::predict(std::size_t node, std::size_t channel, const double* window) const {
  const auto& coef = coefficients(node, channel);
  double v = coef[T_];
  for (std::size_t tau = 0; tau < T_; ++tau) v += coef[tau] * window[tau];
  return v;
}

// ---------------------------------------------------------------------------

namespace {

PredictionSet empty_set(const std::vector<DemandPanel>& panels, const WindowSet& windows) {
  PredictionSet set;
  for (const auto& p : panels) set.mode_ids.push_back(p.mode_id);
  set.node_counts = windows.node_counts;
  set.target_steps = windows.target_steps;
  set.targets = windows.targets;
  set.predictions.resize(panels.size());
  return set;
}

}  // namespace

BaselineOutcome ha_fit_predict(const std::vector<DemandPanel>& panels, const SplitSpec::Bounds& bounds,
                               std::size_t T) {
  const WindowSet test = make_windows(panels, bounds.val_end, bounds.steps, T);
  if (test.empty()) throw ContractError("historical average: no test windows");
  BaselineOutcome out;
  out.predictions = empty_set(panels, test);
  for (std::size_t m = 0; m < panels.size(); ++m) {
    const DemandPanel& p = panels[m];
    const HAModel ha = HAModel::fit(p, bounds.train_end);
    auto& pred = out.predictions.predictions[m];
    for (std::size_t s = 0; s < test.size(); ++s) {
      const std::int64_t ts = p.timestamps[test.target_steps[s]];
      for (std::size_t i = 0; i < p.nodes(); ++i) {
        for (std::size_t c = 0; c < kChannels; ++c) pred.push_back(ha.predict(i, c, ts));
      }
    }
    out.fallbacks += ha.fallbacks();
  }
  return out;
}

BaselineOutcome lr_fit_predict(const std::vector<DemandPanel>& panels, const SplitSpec::Bounds& bounds,
                               std::size_t T) {
  const WindowSet test = make_windows(panels, bounds.val_end, bounds.steps, T);
  if (test.empty()) throw ContractError("linear regression: no test windows");
  BaselineOutcome out;
  out.predictions = empty_set(panels, test);
  for (std::size_t m = 0; m < panels.size(); ++m) {
    const DemandPanel& p = panels[m];
    const LRModel lr = LRModel::fit(p, bounds.train_end, T);
    const HAModel ha = HAModel::fit(p, bounds.train_end);
    const std::size_t n = p.nodes();
    auto& pred = out.predictions.predictions[m];
    for (std::size_t s = 0; s < test.size(); ++s) {
      const std::int64_t ts = p.timestamps[test.target_steps[s]];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < kChannels; ++c) {
          const double* window = &test.inputs[m][((s * n + i) * kChannels + c) * T];
          pred.push_back(lr.fitted(i, c) ? lr.predict(i, c, window) : ha.predict(i, c, ts));
        }
      }
    }
    out.fallbacks += lr.fallbacks();
  }
  return out;
}

}  // namespace stmrgnn
