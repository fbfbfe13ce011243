#pragma once

// Historical average and per-node linear regression baselines. Both emit a
// PredictionSet over the same test windows the network is scored on.

#include <cstdint>
#include <vector>

#include "stmrgnn/metrics.hpp"
#include "stmrgnn/panel.hpp"
#include "stmrgnn/training.hpp"

namespace stmrgnn {

// Mean per (node, channel, time-of-day slot, weekday/weekend) over the training steps.
class HAModel {
 public:
  static HAModel fit(const DemandPanel& panel, std::size_t train_end);

  // Bucket mean for the interval starting at `timestamp`, or the node's global
  // training mean (counted in fallbacks()) when the bucket saw no data.
  double predict(std::size_t node, std::size_t channel, std::int64_t timestamp) const;

  std::size_t slots_per_day() const { return slots_; }
  std::size_t empty_buckets() const { return empty_buckets_; }
  std::size_t fallbacks() const { return fallbacks_; }

 private:
  std::size_t bucket(std::int64_t timestamp) const;

  std::size_t nodes_ = 0;
  std::size_t slots_ = 0;
  std::int64_t interval_ = 0;
  std::vector<double> mean_;  // [node][channel][bucket]
  std::vector<bool> filled_;
  std::vector<double> global_;  // [node][channel]
  std::size_t empty_buckets_ = 0;
  mutable std::size_t fallbacks_ = 0;
};

// Per (node, channel) OLS on the T previous values of the same series.
class LRModel {
 public:
  static constexpr double kJitter = 1e-8;

  static LRModel fit(const DemandPanel& panel, std::size_t train_end, std::size_t T);

  // coefficients[0..T-1] weight the window from oldest to newest, [T] is the intercept.
  const std::vector<double>& coefficients(std::size_t node, std::size_t channel) const;
  // False when the fit fell back to the historical average.
  bool fitted(std::size_t node, std::size_t channel) const { return ok_.at(node * kChannels + channel); }
  std::size_t fallbacks() const { return fallbacks_; }
  std::size_t window() const { return T_; }

  // Prediction from a window of T values (oldest first).
  double predict(std::size_t node, std::size_t channel, const double* window) const;

 private:
  std::size_t nodes_ = 0;
  std::size_t T_ = 0;
  std::vector<std::vector<double>> coef_;
  std::vector<bool> ok_;
  std::size_t fallbacks_ = 0;
};

struct BaselineOutcome {
  PredictionSet predictions;
  std::size_t fallbacks = 0;  // HA: empty-bucket predictions; LR: series that fell back to HA
};

// Predictions for every window of steps [bounds.val_end, bounds.steps) in original units.
BaselineOutcome ha_fit_predict(const std::vector<DemandPanel>& panels, const SplitSpec::Bounds& bounds, std::size_t T);
BaselineOutcome lr_fit_predict(const std::vector<DemandPanel>& panels, const SplitSpec::Bounds& bounds, std::size_t T);

}  // namespace stmrgnn
