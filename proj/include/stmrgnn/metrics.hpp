#pragma once

// RMSE / MAE / R^2 in original demand units, with per-channel, per-node and
// demand-intensive / demand-sparse breakdowns.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stmrgnn/panel.hpp"
#include "stmrgnn/training.hpp"

namespace stmrgnn {

struct MetricValues {
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> r2;  // missing when the targets have zero variance
  std::size_t count = 0;
};

MetricValues compute_metrics(std::span<const double> targets, std::span<const double> predictions);

// Predictions and targets of one window set in original units:
// values[m] is [count x N_m x 2] row-major.
struct PredictionSet {
  std::vector<int> mode_ids;
  std::vector<std::size_t> node_counts;
  std::vector<std::size_t> target_steps;
  std::vector<std::vector<double>> targets;
  std::vector<std::vector<double>> predictions;
};

// Runs the model over `windows` (normalized) and maps both sides back to original units.
PredictionSet predict_windows(const STMRGNN& model, const WindowSet& windows, const Normalizer& normalizer,
                              std::size_t batch_size = 64);

enum class Stratum { demand_intensive = 0, middle = 1, demand_sparse = 2 };
std::string_view to_string(Stratum s);

struct Stratification {
  std::vector<Stratum> groups;  // per node
  bool warning = false;         // fewer than 3 nodes: everything is middle
};

// Ranks nodes by mean demand (both channels) of `train_panel`; top third DI,
// bottom third DS, ties broken by node order.
Stratification stratify_di_ds(const DemandPanel& train_panel);

struct ModeMetrics {
  int mode_id = 0;
  MetricValues overall;
  std::array<MetricValues, kChannels> per_channel;
  std::vector<MetricValues> per_node;
  // Filled only when strata are supplied.
  std::vector<std::pair<Stratum, MetricValues>> per_stratum;
};

// `strata`, when non-empty, holds one Stratification per mode.
std::vector<ModeMetrics> evaluate_metrics(const PredictionSet& set, const std::vector<Stratification>& strata = {});

void write_metrics_csv(const std::filesystem::path& path, const std::string& label,
                       const std::vector<ModeMetrics>& metrics);
void write_per_node_csv(const std::filesystem::path& path, const std::vector<ModeMetrics>& metrics,
                        const std::vector<NodeSet>& node_sets);
// Plain text table, one row per mode (and stratum).
std::string format_metrics_table(const std::string& label, const std::vector<ModeMetrics>& metrics);

}  // namespace stmrgnn
