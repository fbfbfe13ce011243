#include "stmrgnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "stmrgnn/csv.hpp"
#include "stmrgnn/errors.hpp"

namespace stmrgnn {

MetricValues compute_metrics(std::span<const double> targets, std::span<const double> predictions) {
  if (targets.size() != predictions.size()) throw ContractError("metrics: target/prediction length mismatch");
  if (targets.empty()) throw ContractError("metrics: no values");
  const auto n = static_cast<double>(targets.size());
  double abs_sum = 0.0, sq_sum = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double e = predictions[i] - targets[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    mean += targets[i];
  }
  mean /= n;
  double ss_tot = 0.0;
  for (double y : targets) ss_tot += (y - mean) * (y - mean);
  MetricValues m;
  m.count = targets.size();
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  if (ss_tot > 0.0) m.r2 = 1.0 - sq_sum / ss_tot;
  return m;
}

PredictionSet predict_windows(const STMRGNN& model, const WindowSet& windows, const Normalizer& normalizer,
                              std::size_t batch_size) {
  if (windows.empty()) throw ContractError("predict_windows: no windows");
  NoGradGuard guard;
  PredictionSet set;
  set.mode_ids = model.relations().mode_ids;
  set.node_counts = windows.node_counts;
  set.target_steps = windows.target_steps;
  const std::size_t k = windows.node_counts.size();
  set.targets.resize(k);
  set.predictions.resize(k);
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t r = start; r < std::min(windows.size(), start + batch_size); ++r) rows.push_back(r);
    const auto out = model.forward(windows.batch_inputs(rows), false);
    for (std::size_t m = 0; m < k; ++m) {
      const auto d = out[m].data();
      set.predictions[m].insert(set.predictions[m].end(), d.begin(), d.end());
    }
  }
  for (std::size_t m = 0; m < k; ++m) {
    set.targets[m] = windows.targets[m];
    for (std::size_t i = 0; i < set.targets[m].size(); ++i) {
      set.targets[m][i] = normalizer.inverse(set.targets[m][i], m, i % kChannels);
      set.predictions[m][i] = normalizer.inverse(set.predictions[m][i], m, i % kChannels);
    }
  }
  return set;
}

std::string_view to_string(Stratum s) {
  switch (s) {
    case Stratum::demand_intensive: return "DI";
    case Stratum::middle: return "middle";
    case Stratum::demand_sparse: return "DS";
  }
  return "?";
}

Stratification stratify_di_ds(const DemandPanel& train_panel) {
  const std::size_t n = train_panel.nodes();
  Stratification s;
  s.groups.assign(n, Stratum::middle);
  if (n < 3) {
    s.warning = true;
    return s;
  }
  std::vector<double> mean(n, 0.0);
  for (std::size_t t = 0; t < train_panel.steps(); ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < kChannels; ++c) mean[i] += train_panel.at(t, i, c);
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });
  const std::size_t third = n / 3;
  for (std::size_t r = 0; r < third; ++r) {
    s.groups[order[r]] = Stratum::demand_intensive;
    s.groups[order[n - 1 - r]] = Stratum::demand_sparse;
  }
  return s;
}

std::vector<ModeMetrics> evaluate_metrics(const PredictionSet& set, const std::vector<Stratification>& strata) {
  const std::size_t k = set.node_counts.size();
  if (set.targets.size() != k || set.predictions.size() != k) throw ContractError("evaluate_metrics: ragged input");
  if (!strata.empty() && strata.size() != k) throw ContractError("evaluate_metrics: one stratification per mode");
  std::vector<ModeMetrics> out;
  for (std::size_t m = 0; m < k; ++m) {
    const auto& y = set.targets[m];
    const auto& p = set.predictions[m];
    const std::size_t nodes = set.node_counts[m];
    ModeMetrics mm;
    mm.mode_id = m < set.mode_ids.size() ? set.mode_ids[m] : static_cast<int>(m + 1);
    mm.overall = compute_metrics(y, p);

    auto subset = [&](auto keep) {
      std::vector<double> ys, ps;
      for (std::size_t i = 0; i < y.size(); ++i) {
        const std::size_t c = i % kChannels;
        const std::size_t node = (i / kChannels) % nodes;
        if (keep(node, c)) {
          ys.push_back(y[i]);
          ps.push_back(p[i]);
        }
      }
      return compute_metrics(ys, ps);
    };
    for (std::size_t c = 0; c < kChannels; ++c) mm.per_channel[c] = subset([c](std::size_t, std::size_t cc) { return cc == c; });
    for (std::size_t node = 0; node < nodes; ++node) {
      mm.per_node.push_back(subset([node](std::size_t nn, std::size_t) { return nn == node; }));
    }
    if (!strata.empty()) {
      if (strata[m].groups.size() != nodes) throw ContractError("evaluate_metrics: stratification size mismatch");
      for (Stratum g : {Stratum::demand_intensive, Stratum::middle, Stratum::demand_sparse}) {
        const bool present = std::find(strata[m].groups.begin(), strata[m].groups.end(), g) != strata[m].groups.end();
        if (!present) continue;
        mm.per_stratum.emplace_back(g, subset([&](std::size_t nn, std::size_t) { return strata[m].groups[nn] == g; }));
      }
    }
    out.push_back(std::move(mm));
  }
  return out;
}

namespace {

std::string r2_text(const std::optional<double>& r2) { return r2 ? csv::format_double(*r2) : ""; }

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::string& label,
                       const std::vector<ModeMetrics>& metrics) {
  auto out = csv::open_output(path);
  out << "model,mode_id,group,rmse,mae,r2,count\n";
  auto row = [&](int mode, std::string_view group, const MetricValues& v) {
    out << label << ',' << mode << ',' << group << ',' << csv::format_double(v.rmse) << ','
        << csv::format_double(v.mae) << ',' << r2_text(v.r2) << ',' << v.count << '\n';
  };
  for (const auto& m : metrics) {
    row(m.mode_id, "all", m.overall);
    row(m.mode_id, "inflow", m.per_channel[kInflow]);
    row(m.mode_id, "outflow", m.per_channel[kOutflow]);
    for (const auto& [g, v] : m.per_stratum) row(m.mode_id, to_string(g), v);
  }
}

void write_per_node_csv(const std::filesystem::path& path, const std::vector<ModeMetrics>& metrics,
                        const std::vector<NodeSet>& node_sets) {
  auto out = csv::open_output(path);
  out << "mode_id,node_id,rmse,mae,r2\n";
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    for (std::size_t i = 0; i < metrics[m].per_node.size(); ++i) {
      const auto& v = metrics[m].per_node[i];
      out << metrics[m].mode_id << ',' << node_sets.at(m).node_ids.at(i) << ',' << csv::format_double(v.rmse) << ','
          << csv::format_double(v.mae) << ',' << r2_text(v.r2) << '\n';
    }
  }
}

std::string format_metrics_table(const std::string& label, const std::vector<ModeMetrics>& metrics) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-16s %-6s %-8s %12s %12s %8s\n", "model", "mode", "group", "RMSE", "MAE", "R2");
  os << buf;
  auto row = [&](int mode, std::string_view group, const MetricValues& v) {
    char r2[32] = "n/a";
    if (v.r2) std::snprintf(r2, sizeof(r2), "%.4f", *v.r2);
    std::snprintf(buf, sizeof(buf), "%-16s %-6d %-8s %12.4f %12.4f %8s\n", label.c_str(), mode,
                  std::string(group).c_str(), v.rmse, v.mae, r2);
    os << buf;
  };
  for (const auto& m : metrics) {
    row(m.mode_id, "all", m.overall);
    for (const auto& [g, v] : m.per_stratum) row(m.mode_id, to_string(g), v);
  }
  return os.str();
}

}  // namespace stmrgnn
