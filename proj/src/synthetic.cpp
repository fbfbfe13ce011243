#include "stmrgnn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "stmrgnn/errors.hpp"
#include "stmrgnn/graph.hpp"
#include "stmrgnn/random.hpp"

namespace stmrgnn {

void SyntheticSpec::validate(std::size_t window) const {
  if (!(coupling_strength >= 0.0 && coupling_strength <= 1.0)) {
    throw ConfigError("synthetic: coupling strength must lie in [0, 1]");
  }
  if (steps <= window + 10) throw ConfigError("synthetic: length must exceed window + 10 steps");
  if (station.nodes == 0 || zone.nodes == 0) throw ConfigError("synthetic: node counts must be positive");
  if (station.factors == 0 || zone.factors == 0) throw ConfigError("synthetic: factor counts must be positive");
  if (interval_seconds <= 0 || 86400 % interval_seconds != 0) {
    throw ConfigError("synthetic: interval must divide a day");
  }
  if (!(noise_std >= 0.0) || !(shock_amplitude >= 0.0)) throw ConfigError("synthetic: negative noise scale");
  if (!(shock_autocorrelation > -1.0 && shock_autocorrelation < 1.0)) {
    throw ConfigError("synthetic: shock autocorrelation must lie in (-1, 1)");
  }
  if (coupling_lag >= steps) throw ConfigError("synthetic: coupling lag longer than the series");
}

namespace {

constexpr double kMetersPerDegLat = 111320.0;

GeoPoint offset(const GeoPoint& center, double east_m, double north_m) {
  const double lat = center.lat + north_m / kMetersPerDegLat;
  const double lon = center.lon + east_m / (kMetersPerDegLat * std::cos(center.lat * std::numbers::pi / 180.0));
  return {lat, lon};
}

struct ModeSignal {
  NodeSet nodes;
  std::vector<double> level;
  // Clean (pre-coupling, pre-clip) demand: [t][node][channel].
  std::vector<double> values;
};

ModeSignal simulate_mode(const SyntheticSpec& spec, const SyntheticModeSpec& mode, int mode_id,
                         const std::string& prefix, double phase_base, Rng& rng) {
  ModeSignal s;
  s.nodes.mode_id = mode_id;
  const double half = mode.extent_m / 2.0;
  for (std::size_t i = 0; i < mode.nodes; ++i) {
    s.nodes.node_ids.push_back(prefix + std::to_string(i + 1));
    s.nodes.coordinates.push_back(offset(spec.center, rng.uniform(-half, half), rng.uniform(-half, half)));
    s.level.push_back(rng.uniform(mode.level_min, mode.level_max));
  }
  std::vector<double> daily_phase(mode.nodes), weekly_phase(mode.nodes);
  std::vector<std::size_t> delay(mode.nodes);
  for (std::size_t i = 0; i < mode.nodes; ++i) {
    daily_phase[i] = phase_base + rng.uniform(-0.6, 0.6);
    weekly_phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    delay[i] = rng.uniform() < 0.5 ? 0 : 1;
  }

  // Regional factors: centers in the study area, Gaussian loadings.
  std::vector<GeoPoint> centers;
  for (std::size_t f = 0; f < mode.factors; ++f) {
    centers.push_back(offset(spec.center, rng.uniform(-half, half), rng.uniform(-half, half)));
  }
  const double length_scale = mode.extent_m / 2.5;
  std::vector<std::vector<double>> loading(mode.nodes, std::vector<double>(mode.factors));
  for (std::size_t i = 0; i < mode.nodes; ++i) {
    double total = 0.0;
    for (std::size_t f = 0; f < mode.factors; ++f) {
      const double d = haversine_m(s.nodes.coordinates[i], centers[f]) / length_scale;
      loading[i][f] = std::exp(-d * d);
      total += loading[i][f];
    }
    for (double& w : loading[i]) w /= total;
  }

  // Unit-variance AR(1) factors, with one extra leading step for delays.
  const std::size_t T = spec.steps;
  const double rho = spec.shock_autocorrelation;
  const double innovation = std::sqrt(1.0 - rho * rho);
  std::vector<std::vector<double>> factor(mode.factors, std::vector<double>(T + 1));
  for (auto& f : factor) {
    f[0] = rng.normal();
    for (std::size_t t = 1; t <= T; ++t) f[t] = rho * f[t - 1] + innovation * rng.normal();
  }

  const double steps_per_day = 86400.0 / static_cast<double>(spec.interval_seconds);
  const double two_pi = 2.0 * std::numbers::pi;
  s.values.assign(T * mode.nodes * kChannels, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double day_angle = two_pi * static_cast<double>(t) / steps_per_day;
    const double week_angle = two_pi * static_cast<double>(t) / (7.0 * steps_per_day);
    for (std::size_t i = 0; i < mode.nodes; ++i) {
      double shock = 0.0;
      for (std::size_t f = 0; f < mode.factors; ++f) shock += loading[i][f] * factor[f][t + 1 - delay[i]];
      for (std::size_t c = 0; c < kChannels; ++c) {
        // Outflow peaks a quarter day after inflow.
        const double seasonal = 1.0 +
                                spec.daily_amplitude * std::sin(day_angle + daily_phase[i] + 0.5 * std::numbers::pi * c) +
                                spec.weekly_amplitude * std::sin(week_angle + weekly_phase[i]);
        const double v =
            s.level[i] * (seasonal + spec.shock_amplitude * shock + spec.noise_std * rng.normal());
        s.values[(t * mode.nodes + i) * kChannels + c] = v;
      }
    }
  }
  return s;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  ModeSignal stations = simulate_mode(spec, spec.station, 1, "S", 0.0, rng);
  ModeSignal zones = simulate_mode(spec, spec.zone, 2, "Z", 1.1, rng);

  const std::size_t T = spec.steps;
  const std::size_t n1 = spec.station.nodes, n2 = spec.zone.nodes;
  auto clipped = [](double v) { return std::max(0.0, v); };

  SyntheticData data;
  data.coupling.strength = spec.coupling_strength;
  data.coupling.lag = spec.coupling_lag;
  for (std::size_t j = 0; j < n2; ++j) {
    std::vector<std::size_t> sources;
    std::size_t nearest = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
      const double d = haversine_m(zones.nodes.coordinates[j], stations.nodes.coordinates[i]);
      if (d <= spec.coupling_radius_m) sources.push_back(i);
      if (i == 0 || d < best) {
        best = d;
        nearest = i;
      }
    }
    if (sources.empty()) sources.push_back(nearest);
    data.coupling.zone_sources.push_back(std::move(sources));
  }

  std::vector<std::int64_t> stamps(T);
  for (std::size_t t = 0; t < T; ++t) stamps[t] = spec.start_time + static_cast<std::int64_t>(t) * spec.interval_seconds;

  DemandPanel p1 = DemandPanel::zeros(1, stations.nodes.node_ids, stamps);
  for (std::size_t k = 0; k < p1.values.size(); ++k) p1.values[k] = clipped(stations.values[k]);

  DemandPanel p2 = DemandPanel::zeros(2, zones.nodes.node_ids, stamps);
  const double kappa = spec.coupling_strength;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < n2; ++j) {
      const auto& src = data.coupling.zone_sources[j];
      double src_level = 0.0;
      for (std::size_t i : src) src_level += stations.level[i];
      src_level /= static_cast<double>(src.size());
      for (std::size_t c = 0; c < kChannels; ++c) {
        const double own = zones.values[(t * n2 + j) * kChannels + c];
        double coupled = own;
        if (kappa > 0.0 && t >= spec.coupling_lag) {
          double avg = 0.0;
          for (std::size_t i : src) avg += p1.at(t - spec.coupling_lag, i, c);
          avg /= static_cast<double>(src.size());
          coupled = zones.level[j] * avg / src_level;
        }
        p2.at(t, j, c) = clipped((1.0 - kappa) * own + kappa * coupled);
      }
    }
  }

  data.node_sets = {std::move(stations.nodes), std::move(zones.nodes)};
  data.panels = {std::move(p1), std::move(p2)};
  return data;
}

}  // namespace stmrgnn
