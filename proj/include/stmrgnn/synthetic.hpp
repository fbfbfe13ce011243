#pragma once

// Coupled bimodal demand generator for desk-scale experiments.
//
// Mode 1 ("stations") and mode 2 ("zones") each get per-node levels, daily and
// weekly sinusoids with node-specific phases, regional AR(1) shock factors
// (a node sees its factor with a delay of 0 or 1 steps), and white noise.
// Mode-2 demand is then mixed with weight `coupling_strength` with the lagged
// average demand of the mode-1 stations within `coupling_radius_m`, rescaled to
// the zone's level. Values are clipped at zero.

#include <cstdint>
#include <vector>

#include "stmrgnn/panel.hpp"

namespace stmrgnn {

struct SyntheticModeSpec {
  std::size_t nodes = 20;
  double extent_m = 4000.0;  // side of the square study area
  double level_min = 20.0;
  double level_max = 80.0;
  std::size_t factors = 3;  // regional shock factors
};

struct SyntheticSpec {
  SyntheticModeSpec station{20, 4000.0, 20.0, 80.0, 3};
  SyntheticModeSpec zone{10, 4000.0, 10.0, 40.0, 2};
  std::size_t steps = 2000;
  std::int64_t interval_seconds = 4 * 3600;
  std::int64_t start_time = 1519862400;  // 2018-03-01T00:00:00Z
  GeoPoint center{40.758, -73.9855};
  // Amplitudes relative to each node's level.
  double daily_amplitude = 0.4;
  double weekly_amplitude = 0.15;
  double shock_amplitude = 0.25;
  double shock_autocorrelation = 0.7;
  double noise_std = 0.04;
  // Mode-1 -> mode-2 coupling.
  double coupling_strength = 0.8;
  std::size_t coupling_lag = 1;
  double coupling_radius_m = 1200.0;
  std::uint64_t seed = 7;

  void validate(std::size_t window = 6) const;
};

// For each zone, the stations whose lagged demand enters it.
struct CouplingRecord {
  double strength = 0.0;
  std::size_t lag = 0;
  std::vector<std::vector<std::size_t>> zone_sources;
};

struct SyntheticData {
  std::vector<NodeSet> node_sets;  // mode ids 1 and 2
  std::vector<DemandPanel> panels;
  CouplingRecord coupling;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace stmrgnn
