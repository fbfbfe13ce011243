#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stmrgnn {

inline constexpr std::size_t kChannels = 2;
enum Channel : std::size_t { kInflow = 0, kOutflow = 1 };

struct GeoPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;
};

// Nodes of one mode. The order of `node_ids` is the row/column order of every
// matrix that refers to this mode.
struct NodeSet {
  int mode_id = 0;
  std::vector<std::string> node_ids;
  std::vector<GeoPoint> coordinates;

  std::size_t size() const { return node_ids.size(); }
  // Position of `id`, or size() when absent.
  std::size_t index_of(const std::string& id) const;
};

// Demand of one mode on a uniform time grid: values[t][node][channel].
struct DemandPanel {
  int mode_id = 0;
  std::vector<std::string> node_ids;
  std::vector<std::int64_t> timestamps;  // interval starts, seconds since epoch (UTC)
  std::vector<double> values;

  std::size_t steps() const { return timestamps.size(); }
  std::size_t nodes() const { return node_ids.size(); }
  std::int64_t interval_seconds() const { return timestamps.size() > 1 ? timestamps[1] - timestamps[0] : 0; }

  double& at(std::size_t t, std::size_t node, std::size_t channel) {
    return values[(t * nodes() + node) * kChannels + channel];
  }
  double at(std::size_t t, std::size_t node, std::size_t channel) const {
    return values[(t * nodes() + node) * kChannels + channel];
  }

  // Steps [begin, end).
  DemandPanel slice(std::size_t begin, std::size_t end) const;
  static DemandPanel zeros(int mode_id, std::vector<std::string> node_ids, std::vector<std::int64_t> timestamps);
};

// Checks ids, counts and ordering of a panel against its node set.
void validate_panel(const DemandPanel& panel, const NodeSet& nodes);

}  // namespace stmrgnn
