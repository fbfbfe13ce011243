#pragma once

#include <filesystem>
#include <vector>

#include "stmrgnn/panel.hpp"

namespace stmrgnn {

// Header `mode_id,node_id,lat,lon`. Node sets are returned in ascending
// mode_id order; within a mode, file order is the canonical node order.
std::vector<NodeSet> load_nodes_csv(const std::filesystem::path& path);

struct DemandLoadResult {
  std::vector<DemandPanel> panels;  // parallel to the node sets
  std::size_t missing_cells = 0;    // (node, timestamp) pairs absent from the file, zero-filled
};

// Header `mode_id,node_id,timestamp,inflow,outflow`. The time grid is shared by
// all modes and must be uniform from the first to the last timestamp.
DemandLoadResult load_demand_csv(const std::filesystem::path& path, const std::vector<NodeSet>& node_sets);

void write_nodes_csv(const std::filesystem::path& path, const std::vector<NodeSet>& node_sets);
void write_demand_csv(const std::filesystem::path& path, const std::vector<DemandPanel>& panels);

}  // namespace stmrgnn
