#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stmrgnn/graph.hpp"
#include "stmrgnn/panel.hpp"
#include "stmrgnn/random.hpp"
#include "stmrgnn/tensor.hpp"

namespace test {

using namespace stmrgnn;

inline Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(shape, std::move(v), requires_grad);
}

// Nodes scattered in a small box around midtown Manhattan.
inline NodeSet random_nodes(Rng& rng, int mode_id, std::size_t n, double spread_deg = 0.03) {
  NodeSet s;
  s.mode_id = mode_id;
  for (std::size_t i = 0; i < n; ++i) {
    s.node_ids.push_back("m" + std::to_string(mode_id) + "n" + std::to_string(i));
    s.coordinates.push_back({40.75 + rng.uniform(-spread_deg, spread_deg), -73.98 + rng.uniform(-spread_deg, spread_deg)});
  }
  return s;
}

inline DemandPanel random_panel(Rng& rng, const NodeSet& nodes, std::size_t steps, std::int64_t interval = 3600) {
  std::vector<std::int64_t> ts;
  for (std::size_t t = 0; t < steps; ++t) ts.push_back(1519862400 + static_cast<std::int64_t>(t) * interval);
  DemandPanel p = DemandPanel::zeros(nodes.mode_id, nodes.node_ids, ts);
  for (double& v : p.values) v = rng.uniform(0.0, 10.0);
  return p;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::current_path() / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test
