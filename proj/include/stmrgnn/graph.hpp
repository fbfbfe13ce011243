#pragma once

// Intra- and inter-modal relation graphs: geographical proximity and
// functional similarity adjacencies, row normalization, and the stacked
// per-direction tensors consumed by the graph convolution.

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "stmrgnn/panel.hpp"
#include "stmrgnn/tensor.hpp"

namespace stmrgnn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Dependency { geo, functional };

std::string_view to_string(Dependency kind);
Dependency parse_dependency(std::string_view name);

// Great-circle distance in meters.
double haversine_m(const GeoPoint& a, const GeoPoint& b);

struct GeoParams {
  double kappa_m = 1500.0;
  // Unset: standard deviation of the pairwise distances of the graph.
  std::optional<double> sigma_m;
};

// One relation between the nodes of mode `row_mode` (rows) and `col_mode`
// (columns); row_mode == col_mode for intra-modal graphs. Mode fields are
// positions in the mode list, not mode ids.
struct RelationGraph {
  std::size_t row_mode = 0;
  std::size_t col_mode = 0;
  Dependency kind = Dependency::geo;
  Matrix adjacency;
  Matrix normalized;            // row_normalize(adjacency)
  Matrix normalized_transpose;  // row_normalize(adjacency^T), inter-modal only

  bool intra() const { return row_mode == col_mode; }
};

RelationGraph build_geo_adjacency(const NodeSet& src, const NodeSet& dst, const GeoParams& params);

struct FunctionalAdjacency {
  RelationGraph graph;
  std::size_t zero_variance_nodes = 0;
};

// Pearson correlation of the (already normalized) series of every node pair,
// negative values clamped to zero. Each node's series is its inflow steps
// followed by its outflow steps. Intra-modal when both panels share a mode id.
FunctionalAdjacency build_functional_adjacency(const DemandPanel& src_series, const DemandPanel& dst_series);

// Divides each row by its sum; all-zero rows stay zero.
Matrix row_normalize(const Matrix& adjacency);

struct AssembleOptions {
  GeoParams geo;
  std::vector<Dependency> kinds = {Dependency::geo, Dependency::functional};
  bool inter_modal = true;
};

class RelationSet {
 public:
  std::vector<int> mode_ids;
  std::vector<std::size_t> node_counts;
  std::vector<Dependency> kinds;
  bool inter_modal = true;
  std::vector<RelationGraph> graphs;
  std::size_t zero_variance_nodes = 0;
  bool single_mode = false;

  std::size_t k() const { return mode_ids.size(); }
  std::size_t u() const { return kinds.size(); }

  // Source modes that feed `target`, in relation order.
  std::vector<std::size_t> sources(std::size_t target) const;
  // Relations per node of `target`: u * |sources(target)|.
  std::size_t relations_per_node(std::size_t target) const { return u() * sources(target).size(); }

  // Stacked normalized adjacency aggregating source-mode features into the
  // target mode: [u x N_target x N_source], slice r follows `kinds`.
  const Tensor& stacked(std::size_t target, std::size_t source) const;
  // Normalized matrix for one relation direction.
  Matrix normalized(std::size_t target, std::size_t source, Dependency kind) const;

  // Keeps a subset of dependency kinds and optionally drops inter-modal graphs.
  RelationSet restrict(const std::vector<Dependency>& keep_kinds, bool keep_inter) const;

  void build_stacks();

 private:
  const RelationGraph* find(std::size_t a, std::size_t b, Dependency kind) const;
  std::map<std::pair<std::size_t, std::size_t>, Tensor> stacks_;
};

// `training_series` are the per-mode panels restricted to the training range
// and normalized per mode; they only feed the functional similarity kind.
RelationSet assemble_relations(const std::vector<NodeSet>& node_sets, const std::vector<DemandPanel>& training_series,
                               const AssembleOptions& options);

// One CSV per relation graph: header row holds the column-mode node ids,
// first column the row-mode node ids. Returns the written paths.
std::vector<std::filesystem::path> write_relations_csv(const RelationSet& relations,
                                                      const std::vector<NodeSet>& node_sets,
                                                      const std::filesystem::path& dir);

}  // namespace stmrgnn
