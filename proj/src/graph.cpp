#include "stmrgnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stmrgnn/csv.hpp"
#include "stmrgnn/errors.hpp"

namespace stmrgnn {

std::string_view to_string(Dependency kind) { return kind == Dependency::geo ? "geo" : "functional"; }

Dependency parse_dependency(std::string_view name) {
  if (name == "geo") return Dependency::geo;
  if (name == "functional") return Dependency::functional;
  throw ConfigError("unknown dependency kind '" + std::string(name) + "' (expected geo or functional)");
}

double haversine_m(const GeoPoint& a, const GeoPoint& b) {
  constexpr double kEarthRadiusM = 6371008.8;
  constexpr double kRad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * kRad;
  const double dlon = (b.lon - a.lon) * kRad;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * kRad) * std::cos(b.lat * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(s)));
}

RelationGraph build_geo_adjacency(const NodeSet& src, const NodeSet& dst, const GeoParams& params) {
  if (src.size() == 0 || dst.size() == 0) throw ContractError("build_geo_adjacency: empty node set");
  if (!(params.kappa_m > 0.0)) throw ContractError("build_geo_adjacency: kappa_d must be positive");
  const bool intra = src.mode_id == dst.mode_id;
  Matrix dist(src.size(), dst.size());
  for (std::size_t i = 0; i < src.size(); ++i)
    for (std::size_t j = 0; j < dst.size(); ++j) dist(i, j) = haversine_m(src.coordinates[i], dst.coordinates[j]);

  double sigma = 0.0;
  if (params.sigma_m) {
    sigma = *params.sigma_m;
  } else {
    // Population standard deviation over all node pairs.
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < dist.rows(); ++i)
      for (Eigen::Index j = 0; j < dist.cols(); ++j) {
        s += dist(i, j);
        s2 += dist(i, j) * dist(i, j);
        ++n;
      }
    if (n > 0) {
      const double mu = s / static_cast<double>(n);
      sigma = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - mu * mu));
    }
  }
  if (!(sigma > 0.0)) {
    throw DegenerateGeometryError("build_geo_adjacency: distance scale is zero (coincident nodes) between modes " +
                                  std::to_string(src.mode_id) + " and " + std::to_string(dst.mode_id));
  }

  RelationGraph g;
  g.kind = Dependency::geo;
  g.adjacency.resize(dist.rows(), dist.cols());
  for (Eigen::Index i = 0; i < dist.rows(); ++i)
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
      const double d = dist(i, j);
      g.adjacency(i, j) = d <= params.kappa_m ? std::exp(-(d / sigma) * (d / sigma)) : 0.0;
    }
  g.normalized = row_normalize(g.adjacency);
  if (!intra) g.normalized_transpose = row_normalize(g.adjacency.transpose());
  return g;
}

namespace {

struct Standardized {
  std::vector<std::vector<double>> centered;  // per node, mean removed
  std::vector<double> norm;                   // per node, sqrt of sum of squares
};

Standardized standardize(const DemandPanel& p) {
  Standardized s;
  const std::size_t len = p.steps() * kChannels;
  for (std::size_t i = 0; i < p.nodes(); ++i) {
    std::vector<double> series;
    series.reserve(len);
    for (std::size_t c = 0; c < kChannels; ++c)
      for (std::size_t t = 0; t < p.steps(); ++t) series.push_back(p.at(t, i, c));
    double mu = 0.0;
    for (double v : series) mu += v;
    mu /= static_cast<double>(len);
    double ss = 0.0;
    for (double& v : series) {
      v -= mu;
      ss += v * v;
    }
    // Treat numerically flat series as constant.
    const double scale = 1.0 + mu * mu;
    s.norm.push_back(ss <= 1e-24 * scale * static_cast<double>(len) ? 0.0 : std::sqrt(ss));
    s.centered.push_back(std::move(series));
  }
  return s;
}

}  // namespace

FunctionalAdjacency build_functional_adjacency(const DemandPanel& src_series, const DemandPanel& dst_series) {
  if (src_series.steps() != dst_series.steps() || src_series.timestamps != dst_series.timestamps) {
    throw ContractError("build_functional_adjacency: series must cover the same time range");
  }
  if (src_series.steps() < 2) throw ContractError("build_functional_adjacency: need at least 2 time steps");
  if (src_series.nodes() == 0 || dst_series.nodes() == 0) throw ContractError("build_functional_adjacency: no nodes");
  const bool intra = src_series.mode_id == dst_series.mode_id;
  const Standardized a = standardize(src_series);
  const Standardized b = intra ? a : standardize(dst_series);

  FunctionalAdjacency result;
  RelationGraph& g = result.graph;
  g.kind = Dependency::functional;
  g.adjacency = Matrix::Zero(src_series.nodes(), dst_series.nodes());
  for (std::size_t i = 0; i < src_series.nodes(); ++i) {
    for (std::size_t j = 0; j < dst_series.nodes(); ++j) {
      if (intra && i == j) {
        g.adjacency(i, j) = 1.0;
        continue;
      }
      if (a.norm[i] == 0.0 || b.norm[j] == 0.0) continue;
      double dot = 0.0;
      const auto& x = a.centered[i];
      const auto& y = b.centered[j];
      for (std::size_t t = 0; t < x.size(); ++t) dot += x[t] * y[t];
      const double r = std::clamp(dot / (a.norm[i] * b.norm[j]), -1.0, 1.0);
      g.adjacency(i, j) = std::max(0.0, r);
    }
  }
  for (double n : a.norm) result.zero_variance_nodes += n == 0.0;
  if (!intra) {
    for (double n : b.norm) result.zero_variance_nodes += n == 0.0;
  }
  g.normalized = row_normalize(g.adjacency);
  if (!intra) g.normalized_transpose = row_normalize(g.adjacency.transpose());
  return result;
}

Matrix row_normalize(const Matrix& adjacency) {
  Matrix out = adjacency;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double v = out(i, j);
      if (!(v >= 0.0)) {
        throw ContractError("row_normalize: negative or NaN entry at (" + std::to_string(i) + ", " +
                            std::to_string(j) + ")");
      }
      s += v;
    }
    if (s > 0.0) out.row(i) /= s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// RelationSet

std::vector<std::size_t> RelationSet::sources(std::size_t target) const {
  if (!inter_modal) return {target};
  std::vector<std::size_t> s(k());
  for (std::size_t n = 0; n < k(); ++n) s[n] = n;
  return s;
}

const RelationGraph* RelationSet::find(std::size_t a, std::size_t b, Dependency kind) const {
  for (const auto& g : graphs) {
    if (g.row_mode == a && g.col_mode == b && g.kind == kind) return &g;
  }
  return nullptr;
}

Matrix RelationSet::normalized(std::size_t target, std::size_t source, Dependency kind) const {
  if (target == source) {
    if (const auto* g = find(target, target, kind)) return g->normalized;
  } else if (target < source) {
    if (const auto* g = find(target, source, kind)) return g->normalized;
  } else {
    if (const auto* g = find(source, target, kind)) return g->normalized_transpose;
  }
  throw ContractError("relation set has no " + std::string(to_string(kind)) + " relation from mode index " +
                      std::to_string(source) + " to " + std::to_string(target));
}

void RelationSet::build_stacks() {
  stacks_.clear();
  for (std::size_t m = 0; m < k(); ++m) {
    for (std::size_t n : sources(m)) {
      const std::size_t rows = node_counts[m], cols = node_counts[n];
      std::vector<double> values;
      values.reserve(u() * rows * cols);
      for (Dependency kind : kinds) {
        const Matrix a = normalized(m, n, kind);
        values.insert(values.end(), a.data(), a.data() + a.size());
      }
      stacks_.emplace(std::make_pair(m, n), Tensor::from({u(), rows, cols}, std::move(values)));
    }
  }
}

const Tensor& RelationSet::stacked(std::size_t target, std::size_t source) const {
  const auto it = stacks_.find({target, source});
  if (it == stacks_.end()) {
    throw ContractError("no stacked adjacency from mode index " + std::to_string(source) + " to " +
                        std::to_string(target));
  }
  return it->second;
}

RelationSet RelationSet::restrict(const std::vector<Dependency>& keep_kinds, bool keep_inter) const {
  if (keep_kinds.empty()) throw ContractError("restrict: at least one dependency kind is required");
  RelationSet out;
  out.mode_ids = mode_ids;
  out.node_counts = node_counts;
  out.inter_modal = keep_inter && inter_modal;
  out.zero_variance_nodes = zero_variance_nodes;
  out.single_mode = single_mode;
  for (Dependency kind : keep_kinds) {
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
      throw ContractError("restrict: relation set has no " + std::string(to_string(kind)) + " relations");
    }
  }
  // Preserve this set's kind order.
  for (Dependency kind : kinds) {
    if (std::find(keep_kinds.begin(), keep_kinds.end(), kind) != keep_kinds.end()) out.kinds.push_back(kind);
  }
  for (const auto& g : graphs) {
    const bool kind_kept = std::find(out.kinds.begin(), out.kinds.end(), g.kind) != out.kinds.end();
    if (kind_kept && (g.intra() || out.inter_modal)) out.graphs.push_back(g);
  }
  out.build_stacks();
  return out;
}

RelationSet assemble_relations(const std::vector<NodeSet>& node_sets, const std::vector<DemandPanel>& training_series,
                               const AssembleOptions& options) {
  if (node_sets.empty()) throw ContractError("assemble_relations: no modes");
  if (options.kinds.empty()) throw ContractError("assemble_relations: no dependency kinds");
  const bool need_series =
      std::find(options.kinds.begin(), options.kinds.end(), Dependency::functional) != options.kinds.end();
  if (need_series && training_series.size() != node_sets.size()) {
    throw ContractError("assemble_relations: expected one demand panel per mode");
  }
  RelationSet set;
  set.kinds = options.kinds;
  set.single_mode = node_sets.size() < 2;
  set.inter_modal = options.inter_modal && !set.single_mode;
  for (std::size_t m = 0; m < node_sets.size(); ++m) {
    set.mode_ids.push_back(node_sets[m].mode_id);
    set.node_counts.push_back(node_sets[m].size());
    if (need_series) {
      const DemandPanel& p = training_series[m];
      if (p.mode_id != node_sets[m].mode_id || p.node_ids != node_sets[m].node_ids) {
        throw ContractError("assemble_relations: node ordering of mode " + std::to_string(node_sets[m].mode_id) +
                            " differs between node set and demand panel");
      }
    }
  }
  for (std::size_t m = 0; m < node_sets.size(); ++m) {
    for (std::size_t n = m; n < node_sets.size(); ++n) {
      if (n != m && !set.inter_modal) continue;
      for (Dependency kind : options.kinds) {
        RelationGraph g;
        if (kind == Dependency::geo) {
          g = build_geo_adjacency(node_sets[m], node_sets[n], options.geo);
        } else {
          auto f = build_functional_adjacency(training_series[m], training_series[n]);
          set.zero_variance_nodes += f.zero_variance_nodes;
          g = std::move(f.graph);
        }
        g.row_mode = m;
        g.col_mode = n;
        set.graphs.push_back(std::move(g));
      }
    }
  }
  set.build_stacks();
  return set;
}

std::vector<std::filesystem::path> write_relations_csv(const RelationSet& relations,
                                                      const std::vector<NodeSet>& node_sets,
                                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& g : relations.graphs) {
    const NodeSet& rows = node_sets.at(g.row_mode);
    const NodeSet& cols = node_sets.at(g.col_mode);
    const auto path = dir / (std::string(to_string(g.kind)) + "_" + std::to_string(rows.mode_id) + "_" +
                             std::to_string(cols.mode_id) + ".csv");
    auto out = csv::open_output(path);
    out << "node_id";
    for (const auto& id : cols.node_ids) out << ',' << id;
    out << '\n';
    for (Eigen::Index i = 0; i < g.adjacency.rows(); ++i) {
      out << rows.node_ids[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < g.adjacency.cols(); ++j) out << ',' << csv::format_double(g.adjacency(i, j));
      out << '\n';
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace stmrgnn
