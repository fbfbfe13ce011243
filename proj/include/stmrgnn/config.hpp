#pragma once

// Sectioned key=value run configuration:
//
//   [paths]  nodes, demand, out
//   [model]  blocks, kernel, c_in_t, c_out_t, c_in_s, c_out_s, c_hidden, window, dropout
//   [train]  epochs, batch_size, learning_rate, weight_decay, loss_weights, patience, loss_norm
//   [split]  train, val, test
//   [graph]  kappa_m, sigma_m (number or "auto"), kinds, inter_modal
//   [run]    seed, variant
//   [synth]  generator settings, used when no node/demand paths are given
//   [ablate] repetitions, variants
//   [export] topq, node, block, raw
//
// Unknown sections or keys are errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stmrgnn/graph.hpp"
#include "stmrgnn/model.hpp"
#include "stmrgnn/synthetic.hpp"
#include "stmrgnn/training.hpp"

namespace stmrgnn {

struct PathsConfig {
  std::filesystem::path nodes;
  std::filesystem::path demand;
  std::filesystem::path out = "out";
};

struct GraphConfig {
  GeoParams geo;
  std::vector<Dependency> kinds = {Dependency::geo, Dependency::functional};
  bool inter_modal = true;
};

struct AblateConfig {
  std::size_t repetitions = 3;
  std::vector<Variant> variants = all_variants();
};

struct ExportConfig {
  std::size_t topq = 3;
  std::string node;       // empty: no neighbor query
  std::size_t block = 0;  // 1-based, 0: last block
  bool raw = false;
};

struct RunConfig {
  PathsConfig paths;
  ModelConfig model;  // node_counts are filled in from the data
  TrainConfig train;
  SplitSpec split;
  GraphConfig graph;
  Variant variant = Variant::full;
  std::uint64_t seed = 1;
  SyntheticSpec synth;
  AblateConfig ablate;
  ExportConfig export_options;

  bool use_synthetic() const { return paths.nodes.empty() && paths.demand.empty(); }
  // Throws ConfigError on the first invalid setting.
  void validate() const;
  // Resolved configuration in the same file format.
  std::string to_ini() const;
};

RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

}  // namespace stmrgnn
