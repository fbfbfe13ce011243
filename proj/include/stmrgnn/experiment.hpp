#pragma once

// End-to-end pipeline pieces shared by the CLI and the acceptance checks:
// data preparation (load or synthesize, split, normalize, window, graphs),
// training and scoring of one variant, baselines, and ablation sweeps.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stmrgnn/baselines.hpp"
#include "stmrgnn/config.hpp"
#include "stmrgnn/metrics.hpp"
#include "stmrgnn/synthetic.hpp"

namespace stmrgnn {

struct PreparedData {
  std::vector<NodeSet> node_sets;
  std::vector<DemandPanel> raw;         // original units
  std::vector<DemandPanel> normalized;  // min-max on the training split
  Normalizer normalizer;
  SplitSpec::Bounds bounds;
  WindowSet train, val, test;
  RelationSet relations;  // everything the config asks for; variants restrict it
  std::vector<Stratification> strata;
  std::size_t missing_cells = 0;
  std::optional<CouplingRecord> coupling;
  std::vector<std::string> warnings;
};

// `synth_seed` overrides [synth] seed for synthetic data.
PreparedData prepare_data(const RunConfig& config, std::optional<std::uint64_t> synth_seed = std::nullopt);

// Model config with the data's node counts and the chosen variant.
ModelConfig resolved_model_config(const RunConfig& config, const PreparedData& data, Variant variant);
STMRGNN make_model(const RunConfig& config, const PreparedData& data, Variant variant, std::uint64_t seed);

struct VariantRun {
  Variant variant = Variant::full;
  std::uint64_t seed = 0;
  TrainResult training;
  PredictionSet predictions;  // test windows, original units
  std::vector<ModeMetrics> metrics;
  std::unique_ptr<STMRGNN> model;
};

// Builds, trains (seeded by `seed`) and scores one variant on the test windows.
VariantRun run_variant(const RunConfig& config, const PreparedData& data, Variant variant, std::uint64_t seed,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

struct BaselineRuns {
  std::vector<ModeMetrics> ha;
  std::vector<ModeMetrics> lr;
  std::size_t ha_fallbacks = 0;
  std::size_t lr_fallbacks = 0;
};
BaselineRuns run_baselines(const RunConfig& config, const PreparedData& data);

struct AblationCell {
  Variant variant = Variant::full;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<ModeMetrics> metrics;
};

struct AblationResult {
  std::vector<int> mode_ids;
  std::vector<AblationCell> cells;
};

// Every variant in config.ablate.variants for each repetition r, with model
// seed config.seed + r and, for synthetic data, data seed synth.seed + r.
// A failing variant is recorded and the sweep continues.
AblationResult run_ablation(const RunConfig& config,
                            const std::function<void(const AblationCell&)>& on_cell = {});

// Long-format summary: variant, mode_id, metric, mean, std, n, failed.
void write_ablation_summary(const std::filesystem::path& path, const AblationResult& result,
                            const std::vector<Variant>& variants);
void write_ablation_runs(const std::filesystem::path& path, const AblationResult& result);

// Settings of the coupled synthetic benchmark used for the directional checks:
// 20 station nodes, 10 zone nodes, 2000 steps, lag 1, narrow channels so that
// dozens of trainings fit a desk-scale time budget.
RunConfig reference_benchmark(double coupling_strength, std::uint64_t seed);

}  // namespace stmrgnn
