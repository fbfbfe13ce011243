#include "stmrgnn/experiment.hpp"

#include <cmath>
#include <map>

#include "stmrgnn/csv.hpp"
#include "stmrgnn/data_io.hpp"
#include "stmrgnn/errors.hpp"

namespace stmrgnn {

PreparedData prepare_data(const RunConfig& config, std::optional<std::uint64_t> synth_seed) {
  PreparedData d;
  if (config.use_synthetic()) {
    SyntheticSpec spec = config.synth;
    if (synth_seed) spec.seed = *synth_seed;
    spec.validate(config.model.window);
    SyntheticData s = generate_synthetic(spec);
    d.node_sets = std::move(s.node_sets);
    d.raw = std::move(s.panels);
    d.coupling = std::move(s.coupling);
  } else {
    d.node_sets = load_nodes_csv(config.paths.nodes);
    DemandLoadResult loaded = load_demand_csv(config.paths.demand, d.node_sets);
    d.raw = std::move(loaded.panels);
    d.missing_cells = loaded.missing_cells;
    if (d.missing_cells > 0) {
      d.warnings.push_back(std::to_string(d.missing_cells) + " missing (node, timestamp) cells filled with 0");
    }
  }
  for (std::size_t m = 0; m < d.raw.size(); ++m) validate_panel(d.raw[m], d.node_sets[m]);

  const std::size_t steps = d.raw.front().steps();
  d.bounds = config.split.bounds(steps);
  const std::size_t T = config.model.window;
  if (d.bounds.train_end <= T || d.bounds.val_end - d.bounds.train_end <= T || steps - d.bounds.val_end <= T) {
    throw ConfigError("split of " + std::to_string(steps) + " steps leaves a split no longer than the window (" +
                      std::to_string(T) + "); every split needs at least one sample");
  }

  d.normalizer = Normalizer::fit(d.raw, d.bounds.train_end);
  if (const std::size_t n = d.normalizer.degenerate_channels()) {
    d.warnings.push_back(std::to_string(n) + " constant demand channel(s) on the training split mapped to 0");
  }
  std::vector<DemandPanel> train_series;
  for (std::size_t m = 0; m < d.raw.size(); ++m) {
    d.normalized.push_back(d.normalizer.transform(d.raw[m], m));
    train_series.push_back(d.normalized[m].slice(0, d.bounds.train_end));
  }

  AssembleOptions opts;
  opts.geo = config.graph.geo;
  opts.kinds = config.graph.kinds;
  opts.inter_modal = config.graph.inter_modal;
  d.relations = assemble_relations(d.node_sets, train_series, opts);
  if (d.relations.single_mode) d.warnings.push_back("single mode: no inter-modal relations");
  if (d.relations.zero_variance_nodes > 0) {
    d.warnings.push_back(std::to_string(d.relations.zero_variance_nodes) +
                         " zero-variance series in the functional similarity graphs");
  }

  d.train = make_windows(d.normalized, 0, d.bounds.train_end, T);
  d.val = make_windows(d.normalized, d.bounds.train_end, d.bounds.val_end, T);
  d.test = make_windows(d.normalized, d.bounds.val_end, steps, T);

  for (std::size_t m = 0; m < d.raw.size(); ++m) {
    d.strata.push_back(stratify_di_ds(d.raw[m].slice(0, d.bounds.train_end)));
    if (d.strata.back().warning) {
      d.warnings.push_back("mode " + std::to_string(d.raw[m].mode_id) +
                           " has fewer than 3 nodes; all nodes grouped as middle");
    }
  }
  return d;
}

ModelConfig resolved_model_config(const RunConfig& config, const PreparedData& data, Variant variant) {
  ModelConfig m = config.model;
  m.node_counts = data.relations.node_counts;
  m.variant = variant;
  return m;
}

STMRGNN make_model(const RunConfig& config, const PreparedData& data, Variant variant, std::uint64_t seed) {
  return build_variant(resolved_model_config(config, data, variant), variant, data.relations,
                       Rng::derive(seed, 0x494e4954ull).next());
}

VariantRun run_variant(const RunConfig& config, const PreparedData& data, Variant variant, std::uint64_t seed,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  VariantRun run;
  run.variant = variant;
  run.seed = seed;
  run.model = std::make_unique<STMRGNN>(make_model(config, data, variant, seed));
  TrainConfig tc = config.train;
  tc.seed = seed;
  run.training = train(*run.model, data.train, data.val, tc, on_epoch);
  run.predictions = predict_windows(*run.model, data.test, data.normalizer);
  run.metrics = evaluate_metrics(run.predictions, data.strata);
  return run;
}

BaselineRuns run_baselines(const RunConfig& config, const PreparedData& data) {
  BaselineRuns b;
  auto ha = ha_fit_predict(data.raw, data.bounds, config.model.window);
  auto lr = lr_fit_predict(data.raw, data.bounds, config.model.window);
  b.ha = evaluate_metrics(ha.predictions, data.strata);
  b.lr = evaluate_metrics(lr.predictions, data.strata);
  b.ha_fallbacks = ha.fallbacks;
  b.lr_fallbacks = lr.fallbacks;
  return b;
}

AblationResult run_ablation(const RunConfig& config, const std::function<void(const AblationCell&)>& on_cell) {
  AblationResult result;
  for (std::size_t r = 0; r < config.ablate.repetitions; ++r) {
    const std::uint64_t seed = config.seed + r;
    std::optional<PreparedData> data;
    std::string data_error;
    try {
      data = prepare_data(config, config.synth.seed + r);
      if (result.mode_ids.empty()) result.mode_ids = data->relations.mode_ids;
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    for (Variant v : config.ablate.variants) {
      AblationCell cell;
      cell.variant = v;
      cell.repetition = r;
      cell.seed = seed;
      if (!data) {
        cell.error = "data preparation failed: " + data_error;
      } else {
        try {
          VariantRun run = run_variant(config, *data, v, seed);
          cell.metrics = std::move(run.metrics);
          cell.ok = !run.training.diverged;
          if (run.training.diverged) cell.error = run.training.diagnostic;
        } catch (const std::exception& e) {
          cell.error = e.what();
        }
      }
      if (on_cell) on_cell(cell);
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

namespace {

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

}  // namespace

void write_ablation_summary(const std::filesystem::path& path, const AblationResult& result,
                            const std::vector<Variant>& variants) {
  auto out = csv::open_output(path);
  out << "variant,mode_id,metric,mean,std,n,failed\n";
  for (Variant v : variants) {
    std::size_t failed = 0;
    for (const auto& c : result.cells) failed += (c.variant == v && !c.ok) ? 1 : 0;
    for (std::size_t m = 0; m < result.mode_ids.size(); ++m) {
      std::vector<double> rmse, mae, r2;
      for (const auto& c : result.cells) {
        if (c.variant != v || !c.ok) continue;
        rmse.push_back(c.metrics[m].overall.rmse);
        mae.push_back(c.metrics[m].overall.mae);
        if (c.metrics[m].overall.r2) r2.push_back(*c.metrics[m].overall.r2);
      }
      auto row = [&](const char* name, const std::vector<double>& values) {
        out << to_string(v) << ',' << result.mode_ids[m] << ',' << name << ',';
        if (values.empty()) {
          out << "FAILED,FAILED,0," << failed << '\n';
          return;
        }
        const Summary s = summarize(values);
        out << csv::format_double(s.mean) << ',' << csv::format_double(s.stddev) << ',' << s.n << ',' << failed
            << '\n';
      };
      row("rmse", rmse);
      row("mae", mae);
      row("r2", r2);
    }
  }
}

void write_ablation_runs(const std::filesystem::path& path, const AblationResult& result) {
  auto out = csv::open_output(path);
  out << "variant,repetition,seed,mode_id,rmse,mae,r2,status\n";
  for (const auto& c : result.cells) {
    if (!c.ok) {
      std::string msg = c.error;
      for (char& ch : msg) {
        if (ch == ',' || ch == '\n') ch = ' ';
      }
      out << to_string(c.variant) << ',' << c.repetition << ',' << c.seed << ",,,,,failed: " << msg << '\n';
      continue;
    }
    for (const auto& m : c.metrics) {
      out << to_string(c.variant) << ',' << c.repetition << ',' << c.seed << ',' << m.mode_id << ','
          << csv::format_double(m.overall.rmse) << ',' << csv::format_double(m.overall.mae) << ','
          << (m.overall.r2 ? csv::format_double(*m.overall.r2) : "") << ",ok\n";
    }
  }
}

RunConfig reference_benchmark(double coupling_strength, std::uint64_t seed) {
  RunConfig c;
  c.synth = SyntheticSpec{};
  c.synth.coupling_strength = coupling_strength;
  c.synth.coupling_lag = 1;
  c.synth.seed = seed;
  c.seed = seed;
  c.model.c_in_t = 8;
  c.model.c_out_t = 16;
  c.model.c_in_s = 16;
  c.model.c_out_s = 8;
  c.model.c_hidden = 32;
  c.train.epochs = 40;
  c.train.patience = 10;
  return c;
}

}  // namespace stmrgnn
