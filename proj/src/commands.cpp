#include "stmrgnn/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>

#include "stmrgnn/checkpoint.hpp"
#include "stmrgnn/csv.hpp"
#include "stmrgnn/data_io.hpp"
#include "stmrgnn/errors.hpp"
#include "stmrgnn/experiment.hpp"

namespace stmrgnn {

namespace fs = std::filesystem;

std::string model_label(Variant variant) { return "stmrgnn:" + std::string(to_string(variant)); }

namespace {

void write_text(const fs::path& path, const std::string& text) {
  auto out = csv::open_output(path);
  out << text;
}

void echo_config(const RunConfig& config) { write_text(config.paths.out / "config_resolved.ini", config.to_ini()); }

void report_warnings(const PreparedData& d, std::ostream& log) {
  for (const auto& w : d.warnings) log << "warning: " << w << '\n';
}

// Marks the output directory; an "incomplete" status means some artifacts may be missing.
void write_status(const RunConfig& config, const std::string& status) {
  write_text(config.paths.out / "status.txt", status + "\n");
}

template <typename F>
int guarded(const RunConfig& config, std::ostream& log, F body) {
  try {
    config.validate();
    fs::create_directories(config.paths.out);
    write_status(config, "incomplete");
    const int code = body();
    write_status(config, code == kExitOk ? "ok" : "incomplete: exit code " + std::to_string(code));
    return code;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    try {
      if (fs::exists(config.paths.out)) write_status(config, std::string("incomplete: ") + e.what());
    } catch (...) {
    }
    return kExitError;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& config, std::ostream& log) {
  return guarded(config, log, [&] {
    config.synth.validate(config.model.window);
    SyntheticData data = generate_synthetic(config.synth);
    write_nodes_csv(config.paths.out / "nodes.csv", data.node_sets);
    write_demand_csv(config.paths.out / "demand.csv", data.panels);
    auto out = csv::open_output(config.paths.out / "coupling.csv");
    out << "zone_id,station_id,strength,lag\n";
    for (std::size_t j = 0; j < data.coupling.zone_sources.size(); ++j) {
      for (std::size_t i : data.coupling.zone_sources[j]) {
        out << data.node_sets[1].node_ids[j] << ',' << data.node_sets[0].node_ids[i] << ','
            << csv::format_double(data.coupling.strength) << ',' << data.coupling.lag << '\n';
      }
    }
    echo_config(config);
    log << "wrote " << data.node_sets[0].size() << " + " << data.node_sets[1].size() << " nodes, "
        << data.panels[0].steps() << " steps to " << config.paths.out.string() << '\n';
    return kExitOk;
  });
}

int cmd_build_graphs(const RunConfig& config, std::ostream& log) {
  return guarded(config, log, [&] {
    const PreparedData d = prepare_data(config);
    report_warnings(d, log);
    const RelationSet& rel = d.relations;
    const auto files = write_relations_csv(rel, d.node_sets, config.paths.out / "graphs");

    auto out = csv::open_output(config.paths.out / "graphs" / "summary.csv");
    out << "file,kind,row_mode_id,col_mode_id,rows,cols,nonzero_fraction,zero_rows,zero_rows_transpose,"
           "max_row_sum_error\n";
    std::size_t isolated = 0;
    double worst = 0.0;
    for (std::size_t g = 0; g < rel.graphs.size(); ++g) {
      const RelationGraph& graph = rel.graphs[g];
      const Matrix& a = graph.adjacency;
      const auto nonzero = static_cast<double>((a.array() != 0.0).count()) / static_cast<double>(a.size());
      auto check = [&](const Matrix& n, std::size_t& zero_rows) {
        double err = 0.0;
        for (Eigen::Index i = 0; i < n.rows(); ++i) {
          const double s = n.row(i).sum();
          if (s == 0.0) ++zero_rows;
          else err = std::max(err, std::abs(s - 1.0));
        }
        return err;
      };
      std::size_t zero_rows = 0, zero_rows_t = 0;
      double err = check(graph.normalized, zero_rows);
      if (!graph.intra()) err = std::max(err, check(graph.normalized_transpose, zero_rows_t));
      isolated += zero_rows + zero_rows_t;
      worst = std::max(worst, err);
      out << files[g].filename().string() << ',' << to_string(graph.kind) << ',' << rel.mode_ids[graph.row_mode]
          << ',' << rel.mode_ids[graph.col_mode] << ',' << a.rows() << ',' << a.cols() << ','
          << csv::format_double(nonzero) << ',' << zero_rows << ',' << (graph.intra() ? "" : std::to_string(zero_rows_t))
          << ',' << csv::format_double(err) << '\n';
      char line[200];
      std::snprintf(line, sizeof(line), "  %-26s %4td x %-4td nonzero %6.3f  zero rows %zu\n",
                    files[g].filename().string().c_str(), a.rows(), a.cols(), nonzero, zero_rows + zero_rows_t);
      log << line;
    }
    echo_config(config);
    log << rel.graphs.size() << " relation graphs (" << rel.u() << " dependency kinds, " << rel.k()
        << " modes), max row-sum error " << worst << '\n';
    if (isolated > 0) log << "note: " << isolated << " node rows receive no message from some relation (isolated)\n";
    if (worst > 1e-9) throw ContractError("normalized adjacency row sums deviate from 1");
    return kExitOk;
  });
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  return guarded(config, log, [&] {
    const PreparedData d = prepare_data(config);
    report_warnings(d, log);
    echo_config(config);
    log << "training " << model_label(config.variant) << " on " << d.train.size() << " windows (val "
        << d.val.size() << ", test " << d.test.size() << ")\n";
    VariantRun run = run_variant(config, d, config.variant, config.seed, [&](const EpochRecord& r) {
      char line[160];
      std::snprintf(line, sizeof(line), "epoch %4zu  train %.6f  val %.6f  %.2fs\n", r.epoch, r.train_loss,
                    r.val_loss, r.seconds);
      log << line << std::flush;
    });
    save_checkpoint(config.paths.out / "model.ckpt", *run.model);
    write_training_log(config.paths.out / "training_log.csv", run.training);

    const std::string label = model_label(config.variant);
    write_metrics_csv(config.paths.out / "metrics.csv", label, run.metrics);
    write_per_node_csv(config.paths.out / "per_node_metrics.csv", run.metrics, d.node_sets);
    const BaselineRuns b = run_baselines(config, d);
    write_metrics_csv(config.paths.out / "baseline_ha.csv", "HA", b.ha);
    write_metrics_csv(config.paths.out / "baseline_lr.csv", "LR", b.lr);
    const std::string table =
        format_metrics_table("HA", b.ha) + format_metrics_table("LR", b.lr) + format_metrics_table(label, run.metrics);
    write_text(config.paths.out / "metrics.txt", table);
    log << table;
    log << "best epoch " << run.training.best_epoch << " (val loss " << run.training.best_val_loss << ")";
    if (run.training.stopped_early) log << ", stopped early";
    log << '\n';
    if (run.training.diverged) {
      log << "error: " << run.training.diagnostic << '\n';
      return kExitDiverged;
    }
    return kExitOk;
  });
}

int cmd_evaluate(const RunConfig& config, const fs::path& checkpoint, std::ostream& log) {
  return guarded(config, log, [&] {
    const PreparedData d = prepare_data(config);
    report_warnings(d, log);
    STMRGNN model = make_model(config, d, config.variant, config.seed);
    load_checkpoint(checkpoint, model);
    const PredictionSet p = predict_windows(model, d.test, d.normalizer);
    const auto metrics = evaluate_metrics(p, d.strata);
    const std::string label = model_label(config.variant);
    write_metrics_csv(config.paths.out / "evaluation.csv", label, metrics);
    write_per_node_csv(config.paths.out / "per_node_metrics.csv", metrics, d.node_sets);
    const std::string table = format_metrics_table(label, metrics);
    write_text(config.paths.out / "evaluation.txt", table);
    echo_config(config);
    log << table;
    return kExitOk;
  });
}

int cmd_ablate(const RunConfig& config, std::ostream& log) {
  return guarded(config, log, [&] {
    echo_config(config);
    const AblationResult result = run_ablation(config, [&](const AblationCell& c) {
      log << "repetition " << c.repetition << " " << to_string(c.variant) << ": ";
      if (!c.ok) {
        log << "FAILED " << c.error << '\n';
        return;
      }
      for (const auto& m : c.metrics) log << "mode " << m.mode_id << " rmse " << m.overall.rmse << "  ";
      log << '\n' << std::flush;
    });
    write_ablation_runs(config.paths.out / "ablation_runs.csv", result);
    write_ablation_summary(config.paths.out / "ablation_summary.csv", result, config.ablate.variants);
    std::size_t failed = 0;
    for (const auto& c : result.cells) failed += c.ok ? 0 : 1;
    log << "wrote ablation table for " << config.ablate.variants.size() << " variants x "
        << config.ablate.repetitions << " repetitions";
    if (failed) log << " (" << failed << " failed cells)";
    log << '\n';
    return failed ? kExitPartial : kExitOk;
  });
}

// ---------------------------------------------------------------------------
// Attention export

namespace {

std::vector<std::string> relation_labels(const RelationSet& rel, std::size_t target) {
  std::vector<std::string> labels;
  for (std::size_t n : rel.sources(target)) {
    for (Dependency kind : rel.kinds) {
      labels.push_back(rel.inter_modal ? std::string(to_string(kind)) + "_from_" + std::to_string(rel.mode_ids[n])
                                       : std::string(to_string(kind)));
    }
  }
  return labels;
}

std::pair<std::size_t, std::size_t> find_node(const std::vector<NodeSet>& sets, const std::string& query) {
  std::string id = query;
  std::optional<int> mode;
  if (const auto colon = query.find(':'); colon != std::string::npos) {
    try {
      mode = static_cast<int>(csv::parse_int(query.substr(0, colon), 0));
      id = query.substr(colon + 1);
    } catch (const ParseError&) {
    }
  }
  for (std::size_t m = 0; m < sets.size(); ++m) {
    if (mode && sets[m].mode_id != *mode) continue;
    const std::size_t i = sets[m].index_of(id);
    if (i < sets[m].size()) return {m, i};
  }
  std::string valid;
  for (const auto& s : sets) {
    for (const auto& n : s.node_ids) valid += (valid.empty() ? "" : ", ") + std::to_string(s.mode_id) + ":" + n;
  }
  throw ValidationError("unknown node '" + query + "'; valid ids: " + valid);
}

}  // namespace

int cmd_export_attention(const RunConfig& config, const fs::path& checkpoint, std::ostream& log) {
  return guarded(config, log, [&] {
    const PreparedData d = prepare_data(config);
    report_warnings(d, log);
    STMRGNN model = make_model(config, d, config.variant, config.seed);
    load_checkpoint(checkpoint, model);
    std::optional<std::pair<std::size_t, std::size_t>> query;
    if (!config.export_options.node.empty()) query = find_node(d.node_sets, config.export_options.node);
    const RelationSet& rel = model.relations();
    const std::size_t k = rel.k();
    const std::size_t blocks = config.model.blocks;
    const std::size_t chosen = config.export_options.block == 0 ? blocks - 1 : config.export_options.block - 1;
    const std::int64_t interval = d.raw[0].interval_seconds();
    const std::size_t slots = static_cast<std::size_t>(86400 / interval);

    // sums[agg][m][(node * slots + slot) * R + r], agg 0 = chosen block, 1 = mean over blocks
    std::vector<std::vector<std::vector<double>>> sums(2, std::vector<std::vector<double>>(k));
    std::vector<std::vector<std::size_t>> counts(k);
    std::vector<std::vector<double>> overall(k);  // chosen block, per node and relation
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t R = rel.relations_per_node(m);
      sums[0][m].assign(rel.node_counts[m] * slots * R, 0.0);
      sums[1][m].assign(rel.node_counts[m] * slots * R, 0.0);
      counts[m].assign(rel.node_counts[m] * slots, 0);
      overall[m].assign(rel.node_counts[m] * R, 0.0);
    }

    std::ofstream raw;
    if (config.export_options.raw) {
      raw = csv::open_output(config.paths.out / "attention_raw.csv");
      raw << "block,window,target_time,mode_id,node_id,step,relation,weight\n";
    }

    NoGradGuard guard;
    const std::size_t batch = 64;
    for (std::size_t start = 0; start < d.test.size(); start += batch) {
      std::vector<std::size_t> rows;
      for (std::size_t r = start; r < std::min(d.test.size(), start + batch); ++r) rows.push_back(r);
      ForwardTrace trace;
      model.forward(d.test.batch_inputs(rows), false, nullptr, &trace);
      for (std::size_t m = 0; m < k; ++m) {
        const std::size_t N = rel.node_counts[m], R = rel.relations_per_node(m);
        const auto labels = relation_labels(rel, m);
        for (std::size_t b = 0; b < rows.size(); ++b) {
          const std::size_t w = rows[b];
          const std::int64_t ts = d.raw[m].timestamps[d.test.target_steps[w]];
          std::int64_t sec = ts % 86400;
          if (sec < 0) sec += 86400;
          const auto slot = static_cast<std::size_t>(sec / interval);
          for (std::size_t i = 0; i < N; ++i) {
            ++counts[m][i * slots + slot];
            for (std::size_t r = 0; r < R; ++r) {
              double block_mean = 0.0;
              for (std::size_t l = 0; l < blocks; ++l) {
                const Tensor& a = trace.attention[l][m];  // [B x R x N x len]
                const std::size_t len = a.dim(3);
                double s = 0.0;
                for (std::size_t t = 0; t < len; ++t) {
                  const double v = a.data()[((b * R + r) * N + i) * len + t];
                  s += v;
                  if (raw.is_open()) {
                    raw << (l + 1) << ',' << w << ',' << csv::format_timestamp(ts) << ',' << rel.mode_ids[m] << ','
                        << d.node_sets[m].node_ids[i] << ',' << t << ',' << labels[r] << ','
                        << csv::format_double(v) << '\n';
                  }
                }
                s /= static_cast<double>(len);
                block_mean += s;
                if (l == chosen) {
                  sums[0][m][(i * slots + slot) * R + r] += s;
                  overall[m][i * R + r] += s;
                }
              }
              sums[1][m][(i * slots + slot) * R + r] += block_mean / static_cast<double>(blocks);
            }
          }
        }
      }
    }

    auto out = csv::open_output(config.paths.out / "attention_slots.csv");
    out << "aggregation,mode_id,node_id,slot,windows";
    const std::size_t Rmax = rel.relations_per_node(0);
    const auto header_labels = relation_labels(rel, 0);
    for (std::size_t r = 0; r < Rmax; ++r) out << ',' << header_labels[r];
    out << '\n';
    const std::string agg_name[2] = {"block" + std::to_string(chosen + 1), "block_mean"};
    for (int agg = 0; agg < 2; ++agg) {
      for (std::size_t m = 0; m < k; ++m) {
        const std::size_t R = rel.relations_per_node(m);
        for (std::size_t i = 0; i < rel.node_counts[m]; ++i) {
          for (std::size_t slot = 0; slot < slots; ++slot) {
            const std::size_t c = counts[m][i * slots + slot];
            if (c == 0) continue;
            out << agg_name[agg] << ',' << rel.mode_ids[m] << ',' << d.node_sets[m].node_ids[i] << ',' << slot << ','
                << c;
            for (std::size_t r = 0; r < R; ++r) {
              out << ',' << csv::format_double(sums[agg][m][(i * slots + slot) * R + r] / static_cast<double>(c));
            }
            out << '\n';
          }
        }
      }
    }
    log << "wrote attention weights for " << d.test.size() << " test windows (" << Rmax
        << " relations per node, reported block " << chosen + 1 << ")\n";

    if (query) {
      const auto [m, i] = *query;
      const std::size_t R = rel.relations_per_node(m);
      const auto labels = relation_labels(rel, m);
      auto top = csv::open_output(config.paths.out / "attention_topq.csv");
      top << "node_id,relation,rank,neighbor_mode_id,neighbor_id,attention,adjacency,score\n";
      const auto srcs = rel.sources(m);
      for (std::size_t si = 0; si < srcs.size(); ++si) {
        const std::size_t n = srcs[si];
        for (std::size_t ki = 0; ki < rel.u(); ++ki) {
          const std::size_t r = si * rel.u() + ki;
          const double att = overall[m][i * R + r] / static_cast<double>(d.test.size());
          const Matrix adj = rel.normalized(m, n, rel.kinds[ki]);
          std::vector<std::size_t> order(adj.cols());
          std::iota(order.begin(), order.end(), std::size_t{0});
          const auto row = static_cast<Eigen::Index>(i);
          std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return adj(row, static_cast<Eigen::Index>(a)) > adj(row, static_cast<Eigen::Index>(b));
          });
          const std::size_t q = std::min<std::size_t>(config.export_options.topq, order.size());
          for (std::size_t rank = 0; rank < q; ++rank) {
            const double a = adj(row, static_cast<Eigen::Index>(order[rank]));
            top << d.node_sets[m].node_ids[i] << ',' << labels[r] << ',' << (rank + 1) << ',' << rel.mode_ids[n]
                << ',' << d.node_sets[n].node_ids[order[rank]] << ',' << csv::format_double(att) << ','
                << csv::format_double(a) << ',' << csv::format_double(att * a) << '\n';
          }
        }
      }
      log << "wrote top-" << config.export_options.topq << " neighbors of " << config.export_options.node << '\n';
    }
    echo_config(config);
    return kExitOk;
  });
}

}  // namespace stmrgnn
