#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "stmrgnn/commands.hpp"
#include "stmrgnn/config.hpp"
#include "stmrgnn/errors.hpp"

using namespace stmrgnn;

namespace {

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::optional<std::size_t> epochs;
  bool raw = false;
  std::optional<std::size_t> topq;
  std::string node;
  std::optional<std::size_t> block;
  std::string checkpoint;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (!o.out.empty()) c.paths.out = o.out;
  if (o.seed) {
    c.seed = *o.seed;
    c.synth.seed = *o.seed;
  }
  if (!o.variant.empty()) c.variant = parse_variant(o.variant);
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.raw) c.export_options.raw = true;
  if (o.topq) c.export_options.topq = *o.topq;
  if (!o.node.empty()) c.export_options.node = o.node;
  if (o.block) c.export_options.block = *o.block;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-temporal multi-relational graph network for multimodal demand forecasting"};
  app.require_subcommand(1);
  Overrides o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "model seed (also the synthetic data seed)");
  };
  auto checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--variant", o.variant, "variant the checkpoint was trained as");
  };

  auto* synth = app.add_subcommand("synth", "generate the coupled synthetic data set");
  common(synth);
  auto* graphs = app.add_subcommand("build-graphs", "build and write the relation graphs");
  common(graphs);
  auto* train = app.add_subcommand("train", "train one variant, evaluate it and the baselines");
  common(train);
  train->add_option("--variant", o.variant, "full, no_intergraph, no_geo, no_functional, no_attention");
  train->add_option("--epochs", o.epochs, "maximum epochs");
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  common(evaluate);
  checkpoint(evaluate);
  auto* ablate = app.add_subcommand("ablate", "run the ablation sweep");
  common(ablate);
  ablate->add_option("--epochs", o.epochs, "maximum epochs");
  auto* exp = app.add_subcommand("export-attention", "export relation attention weights");
  common(exp);
  checkpoint(exp);
  exp->add_flag("--raw", o.raw, "also write per-window weights");
  exp->add_option("--topq", o.topq, "neighbors per relation for --node");
  exp->add_option("--node", o.node, "query node, mode_id:node_id or node_id");
  exp->add_option("--block", o.block, "block to report (1-based, default last)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunConfig config;
  try {
    config = resolve(o);
    config.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(config, std::cout);
    if (graphs->parsed()) return cmd_build_graphs(config, std::cout);
    if (train->parsed()) return cmd_train(config, std::cout);
    if (evaluate->parsed()) return cmd_evaluate(config, o.checkpoint, std::cout);
    if (ablate->parsed()) return cmd_ablate(config, std::cout);
    if (exp->parsed()) return cmd_export_attention(config, o.checkpoint, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitUsage;
}
