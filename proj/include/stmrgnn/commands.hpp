#pragma once

// Subcommand bodies. Each returns the process exit code and writes its
// artifacts under config.paths.out; progress goes to `log`.

#include <filesystem>
#include <iosfwd>

#include "stmrgnn/config.hpp"

namespace stmrgnn {

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitUsage = 2,
  kExitDiverged = 3,
  kExitPartial = 4,
};

int cmd_synth(const RunConfig& config, std::ostream& log);
int cmd_build_graphs(const RunConfig& config, std::ostream& log);
int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const RunConfig& config, const std::filesystem::path& checkpoint, std::ostream& log);
int cmd_ablate(const RunConfig& config, std::ostream& log);
int cmd_export_attention(const RunConfig& config, const std::filesystem::path& checkpoint, std::ostream& log);

// Label used for the network in reports, e.g. "stmrgnn:no_intergraph".
std::string model_label(Variant variant);

}  // namespace stmrgnn
