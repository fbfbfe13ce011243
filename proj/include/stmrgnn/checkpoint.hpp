#pragma once

// Text checkpoint archive:
//
//   stmrgnn-checkpoint 1
//   config <key=value ...>
//   param <name> <ndim> <dims...> <hex-float values...>
//   ...
//   checksum <fnv1a-64 of every preceding line>
//   end
//
// Values are written as hexadecimal floats, so loading restores them bit for bit.

#include <filesystem>
#include <string>
#include <vector>

#include "stmrgnn/model.hpp"

namespace stmrgnn {

// Architecture echo: dims, variant, modes with node counts, dependency kinds.
std::string config_echo(const STMRGNN& model);

std::string serialize_checkpoint(const STMRGNN& model);
void save_checkpoint(const std::filesystem::path& path, const STMRGNN& model);

struct CheckpointContents {
  std::string config;
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<double>> values;
};

// Throws CheckpointError on malformed or corrupted text.
CheckpointContents parse_checkpoint(const std::string& text);
CheckpointContents read_checkpoint(const std::filesystem::path& path);

// Copies stored values into `model`. Throws IncompatibleCheckpointError when
// the config echo or any parameter name/shape differs.
void load_checkpoint(const std::filesystem::path& path, STMRGNN& model);
void apply_checkpoint(const CheckpointContents& contents, STMRGNN& model);

}  // namespace stmrgnn
