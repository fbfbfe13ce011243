#include "stmrgnn/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "stmrgnn/csv.hpp"
#include "stmrgnn/errors.hpp"

namespace stmrgnn {

namespace {

constexpr std::string_view kHeader = "stmrgnn-checkpoint 1";

std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

double parse_hex_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  std::string_view body = s;
  bool negative = false;
  if (!body.empty() && body.front() == '-') {
    negative = true;
    body.remove_prefix(1);
  }
  auto res = std::from_chars(body.data(), body.data() + body.size(), v, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != body.data() + body.size()) {
    throw CheckpointError("checkpoint: bad value '" + std::string(s) + "' on line " + std::to_string(line));
  }
  return negative ? -v : v;
}

std::size_t parse_size(std::string_view s, std::size_t line) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw CheckpointError("checkpoint: bad integer '" + std::string(s) + "' on line " + std::to_string(line));
  }
  return v;
}

std::vector<std::string_view> tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::string config_echo(const STMRGNN& model) {
  const ModelConfig& c = model.config();
  const RelationSet& r = model.relations();
  std::ostringstream os;
  os << "blocks=" << c.blocks << " kernel=" << c.kernel << " c_in_t=" << c.c_in_t << " c_out_t=" << c.c_out_t
     << " c_in_s=" << c.c_in_s << " c_out_s=" << c.c_out_s << " c_hidden=" << c.c_hidden << " window=" << c.window
     << " dropout=" << csv::format_double(c.dropout) << " variant=" << to_string(c.variant) << " modes=";
  for (std::size_t m = 0; m < r.k(); ++m) os << (m ? "," : "") << r.mode_ids[m] << ':' << r.node_counts[m];
  os << " kinds=";
  for (std::size_t i = 0; i < r.u(); ++i) os << (i ? "," : "") << to_string(r.kinds[i]);
  os << " inter=" << (r.inter_modal ? 1 : 0);
  return os.str();
}

std::string serialize_checkpoint(const STMRGNN& model) {
  std::ostringstream body;
  body << kHeader << '\n';
  body << "config " << config_echo(model) << '\n';
  const ParameterStore& store = model.parameters();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& t = store.tensors()[i];
    body << "param " << store.names()[i] << ' ' << t.ndim();
    for (std::size_t d : t.shape()) body << ' ' << d;
    for (double v : t.data()) body << ' ' << hex_double(v);
    body << '\n';
  }
  std::string text = body.str();
  char sum[32];
  std::snprintf(sum, sizeof(sum), "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  text += "checksum ";
  text += sum;
  text += "\nend\n";
  return text;
}

void save_checkpoint(const std::filesystem::path& path, const STMRGNN& model) {
  std::ofstream out = csv::open_output(path);
  out << serialize_checkpoint(model);
  if (!out) throw CheckpointError("checkpoint: failed writing " + path.string());
}

CheckpointContents parse_checkpoint(const std::string& text) {
  CheckpointContents c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::uint64_t hash = 14695981039346656037ull;
  bool have_checksum = false, have_end = false, have_config = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (have_end) throw CheckpointError("checkpoint: trailing data after end marker");
    if (lineno == 1) {
      if (line != kHeader) throw CheckpointError("checkpoint: missing header (not a checkpoint file?)");
      hash = fnv1a(line + "\n", hash);
      continue;
    }
    if (have_checksum) {
      if (line != "end") throw CheckpointError("checkpoint: missing end marker");
      have_end = true;
      continue;
    }
    if (line.rfind("checksum ", 0) == 0) {
      const std::string want = line.substr(9);
      char sum[32];
      std::snprintf(sum, sizeof(sum), "%016llx", static_cast<unsigned long long>(hash));
      if (want != sum) throw CheckpointError("checkpoint: checksum mismatch (file corrupted)");
      have_checksum = true;
      continue;
    }
    hash = fnv1a(line + "\n", hash);
    if (line.rfind("config ", 0) == 0) {
      c.config = line.substr(7);
      have_config = true;
      continue;
    }
    auto tok = tokens(line);
    if (tok.size() < 3 || tok[0] != "param") {
      throw CheckpointError("checkpoint: unexpected content on line " + std::to_string(lineno));
    }
    const std::size_t ndim = parse_size(tok[2], lineno);
    if (tok.size() < 3 + ndim) throw CheckpointError("checkpoint: truncated shape on line " + std::to_string(lineno));
    Shape shape;
    for (std::size_t d = 0; d < ndim; ++d) shape.push_back(parse_size(tok[3 + d], lineno));
    const std::size_t n = shape_size(shape);
    if (tok.size() != 3 + ndim + n) {
      throw CheckpointError("checkpoint: parameter " + std::string(tok[1]) + " has " +
                            std::to_string(tok.size() - 3 - ndim) + " values, expected " + std::to_string(n));
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = parse_hex_double(tok[3 + ndim + i], lineno);
    c.names.emplace_back(tok[1]);
    c.shapes.push_back(std::move(shape));
    c.values.push_back(std::move(values));
  }
  if (!have_config) throw CheckpointError("checkpoint: missing config line");
  if (!have_checksum || !have_end) throw CheckpointError("checkpoint: truncated file");
  return c;
}

CheckpointContents read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

void apply_checkpoint(const CheckpointContents& contents, STMRGNN& model) {
  const std::string expected = config_echo(model);
  if (contents.config != expected) {
    throw IncompatibleCheckpointError("checkpoint was written for a different model\n  checkpoint: " +
                                      contents.config + "\n  config:     " + expected);
  }
  ParameterStore& store = model.parameters();
  if (contents.names.size() != store.size()) {
    throw IncompatibleCheckpointError("checkpoint holds " + std::to_string(contents.names.size()) +
                                      " parameters, model has " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (contents.names[i] != store.names()[i] || contents.shapes[i] != store.tensors()[i].shape()) {
      throw IncompatibleCheckpointError("checkpoint parameter " + contents.names[i] + " " +
                                        shape_str(contents.shapes[i]) + " does not match " + store.names()[i] +
                                        " " + shape_str(store.tensors()[i].shape()));
    }
  }
  store.restore(contents.values);
}

void load_checkpoint(const std::filesystem::path& path, STMRGNN& model) {
  apply_checkpoint(read_checkpoint(path), model);
}

}  // namespace stmrgnn
