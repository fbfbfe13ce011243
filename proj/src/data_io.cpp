#include "stmrgnn/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "stmrgnn/csv.hpp"
#include "stmrgnn/errors.hpp"

namespace stmrgnn {

// ---------------------------------------------------------------------------
// CSV helpers

namespace csv {

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError("expected a number, got '" + std::string(field) + "'", line);
  }
  return v;
}

long long parse_int(std::string_view field, std::size_t line) {
  long long v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end) {
    throw ParseError("expected an integer, got '" + std::string(field) + "'", line);
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::int64_t parse_timestamp(std::string_view text, std::size_t line) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char tail = 0;
  const std::string str(text);
  const int n = std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &s, &tail);
  if (n < 6 || (n == 7 && tail != 'Z') || str.size() > 20) {
    throw ParseError("invalid ISO-8601 UTC timestamp '" + str + "'", line);
  }
  namespace chr = std::chrono;
  const chr::year_month_day ymd{chr::year{y}, chr::month{static_cast<unsigned>(mo)},
                                chr::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59 || h < 0 || mi < 0 || s < 0) {
    throw ParseError("invalid calendar time '" + str + "'", line);
  }
  const auto days = chr::sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t seconds) {
  namespace chr = std::chrono;
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const chr::year_month_day ymd{chr::sys_days{chr::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                static_cast<int>((rem / 60) % 60), static_cast<int>(rem % 60));
  return buf;
}

int weekday(std::int64_t seconds) {
  std::int64_t days = seconds / 86400;
  if (seconds % 86400 < 0) --days;
  // 1970-01-01 was a Thursday (3 with Monday = 0).
  return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Panel basics

std::size_t NodeSet::index_of(const std::string& id) const {
  const auto it = std::find(node_ids.begin(), node_ids.end(), id);
  return static_cast<std::size_t>(it - node_ids.begin());
}

DemandPanel DemandPanel::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > steps()) {
    throw ContractError("panel slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range " +
                        std::to_string(steps()));
  }
  DemandPanel out;
  out.mode_id = mode_id;
  out.node_ids = node_ids;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  const std::size_t row = nodes() * kChannels;
  out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * row),
                    values.begin() + static_cast<std::ptrdiff_t>(end * row));
  return out;
}

DemandPanel DemandPanel::zeros(int mode_id, std::vector<std::string> node_ids, std::vector<std::int64_t> timestamps) {
  DemandPanel p;
  p.mode_id = mode_id;
  p.node_ids = std::move(node_ids);
  p.timestamps = std::move(timestamps);
  p.values.assign(p.steps() * p.nodes() * kChannels, 0.0);
  return p;
}

void validate_panel(const DemandPanel& panel, const NodeSet& nodes) {
  if (panel.mode_id != nodes.mode_id) {
    throw ContractError("panel for mode " + std::to_string(panel.mode_id) + " paired with node set of mode " +
                        std::to_string(nodes.mode_id));
  }
  if (panel.node_ids != nodes.node_ids) {
    throw ContractError("mode " + std::to_string(panel.mode_id) + ": panel node order differs from node set");
  }
  if (panel.values.size() != panel.steps() * panel.nodes() * kChannels) {
    throw ContractError("mode " + std::to_string(panel.mode_id) + ": panel value count does not match its shape");
  }
  for (std::size_t t = 1; t < panel.steps(); ++t) {
    if (panel.timestamps[t] - panel.timestamps[t - 1] != panel.interval_seconds() || panel.interval_seconds() <= 0) {
      throw ValidationError("mode " + std::to_string(panel.mode_id) + ": timestamps are not a uniform grid");
    }
  }
  for (double v : panel.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ValidationError("mode " + std::to_string(panel.mode_id) + ": demand must be finite and non-negative");
    }
  }
}

// ---------------------------------------------------------------------------
// Loaders

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void expect_header(const std::vector<std::string>& lines, const std::string& header, const std::string& file) {
  if (lines.empty()) throw ParseError(file + ": empty file, expected header '" + header + "'", 1);
  if (csv::trim(lines[0]) != header) {
    throw ParseError(file + ": expected header '" + header + "', got '" + std::string(csv::trim(lines[0])) + "'", 1);
  }
}

}  // namespace

std::vector<NodeSet> load_nodes_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  const std::string file = path.filename().string();
  expect_header(lines, "mode_id,node_id,lat,lon", file);
  std::map<int, NodeSet> by_mode;
  std::map<int, std::set<std::string>> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (csv::trim(lines[i]).empty()) continue;
    const auto fields = csv::split(lines[i]);
    if (fields.size() != 4) {
      throw ParseError(file + ": expected 4 fields, got " + std::to_string(fields.size()), line_no);
    }
    const long long mode = csv::parse_int(fields[0], line_no);
    if (mode <= 0) throw ValidationError(file + ": mode_id must be positive (line " + std::to_string(line_no) + ")");
    const std::string& id = fields[1];
    if (id.empty()) throw ParseError(file + ": empty node_id", line_no);
    const GeoPoint p{csv::parse_double(fields[2], line_no), csv::parse_double(fields[3], line_no)};
    if (p.lat < -90.0 || p.lat > 90.0) {
      throw ValidationError(file + ": latitude " + fields[2] + " outside [-90, 90] (line " + std::to_string(line_no) +
                            ")");
    }
    if (p.lon < -180.0 || p.lon > 180.0) {
      throw ValidationError(file + ": longitude " + fields[3] + " outside [-180, 180] (line " +
                            std::to_string(line_no) + ")");
    }
    if (!seen[static_cast<int>(mode)].insert(id).second) {
      throw ValidationError(file + ": duplicate node_id '" + id + "' in mode " + std::to_string(mode) + " (line " +
                            std::to_string(line_no) + ")");
    }
    auto& set = by_mode[static_cast<int>(mode)];
    set.mode_id = static_cast<int>(mode);
    set.node_ids.push_back(id);
    set.coordinates.push_back(p);
  }
  if (by_mode.empty()) throw ValidationError(file + ": no nodes");
  std::vector<NodeSet> out;
  for (auto& [mode, set] : by_mode) out.push_back(std::move(set));
  return out;
}

DemandLoadResult load_demand_csv(const std::filesystem::path& path, const std::vector<NodeSet>& node_sets) {
  const auto lines = read_lines(path);
  const std::string file = path.filename().string();
  expect_header(lines, "mode_id,node_id,timestamp,inflow,outflow", file);

  struct Row {
    std::size_t mode, node;
    std::int64_t ts;
    double in, out;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::set<std::int64_t> stamps;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (csv::trim(lines[i]).empty()) continue;
    const auto fields = csv::split(lines[i]);
    if (fields.size() != 5) {
      throw ParseError(file + ": expected 5 fields, got " + std::to_string(fields.size()), line_no);
    }
    const long long mode_id = csv::parse_int(fields[0], line_no);
    const auto mode_it = std::find_if(node_sets.begin(), node_sets.end(),
                                      [&](const NodeSet& s) { return s.mode_id == mode_id; });
    if (mode_it == node_sets.end()) {
      throw ValidationError(file + ": unknown mode_id " + fields[0] + " (line " + std::to_string(line_no) + ")");
    }
    const std::size_t node = mode_it->index_of(fields[1]);
    if (node == mode_it->size()) {
      throw ValidationError(file + ": unknown node_id '" + fields[1] + "' for mode " + fields[0] + " (line " +
                            std::to_string(line_no) + ")");
    }
    Row r{static_cast<std::size_t>(mode_it - node_sets.begin()), node, csv::parse_timestamp(fields[2], line_no),
          csv::parse_double(fields[3], line_no), csv::parse_double(fields[4], line_no), line_no};
    if (r.in < 0.0 || r.out < 0.0) {
      throw ValidationError(file + ": negative demand (line " + std::to_string(line_no) + ")");
    }
    stamps.insert(r.ts);
    rows.push_back(r);
  }
  if (stamps.empty()) throw ValidationError(file + ": no demand rows");

  // Uniform grid: spacing is the smallest difference between distinct stamps.
  std::vector<std::int64_t> grid(stamps.begin(), stamps.end());
  std::int64_t spacing = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const std::int64_t d = grid[i] - grid[i - 1];
    if (spacing == 0 || d < spacing) spacing = d;
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const std::int64_t d = grid[i] - grid[i - 1];
    if (d == spacing) continue;
    if (d % spacing == 0) {
      throw ValidationError(file + ": time grid has a gap, first missing interval " +
                            csv::format_timestamp(grid[i - 1] + spacing));
    }
    throw ValidationError(file + ": timestamps are not uniformly spaced near " + csv::format_timestamp(grid[i]));
  }

  DemandLoadResult result;
  for (const auto& set : node_sets) result.panels.push_back(DemandPanel::zeros(set.mode_id, set.node_ids, grid));
  std::vector<std::vector<char>> filled;
  for (const auto& p : result.panels) filled.emplace_back(p.steps() * p.nodes(), 0);
  for (const auto& r : rows) {
    const auto t = static_cast<std::size_t>((r.ts - grid.front()) / (spacing ? spacing : 1));
    auto& panel = result.panels[r.mode];
    char& mark = filled[r.mode][t * panel.nodes() + r.node];
    if (mark) {
      throw ValidationError(file + ": duplicate row for node '" + panel.node_ids[r.node] + "' at " +
                            csv::format_timestamp(r.ts) + " (line " + std::to_string(r.line) + ")");
    }
    mark = 1;
    panel.at(t, r.node, kInflow) = r.in;
    panel.at(t, r.node, kOutflow) = r.out;
  }
  for (const auto& f : filled) result.missing_cells += static_cast<std::size_t>(std::count(f.begin(), f.end(), 0));
  return result;
}

void write_nodes_csv(const std::filesystem::path& path, const std::vector<NodeSet>& node_sets) {
  auto out = csv::open_output(path);
  out << "mode_id,node_id,lat,lon\n";
  for (const auto& set : node_sets)
    for (std::size_t i = 0; i < set.size(); ++i)
      out << set.mode_id << ',' << set.node_ids[i] << ',' << csv::format_double(set.coordinates[i].lat) << ','
          << csv::format_double(set.coordinates[i].lon) << '\n';
}

void write_demand_csv(const std::filesystem::path& path, const std::vector<DemandPanel>& panels) {
  auto out = csv::open_output(path);
  out << "mode_id,node_id,timestamp,inflow,outflow\n";
  for (const auto& p : panels)
    for (std::size_t t = 0; t < p.steps(); ++t) {
      const std::string ts = csv::format_timestamp(p.timestamps[t]);
      for (std::size_t i = 0; i < p.nodes(); ++i)
        out << p.mode_id << ',' << p.node_ids[i] << ',' << ts << ',' << csv::format_double(p.at(t, i, kInflow)) << ','
            << csv::format_double(p.at(t, i, kOutflow)) << '\n';
    }
}

}  // namespace stmrgnn
