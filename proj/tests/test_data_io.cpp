#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "stmrgnn/csv.hpp"
#include "stmrgnn/data_io.hpp"
#include "stmrgnn/errors.hpp"
#include "stmrgnn/synthetic.hpp"

using namespace stmrgnn;

namespace {

const char* kNodes =
    "mode_id,node_id,lat,lon\n"
    "1,A,40.75,-73.98\n"
    "2,Z1,40.76,-73.97\n"
    "1,B,40.70,-73.99\n"
    "1,C,40.71,-74.00\n"
    "2,Z2,40.72,-73.95\n";

std::string demand_rows(const std::vector<std::pair<int, std::string>>& nodes, std::size_t steps,
                        std::int64_t interval = 14400) {
  std::string s = "mode_id,node_id,timestamp,inflow,outflow\n";
  for (std::size_t t = 0; t < steps; ++t)
    for (const auto& [m, id] : nodes)
      s += std::to_string(m) + "," + id + "," + csv::format_timestamp(1519862400 + static_cast<std::int64_t>(t) * interval) +
           "," + std::to_string(t + 1) + "," + std::to_string(2 * t) + "\n";
  return s;
}

template <typename E>
std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return "";
}

// Residual after removing the mean of each time-of-week slot.
std::vector<double> deseasonalize(const std::vector<double>& x, std::size_t period) {
  std::vector<double> mean(period, 0.0), count(period, 0.0), out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) mean[t % period] += x[t], count[t % period] += 1;
  for (std::size_t s = 0; s < period; ++s) mean[s] /= count[s];
  for (std::size_t t = 0; t < x.size(); ++t) out[t] = x[t] - mean[t % period];
  return out;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size(), mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Zone series at t against the mean of its coupled stations at t - lag, per channel, after deseasonalizing.
std::vector<double> coupling_correlations(const SyntheticData& d, std::size_t lag) {
  const std::size_t T = d.panels[0].steps(), period = 7 * 6;
  std::vector<double> r;
  for (std::size_t j = 0; j < d.node_sets[1].size(); ++j) {
    for (std::size_t c = 0; c < 2; ++c) {
      std::vector<double> zone, src;
      for (std::size_t t = lag; t < T; ++t) {
        zone.push_back(d.panels[1].at(t, j, c));
        double avg = 0.0;
        for (std::size_t i : d.coupling.zone_sources[j]) avg += d.panels[0].at(t - lag, i, c);
        src.push_back(avg / static_cast<double>(d.coupling.zone_sources[j].size()));
      }
      r.push_back(correlation(deseasonalize(zone, period), deseasonalize(src, period)));
    }
  }
  return r;
}

}  // namespace

TEST_CASE("csv primitives") {
  CHECK(csv::split("a, b,,c") == std::vector<std::string>{"a", "b", "", "c"});
  CHECK(csv::trim("  x \r") == "x");
  CHECK(csv::parse_timestamp("2018-03-01T04:00:00Z") == 1519862400 + 14400);
  CHECK(csv::parse_timestamp("2018-03-01T04:00:00") == 1519862400 + 14400);
  CHECK(csv::format_timestamp(1519862400) == "2018-03-01T00:00:00Z");
  CHECK(csv::weekday(1519862400) == 3);  // a Thursday
  CHECK_THROWS_AS(csv::parse_timestamp("2018-13-01T00:00:00Z", 4), ParseError);
  CHECK_THROWS_AS(csv::parse_double("1.5x", 3), ParseError);
  for (double v : {0.1, 1.0 / 3.0, 123456.789, 1e-300, 5e300}) CHECK(csv::parse_double(csv::format_double(v), 0) == v);
}

TEST_CASE("load_nodes_csv") {
  const auto dir = test::scratch_dir("nodes");
  test::write_file(dir / "nodes.csv", kNodes);
  auto sets = load_nodes_csv(dir / "nodes.csv");
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].mode_id == 1);
  CHECK(sets[0].node_ids == std::vector<std::string>{"A", "B", "C"});
  CHECK(sets[1].node_ids == std::vector<std::string>{"Z1", "Z2"});
  CHECK(sets[0].coordinates[1].lat == 40.70);

  test::write_file(dir / "dup.csv", "mode_id,node_id,lat,lon\n1,A,40,-73\n1,A,41,-73\n");
  const std::string dup = error_of<ValidationError>([&] { load_nodes_csv(dir / "dup.csv"); });
  CHECK(dup.find("'A'") != std::string::npos);

  test::write_file(dir / "lat.csv", "mode_id,node_id,lat,lon\n1,A,95,-73\n");
  CHECK_THROWS_AS(load_nodes_csv(dir / "lat.csv"), ValidationError);

  test::write_file(dir / "bad.csv", "mode_id,node_id,lat,lon\n1,A,40,-73\n1,B,forty,-73\n");
  try {
    load_nodes_csv(dir / "bad.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  test::write_file(dir / "header.csv", "id,lat,lon\n");
  CHECK_THROWS_AS(load_nodes_csv(dir / "header.csv"), ParseError);
  CHECK_THROWS_AS(load_nodes_csv(dir / "absent.csv"), ParseError);
}

TEST_CASE("load_demand_csv") {
  const auto dir = test::scratch_dir("demand");
  test::write_file(dir / "nodes.csv", kNodes);
  auto sets = load_nodes_csv(dir / "nodes.csv");
  const std::vector<std::pair<int, std::string>> all{{1, "A"}, {1, "B"}, {1, "C"}, {2, "Z1"}, {2, "Z2"}};

  SUBCASE("dense") {
    test::write_file(dir / "d.csv", demand_rows(all, 100));
    auto r = load_demand_csv(dir / "d.csv", sets);
    CHECK(r.missing_cells == 0);
    REQUIRE(r.panels.size() == 2);
    CHECK(r.panels[0].steps() == 100);
    CHECK(r.panels[0].nodes() == 3);
    CHECK(r.panels[0].values.size() == 100 * 3 * 2);
    CHECK(r.panels[1].at(99, 1, kInflow) == 100.0);
    CHECK(r.panels[0].interval_seconds() == 14400);
  }
  SUBCASE("partial 5-node single mode") {
    NodeSet five;
    five.mode_id = 1;
    std::vector<std::pair<int, std::string>> ids;
    for (int i = 0; i < 5; ++i) {
      five.node_ids.push_back("n" + std::to_string(i));
      five.coordinates.push_back({40.7, -73.9 + 0.01 * i});
      ids.push_back({1, five.node_ids.back()});
    }
    test::write_file(dir / "five.csv", demand_rows(ids, 100));
    auto r = load_demand_csv(dir / "five.csv", {five});
    CHECK(r.panels[0].values.size() == 100 * 5 * 2);
    CHECK(r.missing_cells == 0);
  }
  SUBCASE("missing cell") {
    std::string text = demand_rows(all, 10);
    const std::string row = "1,B," + csv::format_timestamp(1519862400 + 3 * 14400) + ",4,6\n";
    REQUIRE(text.find(row) != std::string::npos);
    text.erase(text.find(row), row.size());
    test::write_file(dir / "m.csv", text);
    auto r = load_demand_csv(dir / "m.csv", sets);
    CHECK(r.missing_cells == 1);
    CHECK(r.panels[0].steps() == 10);
    CHECK(r.panels[0].at(3, 1, kInflow) == 0.0);
    CHECK(r.panels[0].at(3, 1, kOutflow) == 0.0);
  }
  SUBCASE("gap in the grid") {
    std::string text = "mode_id,node_id,timestamp,inflow,outflow\n";
    for (int t : {0, 1, 3, 4})
      for (const auto& [m, id] : all)
        text += std::to_string(m) + "," + id + "," + csv::format_timestamp(1519862400 + t * 14400) + ",1,1\n";
    test::write_file(dir / "g.csv", text);
    const std::string msg = error_of<ValidationError>([&] { load_demand_csv(dir / "g.csv", sets); });
    CHECK(msg.find(csv::format_timestamp(1519862400 + 2 * 14400)) != std::string::npos);
  }
  SUBCASE("negative demand") {
    std::string text = demand_rows(all, 3);
    text += "1,A," + csv::format_timestamp(1519862400 + 3 * 14400) + ",-1,0\n";
    test::write_file(dir / "n.csv", text);
    CHECK_THROWS_AS(load_demand_csv(dir / "n.csv", sets), ValidationError);
  }
  SUBCASE("unknown node") {
    std::string text = demand_rows(all, 3) + "1,Q," + csv::format_timestamp(1519862400) + ",1,0\n";
    test::write_file(dir / "u.csv", text);
    CHECK_THROWS_AS(load_demand_csv(dir / "u.csv", sets), ValidationError);
  }
  SUBCASE("round trip") {
    test::write_file(dir / "d.csv", demand_rows(all, 20));
    auto first = load_demand_csv(dir / "d.csv", sets);
    write_demand_csv(dir / "again.csv", first.panels);
    write_nodes_csv(dir / "nodes2.csv", sets);
    auto sets2 = load_nodes_csv(dir / "nodes2.csv");
    auto second = load_demand_csv(dir / "again.csv", sets2);
    for (std::size_t m = 0; m < 2; ++m) {
      CHECK(second.panels[m].values == first.panels[m].values);
      CHECK(second.panels[m].timestamps == first.panels[m].timestamps);
      CHECK(sets2[m].node_ids == sets[m].node_ids);
      CHECK(sets2[m].coordinates[0].lon == sets[m].coordinates[0].lon);
    }
  }
}

TEST_CASE("validate_panel") {
  Rng rng(1);
  NodeSet nodes = test::random_nodes(rng, 1, 3);
  DemandPanel p = test::random_panel(rng, nodes, 5);
  CHECK_NOTHROW(validate_panel(p, nodes));
  DemandPanel neg = p;
  neg.values[4] = -0.5;
  CHECK_THROWS_AS(validate_panel(neg, nodes), ValidationError);
  DemandPanel uneven = p;
  uneven.timestamps[3] += 10;
  CHECK_THROWS_AS(validate_panel(uneven, nodes), ValidationError);
  NodeSet fewer = nodes;
  fewer.node_ids.pop_back();
  fewer.coordinates.pop_back();
  CHECK_THROWS_AS(validate_panel(p, fewer), ContractError);
}

TEST_CASE("generate_synthetic") {
  SUBCASE("deterministic and non-negative") {
    SyntheticSpec spec;
    spec.steps = 300;
    spec.shock_amplitude = 0.9;  // push some values under zero before clipping
    auto a = generate_synthetic(spec), b = generate_synthetic(spec);
    for (std::size_t m = 0; m < 2; ++m) {
      CHECK(a.panels[m].values == b.panels[m].values);
      for (double v : a.panels[m].values) CHECK(v >= 0.0);
      CHECK_NOTHROW(validate_panel(a.panels[m], a.node_sets[m]));
    }
    spec.seed = 8;
    CHECK(generate_synthetic(spec).panels[0].values != a.panels[0].values);
    CHECK(a.node_sets[0].size() == 20);
    CHECK(a.node_sets[1].size() == 10);
    CHECK(a.panels[0].interval_seconds() == 4 * 3600);
  }
  SUBCASE("no coupling") {
    SyntheticSpec spec;
    spec.coupling_strength = 0.0;
    for (double r : coupling_correlations(generate_synthetic(spec), 1)) CHECK(std::abs(r) < 0.1);
  }
  SUBCASE("strong lag-1 coupling") {
    SyntheticSpec spec;
    spec.coupling_strength = 0.8;
    spec.coupling_lag = 1;
    for (double r : coupling_correlations(generate_synthetic(spec), 1)) CHECK(r > 0.5);
  }
  SUBCASE("generator settings validation") {
    SyntheticSpec spec;
    spec.coupling_strength = 1.5;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.coupling_strength = 0.5;
    spec.steps = 16;
    CHECK_THROWS_AS(spec.validate(6), ConfigError);
    spec.steps = 17;
    CHECK_NOTHROW(spec.validate(6));
  }
}
