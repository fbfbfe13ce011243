#include "stmrgnn/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "stmrgnn/csv.hpp"
#include "stmrgnn/errors.hpp"

namespace stmrgnn {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"paths", {"nodes", "demand", "out"}},
      {"model", {"blocks", "kernel", "c_in_t", "c_out_t", "c_in_s", "c_out_s", "c_hidden", "window", "dropout"}},
      {"train",
       {"epochs", "batch_size", "learning_rate", "weight_decay", "loss_weights", "patience", "loss_norm"}},
      {"split", {"train", "val", "test"}},
      {"graph", {"kappa_m", "sigma_m", "kinds", "inter_modal"}},
      {"run", {"seed", "variant"}},
      {"synth",
       {"stations", "zones", "steps", "interval_seconds", "start", "extent_m", "station_factors", "zone_factors",
        "daily_amplitude", "weekly_amplitude", "shock_amplitude", "shock_autocorrelation", "noise_std",
        "coupling_strength", "coupling_lag", "coupling_radius_m", "seed"}},
      {"ablate", {"repetitions", "variants"}},
      {"export", {"topq", "node", "block", "raw"}},
  };
  return keys;
}

class Reader {
 public:
  Reader(const pt::ptree& tree, std::string source) : tree_(tree), source_(std::move(source)) {}

  const std::string* raw(const std::string& section, const std::string& key) const {
    auto s = tree_.find(section);
    if (s == tree_.not_found()) return nullptr;
    auto k = s->second.find(key);
    if (k == s->second.not_found()) return nullptr;
    return &k->second.data();
  }

  [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& why) const {
    throw ConfigError(source_ + ": [" + section + "] " + key + ": " + why);
  }

  void str(const std::string& section, const std::string& key, std::string& out) const {
    if (auto v = raw(section, key)) out = std::string(csv::trim(*v));
  }

  void real(const std::string& section, const std::string& key, double& out) const {
    if (auto v = raw(section, key)) {
      try {
        out = csv::parse_double(csv::trim(*v), 0);
      } catch (const ParseError&) {
        fail(section, key, "expected a number, got '" + *v + "'");
      }
    }
  }

  template <typename Int>
  void integer(const std::string& section, const std::string& key, Int& out) const {
    if (auto v = raw(section, key)) {
      long long x = 0;
      try {
        x = csv::parse_int(csv::trim(*v), 0);
      } catch (const ParseError&) {
        fail(section, key, "expected an integer, got '" + *v + "'");
      }
      if constexpr (std::is_unsigned_v<Int>) {
        if (x < 0) fail(section, key, "must be non-negative");
      }
      out = static_cast<Int>(x);
    }
  }

  void boolean(const std::string& section, const std::string& key, bool& out) const {
    if (auto v = raw(section, key)) {
      const std::string s(csv::trim(*v));
      if (s == "true" || s == "1" || s == "yes") out = true;
      else if (s == "false" || s == "0" || s == "no") out = false;
      else fail(section, key, "expected true or false, got '" + s + "'");
    }
  }

 private:
  const pt::ptree& tree_;
  std::string source_;
};

std::vector<std::string> list_items(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& item : csv::split(text)) {
    const auto t = csv::trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
  return os.str();
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    auto it = known_keys().find(section);
    if (it == known_keys().end()) {
      if (body.empty()) throw ConfigError(source + ": key '" + section + "' outside any section");
      throw ConfigError(source + ": unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ConfigError(source + ": unknown key '" + key + "' in [" + section + "]");
    }
  }

  Reader r(tree, source);
  RunConfig c;
  std::string s;

  if (auto v = r.raw("paths", "nodes")) c.paths.nodes = std::string(csv::trim(*v));
  if (auto v = r.raw("paths", "demand")) c.paths.demand = std::string(csv::trim(*v));
  if (auto v = r.raw("paths", "out")) c.paths.out = std::string(csv::trim(*v));

  r.integer("model", "blocks", c.model.blocks);
  r.integer("model", "kernel", c.model.kernel);
  r.integer("model", "c_in_t", c.model.c_in_t);
  r.integer("model", "c_out_t", c.model.c_out_t);
  r.integer("model", "c_in_s", c.model.c_in_s);
  r.integer("model", "c_out_s", c.model.c_out_s);
  r.integer("model", "c_hidden", c.model.c_hidden);
  r.integer("model", "window", c.model.window);
  r.real("model", "dropout", c.model.dropout);

  r.integer("train", "epochs", c.train.epochs);
  r.integer("train", "batch_size", c.train.batch_size);
  r.real("train", "learning_rate", c.train.learning_rate);
  r.real("train", "weight_decay", c.train.weight_decay);
  r.integer("train", "patience", c.train.patience);
  if (auto v = r.raw("train", "loss_weights")) {
    c.train.loss_weights.clear();
    for (const auto& item : list_items(*v)) {
      try {
        c.train.loss_weights.push_back(csv::parse_double(item, 0));
      } catch (const ParseError&) {
        r.fail("train", "loss_weights", "expected comma-separated numbers");
      }
    }
  }
  s.clear();
  r.str("train", "loss_norm", s);
  if (!s.empty()) c.train.loss_norm = parse_loss_norm(s);

  r.real("split", "train", c.split.train);
  r.real("split", "val", c.split.val);
  r.real("split", "test", c.split.test);

  r.real("graph", "kappa_m", c.graph.geo.kappa_m);
  if (auto v = r.raw("graph", "sigma_m")) {
    const std::string t(csv::trim(*v));
    if (t == "auto" || t.empty()) {
      c.graph.geo.sigma_m.reset();
    } else {
      double sigma = 0.0;
      r.real("graph", "sigma_m", sigma);
      c.graph.geo.sigma_m = sigma;
    }
  }
  if (auto v = r.raw("graph", "kinds")) {
    c.graph.kinds.clear();
    for (const auto& item : list_items(*v)) {
      try {
        c.graph.kinds.push_back(parse_dependency(item));
      } catch (const ContractError& e) {
        r.fail("graph", "kinds", e.what());
      }
    }
  }
  r.boolean("graph", "inter_modal", c.graph.inter_modal);

  r.integer("run", "seed", c.seed);
  s.clear();
  r.str("run", "variant", s);
  if (!s.empty()) {
    try {
      c.variant = parse_variant(s);
    } catch (const ContractError& e) {
      r.fail("run", "variant", e.what());
    }
  }

  r.integer("synth", "stations", c.synth.station.nodes);
  r.integer("synth", "zones", c.synth.zone.nodes);
  r.integer("synth", "steps", c.synth.steps);
  r.integer("synth", "interval_seconds", c.synth.interval_seconds);
  if (auto v = r.raw("synth", "start")) {
    try {
      c.synth.start_time = csv::parse_timestamp(csv::trim(*v));
    } catch (const ParseError& e) {
      r.fail("synth", "start", e.what());
    }
  }
  double extent = c.synth.station.extent_m;
  r.real("synth", "extent_m", extent);
  c.synth.station.extent_m = c.synth.zone.extent_m = extent;
  r.integer("synth", "station_factors", c.synth.station.factors);
  r.integer("synth", "zone_factors", c.synth.zone.factors);
  r.real("synth", "daily_amplitude", c.synth.daily_amplitude);
  r.real("synth", "weekly_amplitude", c.synth.weekly_amplitude);
  r.real("synth", "shock_amplitude", c.synth.shock_amplitude);
  r.real("synth", "shock_autocorrelation", c.synth.shock_autocorrelation);
  r.real("synth", "noise_std", c.synth.noise_std);
  r.real("synth", "coupling_strength", c.synth.coupling_strength);
  r.integer("synth", "coupling_lag", c.synth.coupling_lag);
  r.real("synth", "coupling_radius_m", c.synth.coupling_radius_m);
  r.integer("synth", "seed", c.synth.seed);

  r.integer("ablate", "repetitions", c.ablate.repetitions);
  if (auto v = r.raw("ablate", "variants")) {
    c.ablate.variants.clear();
    for (const auto& item : list_items(*v)) {
      try {
        c.ablate.variants.push_back(parse_variant(item));
      } catch (const ContractError& e) {
        r.fail("ablate", "variants", e.what());
      }
    }
  }

  r.integer("export", "topq", c.export_options.topq);
  r.str("export", "node", c.export_options.node);
  r.integer("export", "block", c.export_options.block);
  r.boolean("export", "raw", c.export_options.raw);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void RunConfig::validate() const {
  if (paths.nodes.empty() != paths.demand.empty()) {
    throw ConfigError("[paths] nodes and demand must be given together");
  }
  if (paths.out.empty()) throw ConfigError("[paths] out must not be empty");
  ModelConfig m = model;
  if (m.node_counts.empty()) m.node_counts = {1};
  m.validate();
  train.validate(train.loss_weights.empty() ? 1 : train.loss_weights.size());
  split.validate();
  if (!(graph.geo.kappa_m > 0.0)) throw ConfigError("[graph] kappa_m must be positive");
  if (graph.geo.sigma_m && !(*graph.geo.sigma_m > 0.0)) throw ConfigError("[graph] sigma_m must be positive or auto");
  if (graph.kinds.empty()) throw ConfigError("[graph] kinds must name at least one dependency");
  for (std::size_t i = 0; i < graph.kinds.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (graph.kinds[i] == graph.kinds[j]) throw ConfigError("[graph] kinds lists a dependency twice");
    }
  }
  if (ablate.repetitions == 0) throw ConfigError("[ablate] repetitions must be positive");
  if (ablate.variants.empty()) throw ConfigError("[ablate] variants must not be empty");
  if (export_options.topq == 0) throw ConfigError("[export] topq must be positive");
  if (export_options.block > model.blocks) {
    throw ConfigError("[export] block " + std::to_string(export_options.block) + " exceeds the " +
                      std::to_string(model.blocks) + " model blocks");
  }
  if (use_synthetic()) synth.validate(model.window);
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  auto num = [](double v) { return csv::format_double(v); };
  os << "[paths]\n"
     << "nodes = " << paths.nodes.string() << "\n"
     << "demand = " << paths.demand.string() << "\n"
     << "out = " << paths.out.string() << "\n\n";
  os << "[model]\n"
     << "blocks = " << model.blocks << "\nkernel = " << model.kernel << "\nc_in_t = " << model.c_in_t
     << "\nc_out_t = " << model.c_out_t << "\nc_in_s = " << model.c_in_s << "\nc_out_s = " << model.c_out_s
     << "\nc_hidden = " << model.c_hidden << "\nwindow = " << model.window << "\ndropout = " << num(model.dropout)
     << "\n\n";
  std::vector<std::string> weights;
  for (double w : train.loss_weights) weights.push_back(num(w));
  os << "[train]\n"
     << "epochs = " << train.epochs << "\nbatch_size = " << train.batch_size
     << "\nlearning_rate = " << num(train.learning_rate) << "\nweight_decay = " << num(train.weight_decay)
     << "\nloss_weights = " << join(weights) << "\npatience = " << train.patience
     << "\nloss_norm = " << to_string(train.loss_norm) << "\n\n";
  os << "[split]\ntrain = " << num(split.train) << "\nval = " << num(split.val) << "\ntest = " << num(split.test)
     << "\n\n";
  std::vector<std::string> kinds;
  for (Dependency d : graph.kinds) kinds.emplace_back(to_string(d));
  os << "[graph]\nkappa_m = " << num(graph.geo.kappa_m)
     << "\nsigma_m = " << (graph.geo.sigma_m ? num(*graph.geo.sigma_m) : std::string("auto"))
     << "\nkinds = " << join(kinds) << "\ninter_modal = " << (graph.inter_modal ? "true" : "false") << "\n\n";
  os << "[run]\nseed = " << seed << "\nvariant = " << to_string(variant) << "\n\n";
  os << "[synth]\nstations = " << synth.station.nodes << "\nzones = " << synth.zone.nodes
     << "\nsteps = " << synth.steps << "\ninterval_seconds = " << synth.interval_seconds
     << "\nstart = " << csv::format_timestamp(synth.start_time) << "\nextent_m = " << num(synth.station.extent_m)
     << "\nstation_factors = " << synth.station.factors << "\nzone_factors = " << synth.zone.factors
     << "\ndaily_amplitude = " << num(synth.daily_amplitude) << "\nweekly_amplitude = " << num(synth.weekly_amplitude)
     << "\nshock_amplitude = " << num(synth.shock_amplitude)
     << "\nshock_autocorrelation = " << num(synth.shock_autocorrelation) << "\nnoise_std = " << num(synth.noise_std)
     << "\ncoupling_strength = " << num(synth.coupling_strength) << "\ncoupling_lag = " << synth.coupling_lag
     << "\ncoupling_radius_m = " << num(synth.coupling_radius_m) << "\nseed = " << synth.seed << "\n\n";
  std::vector<std::string> variants;
  for (Variant v : ablate.variants) variants.emplace_back(to_string(v));
  os << "[ablate]\nrepetitions = " << ablate.repetitions << "\nvariants = " << join(variants) << "\n\n";
  os << "[export]\ntopq = " << export_options.topq << "\nnode = " << export_options.node
     << "\nblock = " << export_options.block << "\nraw = " << (export_options.raw ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace stmrgnn
