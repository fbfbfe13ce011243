#include "stmrgnn/model.hpp"

#include <cmath>

#include "stmrgnn/errors.hpp"

namespace stmrgnn {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_intergraph: return "no_intergraph";
    case Variant::no_geo: return "no_geo";
    case Variant::no_functional: return "no_functional";
    case Variant::no_attention: return "no_attention";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : all_variants()) {
    if (to_string(v) == name) return v;
  }
  throw ContractError("unknown variant '" + std::string(name) +
                      "' (expected full, no_intergraph, no_geo, no_functional or no_attention)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::full, Variant::no_intergraph, Variant::no_geo,
                                         Variant::no_functional, Variant::no_attention};
  return v;
}

long long ModelConfig::post_block_length() const {
  return static_cast<long long>(window) -
         static_cast<long long>(blocks) * (static_cast<long long>(kernel) - 1) * 2;
}

void ModelConfig::validate() const {
  if (blocks == 0 || kernel == 0 || window == 0) throw ConfigError("model: L, K_t and T must be positive");
  if (c_in_t == 0 || c_out_t == 0 || c_in_s == 0 || c_out_s == 0 || c_hidden == 0) {
    throw ConfigError("model: channel dimensions must be positive");
  }
  if (post_block_length() < 1) {
    throw ConfigError("model: T - L*(K_t-1)*2 = " + std::to_string(post_block_length()) +
                      " leaves no time step (T=" + std::to_string(window) + ", L=" + std::to_string(blocks) +
                      ", K_t=" + std::to_string(kernel) + ")");
  }
  if (c_in_s != c_out_t) {
    throw ConfigError("model: the graph layer consumes the TCN output, so c_in_s (" + std::to_string(c_in_s) +
                      ") must equal c_out_t (" + std::to_string(c_out_t) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
  if (node_counts.empty()) throw ConfigError("model: no modes");
  for (std::size_t n : node_counts) {
    if (n == 0) throw ConfigError("model: every mode needs at least one node");
  }
}

// ---------------------------------------------------------------------------

void ParameterStore::add(std::string name, const Tensor& t) {
  names_.push_back(std::move(name));
  tensors_.push_back(t);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void ParameterStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != tensors_.size()) throw ContractError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = tensors_[i].mutable_data();
    if (dst.size() != values[i].size()) throw ContractError("restore: size mismatch for " + names_[i]);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

// ---------------------------------------------------------------------------
// Building blocks

Tensor ggcn_forward(const Tensor& features, const Tensor& adj, const GGCNParams& params) {
  if (features.ndim() != 2) throw DimensionError("ggcn_forward: features must be [N x c], got " +
                                                 shape_str(features.shape()));
  if (adj.ndim() != 3 || adj.dim(2) != features.dim(0)) {
    throw ContractError("ggcn_forward: adjacency " + shape_str(adj.shape()) + " does not match " +
                        std::to_string(features.dim(0)) + " source nodes");
  }
  const std::size_t n = features.dim(0), c = features.dim(1);
  const Tensor h = features.reshape({1, n, c, 1});
  const Tensor z = relu(graph_conv(h, adj, params.weight, params.bias));
  return z.reshape({adj.dim(0), adj.dim(1), params.weight.dim(2)});
}

Tensor relation_attention(const Tensor& z, const AttentionParams& params) {
  if (z.ndim() != 2) throw DimensionError("relation_attention: z must be [R x c], got " + shape_str(z.shape()));
  const std::size_t r = z.dim(0), c = z.dim(1);
  const Tensor scores = relation_scores(z.reshape({1, r, 1, c, 1}), params.weight, params.bias);
  return softmax(scores, 1).reshape({r});
}

Tensor relation_aggregate(const Tensor& z, const Tensor& weights) {
  if (z.ndim() != 2) throw DimensionError("relation_aggregate: z must be [R x c], got " + shape_str(z.shape()));
  const std::size_t r = z.dim(0), c = z.dim(1);
  if (weights.shape() != Shape{r}) {
    throw DimensionError("relation_aggregate: weights " + shape_str(weights.shape()) + " for " + std::to_string(r) +
                         " relations");
  }
  return relation_mix(z.reshape({1, r, 1, c, 1}), weights.reshape({1, r, 1, 1})).reshape({c});
}

Tensor gated_tcn_forward(const Tensor& h, const TCNParams& params) {
  const Tensor info = causal_conv1d(h, params.info_weight, params.info_bias);
  const Tensor gate = sigmoid(causal_conv1d(h, params.gate_weight, params.gate_bias));
  return mul(info, gate);
}

// ---------------------------------------------------------------------------
// Model

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor conv_kernel(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  return glorot({out, in, k}, in * k, out * k, rng);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

TCNParams make_tcn(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  return {conv_kernel(out, in, k, rng), zeros_param({out}), conv_kernel(out, in, k, rng), zeros_param({out})};
}

void register_tcn(ParameterStore& store, const std::string& prefix, const TCNParams& p) {
  store.add(prefix + ".info.weight", p.info_weight);
  store.add(prefix + ".info.bias", p.info_bias);
  store.add(prefix + ".gate.weight", p.gate_weight);
  store.add(prefix + ".gate.bias", p.gate_bias);
}

}  // namespace

STMRGNN::STMRGNN(ModelConfig config, RelationSet relations, std::uint64_t seed)
    : config_(std::move(config)), relations_(std::move(relations)) {
  config_.validate();
  if (config_.node_counts != relations_.node_counts) {
    throw ContractError("model: configured node counts do not match the relation set");
  }
  init_parameters(seed);
}

void STMRGNN::init_parameters(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t k = relations_.k();
  const std::size_t u = relations_.u();
  const auto& c = config_;
  auto mode_name = [&](std::size_t m) { return "mode" + std::to_string(relations_.mode_ids[m]); };

  for (std::size_t m = 0; m < k; ++m) {
    lift_weight_.push_back(conv_kernel(c.c_in_t, kChannels, 1, rng));
    lift_bias_.push_back(zeros_param({c.c_in_t}));
    store_.add("lift." + mode_name(m) + ".weight", lift_weight_.back());
    store_.add("lift." + mode_name(m) + ".bias", lift_bias_.back());
  }
  for (std::size_t l = 0; l < c.blocks; ++l) {
    BlockParams b;
    const std::string name = "block" + std::to_string(l + 1);
    const std::size_t in_channels = l == 0 ? c.c_in_t : c.c_out_t;
    for (std::size_t m = 0; m < k; ++m) {
      b.tcn1.push_back(make_tcn(c.c_out_t, in_channels, c.kernel, rng));
      register_tcn(store_, name + "." + mode_name(m) + ".tcn1", b.tcn1.back());
    }
    for (std::size_t m = 0; m < k; ++m) {
      for (std::size_t n : relations_.sources(m)) {
        GGCNParams g{glorot({u, c.c_in_s, c.c_out_s}, c.c_in_s, c.c_out_s, rng), zeros_param({c.c_out_s})};
        const std::string gname = name + "." + mode_name(m) + ".ggcn_from_" + mode_name(n);
        store_.add(gname + ".weight", g.weight);
        store_.add(gname + ".bias", g.bias);
        b.ggcn.emplace(std::make_pair(m, n), g);
      }
      if (c.variant != Variant::no_attention) {
        const std::size_t rel = relations_.relations_per_node(m);
        AttentionParams a{glorot({rel * c.c_out_s, 1}, rel * c.c_out_s, 1, rng), zeros_param({1})};
        store_.add(name + "." + mode_name(m) + ".attention.weight", a.weight);
        store_.add(name + "." + mode_name(m) + ".attention.bias", a.bias);
        b.attention.push_back(a);
      }
      b.projection.push_back(conv_kernel(c.c_out_t, c.c_out_s, 1, rng));
      store_.add(name + "." + mode_name(m) + ".projection", b.projection.back());
    }
    for (std::size_t m = 0; m < k; ++m) {
      b.tcn2.push_back(make_tcn(c.c_out_t, c.c_out_t, c.kernel, rng));
      register_tcn(store_, name + "." + mode_name(m) + ".tcn2", b.tcn2.back());
      b.norm_gain.push_back(Tensor::full({c.c_out_t}, 1.0, true));
      b.norm_offset.push_back(zeros_param({c.c_out_t}));
      store_.add(name + "." + mode_name(m) + ".norm.gain", b.norm_gain.back());
      store_.add(name + "." + mode_name(m) + ".norm.offset", b.norm_offset.back());
    }
    blocks_.push_back(std::move(b));
  }
  if (c.needs_downscale()) {
    const auto rest = static_cast<std::size_t>(c.post_block_length());
    for (std::size_t m = 0; m < k; ++m) {
      downscale_.push_back(make_tcn(c.c_out_t, c.c_out_t, rest, rng));
      register_tcn(store_, "downscale." + mode_name(m), downscale_.back());
    }
  }
  for (std::size_t m = 0; m < k; ++m) {
    HeadParams h{conv_kernel(c.c_hidden, c.c_out_t, 1, rng), zeros_param({c.c_hidden}),
                 conv_kernel(kChannels, c.c_hidden, 1, rng), zeros_param({kChannels})};
    const std::string hname = "head." + mode_name(m);
    store_.add(hname + ".hidden.weight", h.hidden_weight);
    store_.add(hname + ".hidden.bias", h.hidden_bias);
    store_.add(hname + ".output.weight", h.output_weight);
    store_.add(hname + ".output.bias", h.output_bias);
    heads_.push_back(h);
  }
}

std::vector<Tensor> STMRGNN::block_forward(std::size_t block, const std::vector<Tensor>& inputs, std::size_t batch,
                                           bool training, Rng* rng, ForwardTrace* trace) const {
  const BlockParams& p = blocks_.at(block);
  const std::size_t k = relations_.k();
  if (inputs.size() != k) throw ContractError("block " + std::to_string(block + 1) + ": expected one input per mode");
  try {
    std::vector<Tensor> hc1(k);
    for (std::size_t m = 0; m < k; ++m) hc1[m] = gated_tcn_forward(inputs[m], p.tcn1[m]);
    const std::size_t len = hc1[0].dim(2);
    for (std::size_t m = 1; m < k; ++m) {
      if (hc1[m].dim(2) != len) throw ContractError("modes have different sequence lengths");
    }

    std::vector<Tensor> graph_in(k);
    for (std::size_t n = 0; n < k; ++n) {
      graph_in[n] = hc1[n].reshape({batch, config_.node_counts[n], config_.c_out_t, len});
    }
    if (trace && trace->attention.size() <= block) trace->attention.resize(block + 1);
    if (trace) trace->attention[block].assign(k, Tensor());

    std::vector<Tensor> outputs(k);
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t nm = config_.node_counts[m];
      std::vector<Tensor> parts;
      for (std::size_t n : relations_.sources(m)) {
        const GGCNParams& g = p.ggcn.at({m, n});
        parts.push_back(relu(graph_conv(graph_in[n], relations_.stacked(m, n), g.weight, g.bias)));
      }
      // [batch x R x N_m x c_out_s x len], relations ordered (source mode, dependency).
      const Tensor z = parts.size() == 1 ? parts[0] : concat(parts, 1);
      const std::size_t rel = z.dim(1);
      Tensor weights;
      if (config_.variant == Variant::no_attention) {
        weights = Tensor::full({batch, rel, nm, len}, 1.0);
      } else {
        weights = softmax(relation_scores(z, p.attention[m].weight, p.attention[m].bias), 1);
      }
      if (trace) trace->attention[block][m] = weights.detach();
      const Tensor hs = relation_mix(z, weights).reshape({batch * nm, config_.c_out_s, len});
      const Tensor projected = causal_conv1d(hs, p.projection[m], Tensor());
      const Tensor hrho = add(hc1[m], projected);
      const Tensor hc2 = gated_tcn_forward(hrho, p.tcn2[m]);
      outputs[m] = dropout(layer_norm(hc2, p.norm_gain[m], p.norm_offset[m], 1), config_.dropout, *rng, training);
    }
    return outputs;
  } catch (const ContractError& e) {
    throw ContractError("block " + std::to_string(block + 1) + ": " + e.what());
  }
}

std::vector<Tensor> STMRGNN::forward(const std::vector<Tensor>& inputs, bool training, Rng* rng,
                                     ForwardTrace* trace) const {
  const std::size_t k = relations_.k();
  if (inputs.size() != k) {
    throw ContractError("forward: expected " + std::to_string(k) + " mode inputs, got " +
                        std::to_string(inputs.size()));
  }
  if (training && config_.dropout > 0.0 && rng == nullptr) {
    throw ContractError("forward: training with dropout needs a random generator");
  }
  Rng unused(0);
  Rng& r = rng ? *rng : unused;
  const std::size_t batch = inputs[0].ndim() == 4 ? inputs[0].dim(0) : 0;
  std::vector<Tensor> h(k);
  for (std::size_t m = 0; m < k; ++m) {
    const Shape expected{batch, config_.node_counts[m], kChannels, config_.window};
    if (inputs[m].shape() != expected) {
      throw DimensionError("forward: mode input " + shape_str(inputs[m].shape()) + ", expected " +
                           shape_str(expected));
    }
    const Tensor x = inputs[m].reshape({batch * config_.node_counts[m], kChannels, config_.window});
    h[m] = causal_conv1d(x, lift_weight_[m], lift_bias_[m]);
  }
  for (std::size_t l = 0; l < config_.blocks; ++l) h = block_forward(l, h, batch, training, &r, trace);

  std::vector<Tensor> predictions(k);
  for (std::size_t m = 0; m < k; ++m) {
    Tensor x = h[m];
    if (!downscale_.empty()) x = gated_tcn_forward(x, downscale_[m]);
    const HeadParams& hp = heads_[m];
    Tensor hidden = relu(causal_conv1d(x, hp.hidden_weight, hp.hidden_bias));
    hidden = dropout(hidden, config_.dropout, r, training);
    const Tensor out = causal_conv1d(hidden, hp.output_weight, hp.output_bias);
    predictions[m] = out.reshape({batch, config_.node_counts[m], kChannels});
  }
  return predictions;
}

std::vector<Tensor> STMRGNN::predict_window(const std::vector<Tensor>& window) const {
  NoGradGuard guard;
  std::vector<Tensor> batched;
  for (const auto& w : window) {
    if (w.ndim() != 3) throw DimensionError("predict_window: expected [N x 2 x T], got " + shape_str(w.shape()));
    batched.push_back(w.reshape({1, w.dim(0), w.dim(1), w.dim(2)}));
  }
  auto out = forward(batched, false);
  for (auto& o : out) o = o.reshape({o.dim(1), o.dim(2)});
  return out;
}

STMRGNN build_variant(ModelConfig config, Variant variant, const RelationSet& full_relations, std::uint64_t seed) {
  config.variant = variant;
  RelationSet rel;
  switch (variant) {
    case Variant::full:
    case Variant::no_attention: rel = full_relations.restrict(full_relations.kinds, true); break;
    case Variant::no_intergraph: rel = full_relations.restrict(full_relations.kinds, false); break;
    case Variant::no_geo: rel = full_relations.restrict({Dependency::functional}, true); break;
    case Variant::no_functional: rel = full_relations.restrict({Dependency::geo}, true); break;
  }
  return STMRGNN(std::move(config), std::move(rel), seed);
}

}  // namespace stmrgnn
