#pragma once

// Spatiotemporal multi-relational graph network.
//
// Per mode, demand windows [batch x N x 2 x T] are lifted to c_in_t channels by
// a 1x1 convolution and passed through L blocks. A block runs a gated TCN per
// mode, fuses all modes with the multi-relational graph layer at every time
// step (graph convolution per relation, relation attention, weighted sum),
// projects the result back to c_out_t channels, adds it to the TCN output,
// and applies a second gated TCN followed by layer normalization over
// channels. Each TCN shortens the sequence by K_t - 1; a final gated TCN
// collapses any remaining length to one step before the per-mode output head.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "stmrgnn/graph.hpp"
#include "stmrgnn/random.hpp"
#include "stmrgnn/tensor.hpp"

namespace stmrgnn {

enum class Variant { full, no_intergraph, no_geo, no_functional, no_attention };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

struct ModelConfig {
  std::size_t blocks = 2;       // L
  std::size_t kernel = 2;       // K_t
  std::size_t c_in_t = 16;
  std::size_t c_out_t = 64;
  std::size_t c_in_s = 64;
  std::size_t c_out_s = 16;
  std::size_t c_hidden = 128;   // output head
  std::size_t window = 6;       // T
  double dropout = 0.3;
  std::vector<std::size_t> node_counts;
  Variant variant = Variant::full;

  // Sequence length left after the blocks: T - L * (K_t - 1) * 2.
  long long post_block_length() const;
  bool needs_downscale() const { return post_block_length() > 1; }
  // Throws ConfigError.
  void validate() const;
};

struct TCNParams {
  Tensor info_weight;  // [c_out x c_in x K]
  Tensor info_bias;    // [c_out]
  Tensor gate_weight;
  Tensor gate_bias;
};

struct GGCNParams {
  Tensor weight;  // [u x c_in_s x c_out_s]
  Tensor bias;    // [c_out_s]
};

struct AttentionParams {
  Tensor weight;  // [(relations * c_out_s) x 1]
  Tensor bias;    // [1]
};

struct BlockParams {
  std::vector<TCNParams> tcn1;                                   // per mode
  std::map<std::pair<std::size_t, std::size_t>, GGCNParams> ggcn;  // (target, source)
  std::vector<AttentionParams> attention;                        // per mode, empty for no_attention
  std::vector<Tensor> projection;                                // per mode, [c_out_t x c_out_s x 1]
  std::vector<TCNParams> tcn2;
  std::vector<Tensor> norm_gain;                                 // per mode, [c_out_t]
  std::vector<Tensor> norm_offset;
};

struct HeadParams {
  Tensor hidden_weight;  // [c_h x c_out_t x 1]
  Tensor hidden_bias;
  Tensor output_weight;  // [2 x c_h x 1]
  Tensor output_bias;
};

// Named parameter handles in registration order.
class ParameterStore {
 public:
  void add(std::string name, const Tensor& t);
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  // Deep copy of all values, for best-epoch snapshots.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

// Attention weights recorded during a forward pass: [block][mode] -> [batch x R x N x time].
struct ForwardTrace {
  std::vector<std::vector<Tensor>> attention;
};

// ---------------------------------------------------------------------------
// Building blocks with per-node / per-step shapes.

// ReLU(adj[r] . features . W[r] + b) for every dependency r.
// features: [N_src x c_in], adj: [u x N_dst x N_src] -> [u x N_dst x c_out].
Tensor ggcn_forward(const Tensor& features, const Tensor& adj, const GGCNParams& params);

// softmax(concat(z) . W_a + b_a), where the c_out slice of W_a at relation r
// scores relation r. z: [R x c] -> weights [R].
Tensor relation_attention(const Tensor& z, const AttentionParams& params);

// sum_r a[r] * z[r]. z: [R x c], a: [R] -> [c].
Tensor relation_aggregate(const Tensor& z, const Tensor& weights);

// (W1 * h + b1) . sigmoid(W2 * h + b2). h: [N x c_in x time].
Tensor gated_tcn_forward(const Tensor& h, const TCNParams& params);

// ---------------------------------------------------------------------------

class STMRGNN {
 public:
  // `relations` must already be restricted to the variant (see build_variant).
  STMRGNN(ModelConfig config, RelationSet relations, std::uint64_t seed);
  // Parameter handles are shared between the store and the typed views, so a
  // copy would alias; move only.
  STMRGNN(const STMRGNN&) = delete;
  STMRGNN& operator=(const STMRGNN&) = delete;
  STMRGNN(STMRGNN&&) = default;
  STMRGNN& operator=(STMRGNN&&) = default;

  const ModelConfig& config() const { return config_; }
  const RelationSet& relations() const { return relations_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  std::size_t relations_per_node(std::size_t mode) const { return relations_.relations_per_node(mode); }

  // inputs[m]: [batch x N_m x 2 x T] -> predictions[m]: [batch x N_m x 2].
  // `rng` drives dropout and is required when training with dropout > 0.
  std::vector<Tensor> forward(const std::vector<Tensor>& inputs, bool training, Rng* rng = nullptr,
                              ForwardTrace* trace = nullptr) const;

  // One block on lifted/previous features; inputs[m]: [batch*N_m x c x time].
  std::vector<Tensor> block_forward(std::size_t block, const std::vector<Tensor>& inputs, std::size_t batch,
                                    bool training, Rng* rng, ForwardTrace* trace) const;

  // Single window convenience: inputs[m] [N_m x 2 x T] -> [N_m x 2], evaluation mode.
  std::vector<Tensor> predict_window(const std::vector<Tensor>& window) const;

  const BlockParams& block(std::size_t i) const { return blocks_.at(i); }
  BlockParams& block(std::size_t i) { return blocks_.at(i); }
  HeadParams& head(std::size_t mode) { return heads_.at(mode); }

 private:
  void init_parameters(std::uint64_t seed);

  ModelConfig config_;
  RelationSet relations_;
  ParameterStore store_;
  std::vector<Tensor> lift_weight_;  // per mode, [c_in_t x 2 x 1]
  std::vector<Tensor> lift_bias_;
  std::vector<BlockParams> blocks_;
  std::vector<TCNParams> downscale_;
  std::vector<HeadParams> heads_;
};

// Restricts the full relation set to what `variant` keeps and builds the model.
STMRGNN build_variant(ModelConfig config, Variant variant, const RelationSet& full_relations, std::uint64_t seed);

}  // namespace stmrgnn
