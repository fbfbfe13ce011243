#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "model_fixtures.hpp"
#include "stmrgnn/checkpoint.hpp"
#include "stmrgnn/errors.hpp"
#include "stmrgnn/gradcheck.hpp"

using namespace stmrgnn;
using test::bit_equal;
using test::random_tensor;

namespace {

// out[r][i][o] = relu(sum_j sum_c adj[r][i][j] * h[j][c] * w[r][c][o] + b[o])
std::vector<double> ggcn_oracle(const Tensor& h, const Tensor& adj, const Tensor& w, const Tensor& b) {
  const std::size_t u = adj.dim(0), nd = adj.dim(1), ns = adj.dim(2), ci = h.dim(1), co = w.dim(2);
  std::vector<double> out(u * nd * co);
  for (std::size_t r = 0; r < u; ++r)
    for (std::size_t i = 0; i < nd; ++i)
      for (std::size_t o = 0; o < co; ++o) {
        double s = b.data()[o];
        for (std::size_t j = 0; j < ns; ++j)
          for (std::size_t c = 0; c < ci; ++c) s += adj.at({r, i, j}) * h.at({j, c}) * w.at({r, c, o});
        out[(r * nd + i) * co + o] = std::max(0.0, s);
      }
  return out;
}

bool has_param(const STMRGNN& m, const std::string& prefix) {
  for (const auto& n : m.parameters().names())
    if (n.rfind(prefix, 0) == 0) return true;
  return false;
}

}  // namespace

TEST_CASE("ggcn_forward") {
  SUBCASE("hand value") {
    GGCNParams p{Tensor::from({1, 1, 1}, {1}), Tensor::from({1}, {0})};
    Tensor out = ggcn_forward(Tensor::from({2, 1}, {2, 4}), Tensor::from({1, 1, 2}, {0.5, 0.5}), p);
    CHECK(out.shape() == Shape{1, 1, 1});
    CHECK(out.item() == 3.0);
  }
  SUBCASE("zero adjacency yields relu(bias)") {
    Rng rng(1);
    GGCNParams p{random_tensor(rng, {2, 3, 4}), Tensor::from({4}, {0.5, -1.0, 2.0, 0.0})};
    Tensor out = ggcn_forward(random_tensor(rng, {3, 3}), Tensor::zeros({2, 2, 3}), p);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t o = 0; o < 4; ++o) CHECK(out.at({r, i, o}) == std::max(0.0, p.bias.data()[o]));
  }
  SUBCASE("identity propagation") {
    Rng rng(2);
    Tensor h = random_tensor(rng, {3, 2}, 0.0, 1.0);
    GGCNParams p{Tensor::from({1, 2, 2}, {1, 0, 0, 1}), Tensor::zeros({2})};
    Tensor eye = Tensor::from({1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor out = ggcn_forward(h, eye, p);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out.data()[i] == h.data()[i]);
  }
  SUBCASE("node-count mismatch") {
    GGCNParams p{Tensor::zeros({1, 2, 2}), Tensor::zeros({2})};
    CHECK_THROWS_AS(ggcn_forward(Tensor::zeros({3, 2}), Tensor::zeros({1, 2, 4}), p), ContractError);
  }
  SUBCASE("permuting source nodes with adjacency columns") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      const std::size_t ns = 2 + rng.index(4), nd = 1 + rng.index(4);
      Tensor h = random_tensor(rng, {ns, 3});
      Tensor adj = random_tensor(rng, {2, nd, ns}, 0, 1);
      GGCNParams p{random_tensor(rng, {2, 3, 2}), random_tensor(rng, {2})};
      std::vector<std::size_t> perm(ns);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(perm.begin(), perm.end());
      Tensor hp = Tensor::zeros({ns, 3}), ap = Tensor::zeros({2, nd, ns});
      for (std::size_t j = 0; j < ns; ++j) {
        for (std::size_t c = 0; c < 3; ++c) hp.mutable_data()[j * 3 + c] = h.at({perm[j], c});
        for (std::size_t r = 0; r < 2; ++r)
          for (std::size_t i = 0; i < nd; ++i) ap.mutable_data()[(r * nd + i) * ns + j] = adj.at({r, i, perm[j]});
      }
      Tensor a = ggcn_forward(h, adj, p), b = ggcn_forward(hp, ap, p);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-12);
    }
  }
}

TEST_CASE("ggcn_forward matches a brute-force oracle") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const std::size_t u = 1 + rng.index(3), nd = 1 + rng.index(5), ns = 1 + rng.index(5);
    const std::size_t ci = 1 + rng.index(4), co = 1 + rng.index(4);
    Tensor h = random_tensor(rng, {ns, ci});
    Tensor adj = random_tensor(rng, {u, nd, ns}, 0, 1);
    GGCNParams p{random_tensor(rng, {u, ci, co}), random_tensor(rng, {co})};
    Tensor out = ggcn_forward(h, adj, p);
    const auto want = ggcn_oracle(h, adj, p.weight, p.bias);
    REQUIRE(out.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(out.data()[i] - want[i]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("relation_attention") {
  SUBCASE("single relation") {
    Rng rng(3);
    AttentionParams p{random_tensor(rng, {2, 1}), random_tensor(rng, {1})};
    CHECK(relation_attention(random_tensor(rng, {1, 2}), p).item() == 1.0);
  }
  SUBCASE("zero weights are uniform") {
    Rng rng(4);
    AttentionParams p{Tensor::zeros({12, 1}), Tensor::from({1}, {0.3})};
    Tensor a = relation_attention(random_tensor(rng, {4, 3}), p);
    for (double v : a.data()) CHECK(std::abs(v - 0.25) < 1e-15);
  }
  SUBCASE("crafted logits") {
    // z_r = e_r in R^4 with W_a = [0, ln 3, 0, 0] on the matching slot
    std::vector<double> z(16, 0.0), w(16, 0.0);
    for (std::size_t r = 0; r < 4; ++r) z[r * 4 + r] = 1.0;
    w[1 * 4 + 1] = std::log(3.0);
    Tensor a = relation_attention(Tensor::from({4, 4}, z), AttentionParams{Tensor::from({16, 1}, w), Tensor::zeros({1})});
    const double want[] = {1.0 / 6, 0.5, 1.0 / 6, 1.0 / 6};
    for (std::size_t r = 0; r < 4; ++r) CHECK(std::abs(a.data()[r] - want[r]) < 1e-12);
  }
  SUBCASE("dimension mismatch") {
    AttentionParams p{Tensor::zeros({5, 1}), Tensor::zeros({1})};
    CHECK_THROWS_AS(relation_attention(Tensor::zeros({2, 3}), p), ContractError);
  }
}

TEST_CASE("relation_aggregate") {
  Tensor z = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor one_hot = relation_aggregate(z, Tensor::from({3}, {0, 1, 0}));
  CHECK(one_hot.data()[0] == 3.0);
  CHECK(one_hot.data()[1] == 4.0);
  Tensor cancel = relation_aggregate(Tensor::from({2, 2}, {1.5, -2, -1.5, 2}), Tensor::from({2}, {0.5, 0.5}));
  CHECK(cancel.data()[0] == 0.0);
  CHECK(cancel.data()[1] == 0.0);
  Tensor mixed = relation_aggregate(Tensor::from({2, 2}, {4, 0, 0, 4}), Tensor::from({2}, {0.25, 0.75}));
  CHECK(mixed.data()[0] == 1.0);
  CHECK(mixed.data()[1] == 3.0);
  CHECK_THROWS_AS(relation_aggregate(z, Tensor::from({2}, {0.5, 0.5})), ContractError);
}

TEST_CASE("gated_tcn_forward") {
  Rng rng(6);
  Tensor h = random_tensor(rng, {2, 3, 5});
  TCNParams p{random_tensor(rng, {4, 3, 2}), random_tensor(rng, {4}), Tensor::zeros({4, 3, 2}), Tensor::full({4}, 50.0)};
  const Tensor info = causal_conv1d(h, p.info_weight, p.info_bias);
  SUBCASE("open gate") {
    Tensor y = gated_tcn_forward(h, p);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y.data()[i] - info.data()[i]) < 1e-12);
  }
  SUBCASE("half gate") {
    p.gate_bias = Tensor::zeros({4});
    Tensor y = gated_tcn_forward(h, p);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == 0.5 * info.data()[i]);
  }
  SUBCASE("hand value") {
    TCNParams s{Tensor::from({1, 1, 2}, {1, 1}), Tensor::zeros({1}), Tensor::zeros({1, 1, 2}), Tensor::full({1}, 50.0)};
    Tensor y = gated_tcn_forward(Tensor::from({1, 1, 3}, {1, 2, 3}), s);
    CHECK(std::abs(y.data()[0] - 3.0) < 1e-12);
    CHECK(std::abs(y.data()[1] - 5.0) < 1e-12);
  }
  SUBCASE("too short") {
    CHECK_THROWS_AS(gated_tcn_forward(Tensor::zeros({1, 3, 1}), p), SequenceTooShortError);
  }
}

TEST_CASE("model configuration") {
  ModelConfig c = test::small_config({3, 2});
  CHECK(c.post_block_length() == 2);
  CHECK(c.needs_downscale());
  c.window = 4;
  CHECK(c.post_block_length() == 0);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.window = 5;
  CHECK_FALSE(c.needs_downscale());
  CHECK_NOTHROW(c.validate());
  c.c_hidden = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = test::small_config({3, 2});
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  auto toy = test::toy_relations({3, 2}, 1);
  ModelConfig bad = test::small_config({3, 2});
  bad.window = 4;
  CHECK_THROWS_AS(build_variant(bad, Variant::full, toy.relations, 1), ConfigError);
  CHECK_THROWS_AS(parse_variant("no_such_variant"), ContractError);
}

TEST_CASE("block forward") {
  const std::vector<std::size_t> counts{3, 2};
  auto toy = test::toy_relations(counts, 7);
  ModelConfig c = test::small_config(counts);
  c.c_in_t = 4;
  STMRGNN model = build_variant(c, Variant::full, toy.relations, 3);
  Rng rng(9);
  std::vector<Tensor> in{random_tensor(rng, {3, 4, 6}), random_tensor(rng, {2, 4, 6})};

  SUBCASE("shapes and length") {
    auto out = model.block_forward(0, in, 1, false, nullptr, nullptr);
    CHECK(out[0].shape() == Shape{3, 4, 4});
    CHECK(out[1].shape() == Shape{2, 4, 4});
  }
  SUBCASE("zero graph messages leave the residual path") {
    BlockParams& b = model.block(0);
    for (auto& [key, g] : b.ggcn) {
      for (double& v : g.weight.mutable_data()) v = 0.0;
      for (double& v : g.bias.mutable_data()) v = 0.0;
    }
    auto out = model.block_forward(0, in, 1, false, nullptr, nullptr);
    for (std::size_t m = 0; m < 2; ++m) {
      Tensor want = layer_norm(gated_tcn_forward(gated_tcn_forward(in[m], b.tcn1[m]), b.tcn2[m]), b.norm_gain[m],
                               b.norm_offset[m], 1);
      REQUIRE(out[m].shape() == want.shape());
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(out[m].data()[i] - want.data()[i]) < 1e-12);
    }
  }
  SUBCASE("errors carry the block index") {
    std::vector<Tensor> bad{random_tensor(rng, {3, 4, 6}), random_tensor(rng, {2, 4, 5})};
    try {
      model.block_forward(1, bad, 1, false, nullptr, nullptr);
      FAIL("expected ContractError");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("block 2") != std::string::npos);
    }
  }
}

TEST_CASE("model forward") {
  SUBCASE("T=6, L=2, K_t=2") {
    const std::vector<std::size_t> counts{4, 3};
    auto toy = test::toy_relations(counts, 2);
    STMRGNN model = build_variant(test::small_config(counts), Variant::full, toy.relations, 5);
    CHECK(model.config().post_block_length() == 2);
    CHECK(has_param(model, "downscale.mode1"));
    Rng rng(1);
    auto in = test::random_inputs(rng, counts, 2);
    ForwardTrace trace;
    auto out = model.forward(in, false, nullptr, &trace);
    CHECK(out[0].shape() == Shape{2, 4, 2});
    CHECK(out[1].shape() == Shape{2, 3, 2});
    CHECK(trace.attention[0][0].dim(3) == 5);
    CHECK(trace.attention[1][0].dim(3) == 3);
  }
  SUBCASE("without leftover length there is no downscale") {
    const std::vector<std::size_t> counts{2, 2};
    auto toy = test::toy_relations(counts, 2);
    ModelConfig c = test::small_config(counts);
    c.window = 5;
    STMRGNN model = build_variant(c, Variant::full, toy.relations, 5);
    CHECK_FALSE(has_param(model, "downscale"));
    Rng rng(1);
    CHECK(model.forward(test::random_inputs(rng, counts, 1, 5), false)[0].shape() == Shape{1, 2, 2});
  }
  SUBCASE("large mode sizes") {
    const std::vector<std::size_t> counts{136, 63};
    auto toy = test::toy_relations(counts, 4);
    ModelConfig c;
    c.node_counts = counts;
    STMRGNN model = build_variant(c, Variant::full, toy.relations, 1);
    Rng rng(2);
    std::vector<Tensor> window{random_tensor(rng, {136, 2, 6}, 0, 1), random_tensor(rng, {63, 2, 6}, 0, 1)};
    auto out = model.predict_window(window);
    CHECK(out[0].shape() == Shape{136, 2});
    CHECK(out[1].shape() == Shape{63, 2});
  }
  SUBCASE("all-zero parameters predict the head bias") {
    const std::vector<std::size_t> counts{3, 2};
    auto toy = test::toy_relations(counts, 8);
    STMRGNN model = build_variant(test::small_config(counts), Variant::full, toy.relations, 5);
    for (auto& t : model.parameters().tensors())
      for (double& v : t.mutable_data()) v = 0.0;
    model.head(0).output_bias.mutable_data()[0] = 1.25;
    model.head(0).output_bias.mutable_data()[1] = -0.5;
    model.head(1).output_bias.mutable_data()[1] = 2.0;
    Rng rng(3);
    auto out = model.forward(test::random_inputs(rng, counts, 2), false);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out[0].at({b, i, 0}) == 1.25);
        CHECK(out[0].at({b, i, 1}) == -0.5);
      }
    for (std::size_t i = 0; i < 2; ++i) CHECK(out[1].at({0, i, 1}) == 2.0);
  }
  SUBCASE("input shape is checked") {
    const std::vector<std::size_t> counts{3, 2};
    auto toy = test::toy_relations(counts, 8);
    STMRGNN model = build_variant(test::small_config(counts), Variant::full, toy.relations, 5);
    Rng rng(3);
    CHECK_THROWS_AS(model.forward(test::random_inputs(rng, counts, 1, 7), false), DimensionError);
    CHECK_THROWS_AS(model.forward({random_tensor(rng, {1, 3, 2, 6})}, false), ContractError);
  }
  SUBCASE("dropout needs a generator in training mode") {
    const std::vector<std::size_t> counts{3, 2};
    auto toy = test::toy_relations(counts, 8);
    ModelConfig c = test::small_config(counts);
    c.dropout = 0.3;
    STMRGNN model = build_variant(c, Variant::full, toy.relations, 5);
    Rng rng(3);
    auto in = test::random_inputs(rng, counts, 2);
    CHECK_THROWS_AS(model.forward(in, true), ContractError);
    Rng d1(10), d2(10), d3(11);
    auto a = model.forward(in, true, &d1), b = model.forward(in, true, &d2), e = model.forward(in, true, &d3);
    CHECK(bit_equal(a[0], b[0]));
    CHECK_FALSE(bit_equal(a[0], e[0]));
    CHECK(bit_equal(model.forward(in, false)[0], model.forward(in, false)[0]));
  }
}

TEST_CASE("variants") {
  const std::vector<std::size_t> counts{3, 2};
  auto toy = test::toy_relations(counts, 12);
  Rng rng(4);
  auto in = test::random_inputs(rng, counts, 2);
  auto attention_len = [&](Variant v) {
    STMRGNN model = build_variant(test::small_config(counts), v, toy.relations, 1);
    ForwardTrace trace;
    model.forward(in, false, nullptr, &trace);
    return trace.attention[0][0].dim(1);
  };
  CHECK(attention_len(Variant::full) == 4);
  CHECK(attention_len(Variant::no_intergraph) == 2);
  CHECK(attention_len(Variant::no_geo) == 2);
  CHECK(attention_len(Variant::no_functional) == 2);
  CHECK(attention_len(Variant::no_attention) == 4);

  SUBCASE("no_attention sums relation outputs") {
    auto three = test::toy_relations({2, 2, 2}, 5);
    STMRGNN model = build_variant(test::small_config({2, 2, 2}), Variant::no_geo, three.relations, 1);
    CHECK(model.relations_per_node(0) == 3);
    STMRGNN plain = build_variant(test::small_config({2, 2, 2}), Variant::no_attention, three.relations, 1);
    CHECK_FALSE(has_param(plain, "block1.mode1.attention"));
    Rng r2(8);
    ForwardTrace trace;
    plain.forward(test::random_inputs(r2, {2, 2, 2}, 1), false, nullptr, &trace);
    for (double w : trace.attention[0][0].data()) CHECK(w == 1.0);
    Tensor z = random_tensor(r2, {3, 4});
    Tensor s = relation_aggregate(z, Tensor::full({3}, 1.0));
    for (std::size_t c = 0; c < 4; ++c) CHECK(s.data()[c] == z.at({0, c}) + z.at({1, c}) + z.at({2, c}));
  }
}

TEST_CASE("attention weights lie on the simplex") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::vector<std::size_t> counts{2 + rng.index(4), 2 + rng.index(4)};
    auto toy = test::toy_relations(counts, seed + 100);
    ModelConfig c = test::small_config(counts);
    STMRGNN model = build_variant(c, seed % 2 ? Variant::full : Variant::no_intergraph, toy.relations, seed);
    // spread the logits so the softmax is far from uniform
    for (std::size_t l = 0; l < c.blocks; ++l)
      for (auto& a : model.block(l).attention)
        for (double& v : a.weight.mutable_data()) v *= 20.0;
    ForwardTrace trace;
    model.forward(test::random_inputs(rng, counts, 2), false, nullptr, &trace);
    for (const auto& per_block : trace.attention) {
      for (const Tensor& a : per_block) {
        const std::size_t B = a.dim(0), R = a.dim(1), N = a.dim(2), L = a.dim(3);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t t = 0; t < L; ++t) {
              double s = 0.0;
              for (std::size_t r = 0; r < R; ++r) {
                const double w = a.at({b, r, n, t});
                CHECK(w >= 0.0);
                s += w;
              }
              CHECK(std::abs(s - 1.0) < 1e-9);
            }
      }
    }
  }
}

TEST_CASE("no_intergraph keeps modes independent") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::vector<std::size_t> counts{3, 4};
    auto toy = test::toy_relations(counts, seed);
    STMRGNN model = build_variant(test::small_config(counts), Variant::no_intergraph, toy.relations, seed);
    Rng rng(seed);
    auto in = test::random_inputs(rng, counts, 2);
    auto base = model.forward(in, false);
    for (std::size_t m = 0; m < 2; ++m) {
      auto changed = in;
      changed[m] = in[m].clone();
      for (double& v : changed[m].mutable_data()) v += rng.uniform(-1, 1);
      auto out = model.forward(changed, false);
      CHECK(bit_equal(out[1 - m], base[1 - m]));
      CHECK_FALSE(bit_equal(out[m], base[m]));
    }
  }
}

TEST_CASE("node permutation equivariance") {
  const std::vector<std::size_t> counts{4, 3};
  auto toy = test::toy_relations(counts, 31);
  STMRGNN model = build_variant(test::small_config(counts), Variant::full, toy.relations, 2);
  Rng rng(5);
  auto in = test::random_inputs(rng, counts, 1);
  auto base = model.forward(in, false);

  // reorder the nodes of mode 1 in the node set, the panel and the input
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto sets = toy.sets;
  auto panels = toy.panels;
  Tensor pin = in[0].clone();
  for (std::size_t j = 0; j < 4; ++j) {
    sets[0].node_ids[j] = toy.sets[0].node_ids[perm[j]];
    sets[0].coordinates[j] = toy.sets[0].coordinates[perm[j]];
    panels[0].node_ids[j] = toy.panels[0].node_ids[perm[j]];
    for (std::size_t t = 0; t < panels[0].steps(); ++t)
      for (std::size_t ch = 0; ch < 2; ++ch) panels[0].at(t, j, ch) = toy.panels[0].at(t, perm[j], ch);
    for (std::size_t v = 0; v < 12; ++v) pin.mutable_data()[j * 12 + v] = in[0].data()[perm[j] * 12 + v];
  }
  RelationSet rel = assemble_relations(sets, panels, AssembleOptions{});
  STMRGNN permuted = build_variant(test::small_config(counts), Variant::full, rel, 2);
  auto out = permuted.forward({pin, in[1]}, false);
  for (std::size_t i = 0; i < 3 * 2; ++i) CHECK(std::abs(out[1].data()[i] - base[1].data()[i]) < 1e-10);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t ch = 0; ch < 2; ++ch)
      CHECK(std::abs(out[0].at({0, j, ch}) - base[0].at({0, perm[j], ch})) < 1e-10);
}

TEST_CASE("end-to-end gradients of a toy model") {
  const std::vector<std::size_t> counts{3, 2};
  auto toy = test::toy_relations(counts, 3);
  for (Variant v : {Variant::full, Variant::no_attention}) {
    STMRGNN model = build_variant(test::small_config(counts), v, toy.relations, 11);
    Rng rng(7);
    // Zero-initialized biases put nodes with all-zero adjacency rows exactly on
    // the ReLU kink; move them off it.
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
      const std::string& name = model.parameters().names()[i];
      if (name.size() > 4 && name.compare(name.size() - 4, 4, "bias") == 0)
        for (double& b : model.parameters().tensors()[i].mutable_data()) b = rng.uniform(-0.2, 0.2);
    }
    auto in = test::random_inputs(rng, counts, 2);
    std::vector<Tensor> targets{random_tensor(rng, {2, 3, 2}, 0, 1), random_tensor(rng, {2, 2, 2}, 0, 1)};
    auto loss = [&] {
      auto out = model.forward(in, false);
      return add(sum(abs(sub(out[0], targets[0]))), sum(abs(sub(out[1], targets[1]))));
    };
    auto r = grad_check(loss, model.parameters().tensors(), 1e-6);
    INFO(to_string(v) << " worst " << r.max_relative_error);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("checkpoint round trip") {
  const std::vector<std::size_t> counts{3, 2};
  auto toy = test::toy_relations(counts, 3);
  STMRGNN model = build_variant(test::small_config(counts), Variant::full, toy.relations, 11);
  for (auto& t : model.parameters().tensors())
    for (double& v : t.mutable_data()) v = v * 1.0000001 + 1e-17;
  const auto dir = test::scratch_dir("checkpoint");
  save_checkpoint(dir / "m.ckpt", model);
  CHECK(serialize_checkpoint(model) == test::read_file(dir / "m.ckpt"));

  STMRGNN fresh = build_variant(test::small_config(counts), Variant::full, toy.relations, 99);
  load_checkpoint(dir / "m.ckpt", fresh);
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    CHECK(bit_equal(model.parameters().tensors()[i], fresh.parameters().tensors()[i]));
  Rng rng(2);
  auto in = test::random_inputs(rng, counts, 3);
  auto a = model.forward(in, false), b = fresh.forward(in, false);
  CHECK(bit_equal(a[0], b[0]));
  CHECK(bit_equal(a[1], b[1]));

  SUBCASE("corruption") {
    std::string text = test::read_file(dir / "m.ckpt");
    const auto pos = text.find("param ");
    text[text.find(' ', text.find(' ', pos + 6) + 1) + 3] ^= 1;
    test::write_file(dir / "bad.ckpt", text);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt", fresh), CheckpointError);
    test::write_file(dir / "short.ckpt", text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt", fresh), CheckpointError);
    test::write_file(dir / "junk.ckpt", "hello\n");
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt", fresh), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt", fresh), CheckpointError);
  }
  SUBCASE("incompatible model") {
    STMRGNN other = build_variant(test::small_config(counts), Variant::no_intergraph, toy.relations, 11);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", other), IncompatibleCheckpointError);
    ModelConfig wide = test::small_config(counts);
    wide.c_hidden = 7;
    STMRGNN wider = build_variant(wide, Variant::full, toy.relations, 11);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", wider), IncompatibleCheckpointError);
  }
}
