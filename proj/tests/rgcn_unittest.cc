#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gcls/error.hpp"
#include "gcls/rgcn.hpp"
#include "test_support.hh"

namespace gcls {
namespace {

using ad::Tensor;
using testing::random_graph;
using testing::random_params;
using testing::random_tensor;

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  EXPECT_EQ(a.size(), b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no gcls::Error thrown";
  return ErrorCode::BadConfig;
}

TEST(RgcnLayer, MatchesDenseOracleOnRandomGraphs) {
  Rng rng(21);
  const EncoderConfig config;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nodes = 1 + rng.index(25), edges = rng.index(4 * nodes), warps = 1 + rng.index(3);
    const auto g = random_graph(rng, nodes, edges, warps);
    const auto params = random_params(config, 100 + trial);
    const auto prepared = PreparedGraph::from(g);
    Tensor dense = random_tensor(rng, g.node_count(), kFeatureDim);

    ad::Tape tape(false);
    const auto bound = bind(tape, params);
    ad::Var h = tape.constant(dense);
    for (std::size_t k = 0; k < config.n_layers; ++k) {
      h = rgcn_layer(h, prepared, bound.layers[k], bound.dropout, k + 1 == config.n_layers);
      dense = testing::dense_rgcn_layer(dense, g, params.layers[k]);
      EXPECT_LT(max_abs_diff(h.value(), dense), 1e-10) << "trial " << trial << " layer " << k;
    }
  }
}

TEST(RgcnParams, BasisSharingCount) {
  const auto p = init_params(EncoderConfig{}, 0);
  // 64->128, 128->128, 128->256 with 2 bases and 4 relations, plus the 256->128->64 head.
  EXPECT_EQ(p.parameter_count(), 214232u);
  EXPECT_EQ(unfactored_parameter_count(EncoderConfig{}), 328896u);
  EXPECT_LT(p.parameter_count(), unfactored_parameter_count(EncoderConfig{}));
}

TEST(RgcnParams, InitIsSeededAndBounded) {
  const auto a = init_params(EncoderConfig{}, 5), b = init_params(EncoderConfig{}, 5), c = init_params(EncoderConfig{}, 6);
  EXPECT_EQ(a.tensors().size(), b.tensors().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.tensors().size(); ++i) {
    EXPECT_EQ(*a.tensors()[i].second, *b.tensors()[i].second);
    any_diff |= !(*a.tensors()[i].second == *c.tensors()[i].second);
  }
  EXPECT_TRUE(any_diff);
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(EncoderConfig{}.layer_in(k)));
    for (const auto& base : a.layers[k].bases)
      for (double x : base.values) EXPECT_LE(std::abs(x), bound);
    for (double x : a.layers[k].ln_gain.values) EXPECT_EQ(x, 1.0);
    for (double x : a.layers[k].ln_bias.values) EXPECT_EQ(x, 0.0);
  }
}

TEST(RgcnParams, RelationWeightIsBasisCombination) {
  const auto p = random_params(EncoderConfig{}, 3);
  const auto w = p.relation_weight(1, 2);
  const auto& l = p.layers[1];
  for (std::size_t i = 0; i < w.size(); i += 97) {
    EXPECT_NEAR(w.values[i], l.coeffs(2, 0) * l.bases[0].values[i] + l.coeffs(2, 1) * l.bases[1].values[i], 1e-15);
  }
}

TEST(RgcnParams, FixedDimensionsAreValidated) {
  EncoderConfig c;
  c.out_dim = 128;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::BadConfig);
  c = {};
  c.n_relations = 3;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::BadConfig);
  c = {};
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<EncoderConfig>().hidden_dim, c.hidden_dim);
}

TEST(Encoder, IsolatedNodeUsesOnlySelfLoop) {
  testing::GraphBuilder b;
  b.instr(1, 0x100);
  const auto g = b.finish();
  const auto params = random_params(EncoderConfig{}, 4);
  Rng rng(1);
  const Tensor x = random_tensor(rng, 1, kFeatureDim);
  // With no neighbours only W_0 contributes, so relation weights are irrelevant.
  auto scrambled = params;
  for (auto& l : scrambled.layers)
    for (auto& base : l.bases)
      for (auto& v : base.values) v = 100.0;
  EXPECT_EQ(embed_kernel({g, x}, params), embed_kernel({g, x}, scrambled));
  EXPECT_EQ(embed_kernel({g, x}, params).size(), 256u);
}

TEST(Encoder, ZeroWeightsGiveZeroEmbedding) {
  Rng rng(2);
  const auto g = random_graph(rng, 12, 30, 2);
  auto params = init_params(EncoderConfig{}, 0);
  for (auto& [name, t] : params.tensors()) {
    if (name.find("ln_gain") == std::string::npos) std::fill(t->values.begin(), t->values.end(), 0.0);
  }
  const auto z = embed_kernel({g, random_tensor(rng, g.node_count(), kFeatureDim)}, params);
  for (double v : z) EXPECT_EQ(v, 0.0);

  ad::Tape tape(false);
  const auto bound = bind(tape, params);
  const auto p = project(tape.constant(random_tensor(rng, 3, 256)), bound);
  EXPECT_EQ(p.value(), Tensor(3, 64));
}

// Relabels the nodes of every warp by a random in-warp permutation.
GraphView permute_within_warps(const GraphView& v, Rng& rng) {
  std::vector<std::uint32_t> perm(v.graph.node_count());
  std::iota(perm.begin(), perm.end(), 0u);
  for (const auto& s : v.graph.warp_spans) std::shuffle(perm.begin() + s.begin, perm.begin() + s.end, rng.engine());
  GraphView out = v;
  for (std::size_t old = 0; old < perm.size(); ++old) {
    out.graph.nodes[perm[old]] = v.graph.nodes[old];
    std::copy(v.features.row(old), v.features.row(old) + v.features.cols, out.features.row(perm[old]));
  }
  for (auto& e : out.graph.edges) e = {perm[e.src], perm[e.dst], e.relation};
  std::shuffle(out.graph.edges.begin(), out.graph.edges.end(), rng.engine());
  return out;
}

TEST(Encoder, InvariantToNodeAndEdgeOrder) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = random_graph(rng, 15, 40, 3);
    const GraphView v{g, random_tensor(rng, g.node_count(), kFeatureDim)};
    const auto params = random_params(EncoderConfig{}, trial);
    EXPECT_LT(max_abs_diff(embed_kernel(v, params), embed_kernel(permute_within_warps(v, rng), params)), 1e-10);
  }
}

TEST(Encoder, InvariantToWarpOrderAndMatchesPerWarpPath) {
  Rng rng(4);
  const auto g = random_graph(rng, 9, 25, 4);
  const Tensor x = random_tensor(rng, g.node_count(), kFeatureDim);
  const auto params = random_params(EncoderConfig{}, 8);
  const auto whole = embed_kernel({g, x}, params);

  auto parts = split_by_warp(g);
  ASSERT_EQ(parts.size(), 4u);
  std::vector<std::size_t> order{2, 0, 3, 1};
  ad::Tape tape(false);
  const auto bound = bind(tape, params);
  std::vector<ad::Var> warp_z;
  std::vector<TraceGraph> reordered;
  Tensor rx(0, kFeatureDim);
  for (auto w : order) {
    const auto& span = g.warp_spans[w];
    Tensor xw(span.size(), kFeatureDim);
    std::copy(x.row(span.begin), x.row(span.end), xw.values.begin());
    rx.values.insert(rx.values.end(), xw.values.begin(), xw.values.end());
    rx.rows += xw.rows;
    warp_z.push_back(encode_warp(tape.constant(xw), PreparedGraph::from(parts[w]), bound));
    reordered.push_back(parts[w]);
  }
  EXPECT_LT(max_abs_diff(encode_kernel(warp_z).value().values, whole), 1e-12);
  EXPECT_LT(max_abs_diff(embed_kernel({merge_kernel_graph(reordered), rx}, params), whole), 1e-12);
}

TEST(Encoder, EmptyInputsAreRejected) {
  const auto params = init_params(EncoderConfig{}, 0);
  EXPECT_EQ(code_of([&] { embed_kernel({TraceGraph{}, Tensor(0, kFeatureDim)}, params); }), ErrorCode::NoWarps);
  ad::Tape tape(false);
  const auto bound = bind(tape, params);
  EXPECT_EQ(code_of([&] { encode_warp(tape.constant(Tensor(0, kFeatureDim)), PreparedGraph{}, bound); }),
            ErrorCode::EmptyGraph);
  EXPECT_EQ(code_of([&] { encode_kernel(std::span<const ad::Var>{}); }), ErrorCode::NoWarps);
  testing::GraphBuilder b;
  b.instr(1, 0);
  EXPECT_EQ(code_of([&] { embed_kernel({b.finish(), Tensor(2, kFeatureDim)}, params); }), ErrorCode::ShapeMismatch);
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
  const auto check = testing::encoder_gradient_check(1);
  EXPECT_GT(check.result.checked, 1000u);
  EXPECT_LT(check.result.max_rel_error, 1e-4) << check.result.worst;
}

TEST(Encoder, BindAccumulatesIntoGradSink) {
  Rng rng(5);
  const auto g = random_graph(rng, 8, 20, 1);
  const auto params = random_params(EncoderConfig{}, 1);
  auto grads = params.zeros_like();
  for (int pass = 0; pass < 2; ++pass) {
    ad::Tape tape(false);
    const auto bound = bind(tape, params, &grads);
    tape.backward(ad::sum(project(encode_kernel(tape.constant(random_tensor(rng, 8, kFeatureDim)),
                                                PreparedGraph::from(g), bound),
                                  bound)));
  }
  // d(sum z)/d b2 is one per output per pass.
  for (double v : grads.proj_b2.values) EXPECT_DOUBLE_EQ(v, 2.0);
}

}  // namespace
}  // namespace gcls
