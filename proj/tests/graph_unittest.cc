#include <gtest/gtest.h>

#include "gcls/graph.hpp"
#include "gcls/registry.hpp"
#include "test_support.hh"

namespace gcls {
namespace {

using testing::GraphBuilder;
using testing::isomorphic;
using testing::record;
using testing::warp_of;

class GraphTest : public ::testing::Test {
 protected:
  TokenRegistry reg = TokenRegistry::defaults();
  std::uint32_t op(const char* name) const { return reg.opcode_id(name); }
  std::uint32_t cat(VarCategory c) const { return reg.var_category_id(c); }
};

TEST_F(GraphTest, R4FragmentMatchesOracle) {
  const auto g = build_warp_graph(testing::r4_fragment(), reg);
  EXPECT_TRUE(isomorphic(g, testing::r4_oracle(reg)));
  EXPECT_EQ(testing::single_write_double_read_nodes(g), 1u);
}

TEST_F(GraphTest, OracleRejectsMiswiredGraph) {
  GraphBuilder b;
  const auto i0 = b.instr(op("IADD"), 0);
  const auto v = b.var(cat(VarCategory::Reg), {}, true);
  b.edge(i0, v, Relation::Write);
  auto good = b.finish();
  auto bad = good;
  bad.edges[0].relation = Relation::Read;
  EXPECT_TRUE(isomorphic(good, good));
  EXPECT_FALSE(isomorphic(good, bad));
  auto relabeled = good;
  relabeled.nodes[0].pc = 4;
  EXPECT_FALSE(isomorphic(good, relabeled));
}

TEST_F(GraphTest, SingleInstructionNoOperands) {
  const auto g = build_warp_graph(warp_of({record("NOP", {}, {}, 0)}), reg);
  EXPECT_EQ(g.node_count(), 1u);
  EXPECT_EQ(g.edge_count(), 0u);
  EXPECT_EQ(g.nodes[0].kind, NodeKind::Instr);
}

TEST_F(GraphTest, RewriteCreatesNewVersion) {
  const auto g = build_warp_graph(warp_of({record("MOV", {"R1"}, {"1"}, 0x0, 0, {1}),
                                           record("MOV", {"R1"}, {"2"}, 0x10, 0, {2}),
                                           record("IADD", {"R2"}, {"R1", "3"}, 0x20, 0, {2, 3})}),
                                  reg);
  GraphBuilder b;
  const auto reg_c = cat(VarCategory::Reg);
  const auto i0 = b.instr(op("MOV"), 0x0);
  const auto first = b.var(reg_c, {}, true);
  const auto i1 = b.instr(op("MOV"), 0x10);
  const auto second = b.var(reg_c, {}, true);
  const auto i2 = b.instr(op("IADD"), 0x20);
  const auto r2 = b.var(reg_c, {}, true);
  b.edge(i0, i1, Relation::Ctrl);
  b.edge(i1, i2, Relation::Ctrl);
  b.edge(i0, first, Relation::Write);
  b.edge(i1, second, Relation::Write);
  b.edge(second, i2, Relation::Read);
  b.edge(i2, r2, Relation::Write);
  EXPECT_TRUE(isomorphic(g, b.finish()));

  // The same wiring with the read on the stale version is a different graph.
  auto stale = b.finish();
  for (auto& e : stale.edges) {
    if (e.relation == Relation::Read) e.src = first;
  }
  EXPECT_FALSE(isomorphic(g, stale));
}

TEST_F(GraphTest, UnwrittenVarKeepsRecordedValues) {
  const auto g = build_warp_graph(warp_of({record("IADD", {"R2"}, {"R7", "R7"}, 0, 0, {1, 2, 3, 4, 1, 2, 3, 4}, 0xF)}), reg);
  std::size_t unwritten = 0;
  for (const auto& n : g.nodes) {
    if (n.kind == NodeKind::Var && !n.has_writer) {
      ++unwritten;
      EXPECT_EQ(n.values, (std::vector<std::int64_t>{1, 2, 3, 4}));
    }
  }
  EXPECT_EQ(unwritten, 1u);  // both reads resolve to the same version
  EXPECT_EQ(g.count(Relation::Read), 2u);
}

TEST_F(GraphTest, MemoryLinesAndStores) {
  // Two loads in one 128-byte line share a Var; a store versions the line.
  const auto g = build_warp_graph(warp_of({record("LDG", {"R1"}, {"R9"}, 0x0, 4, {256, 256}),
                                           record("LDG", {"R2"}, {"R9"}, 0x10, 4, {300, 300}),
                                           record("STG", {}, {"R9", "R1"}, 0x20, 4, {256, 5, 256}),
                                           record("LDG", {"R3"}, {"R9"}, 0x30, 4, {260, 260})}),
                                  reg);
  const auto mem_c = cat(VarCategory::Mem);
  std::vector<std::uint32_t> mem_vars;
  for (std::uint32_t v = 0; v < g.nodes.size(); ++v)
    if (g.nodes[v].kind == NodeKind::Var && g.nodes[v].token == mem_c) mem_vars.push_back(v);
  ASSERT_EQ(mem_vars.size(), 2u);
  EXPECT_FALSE(g.nodes[mem_vars[0]].has_writer);
  EXPECT_TRUE(g.nodes[mem_vars[1]].has_writer);
  int reads_first = 0, reads_second = 0;
  for (const auto& e : g.edges) {
    if (e.relation != Relation::Read) continue;
    if (e.src == mem_vars[0]) ++reads_first;
    if (e.src == mem_vars[1]) ++reads_second;
  }
  EXPECT_EQ(reads_first, 2);
  EXPECT_EQ(reads_second, 1);
  EXPECT_EQ(g.count(NodeKind::Pseudo), 4u);
  EXPECT_EQ(g.count(Relation::Addr), 4u);
}

TEST_F(GraphTest, ImmediatesAndPredicates) {
  const auto g = build_warp_graph(
      warp_of({record("ISETP", {"P0"}, {"R1", "0x20"}, 0x0, 0, {3, 32}), record("BRA", {}, {"P0"}, 0x10, 0, {1})}), reg);
  EXPECT_EQ(g.count(NodeKind::Var), 2u);  // R1 and P0
  bool pred_written = false;
  for (const auto& n : g.nodes)
    if (n.kind == NodeKind::Var && n.token == cat(VarCategory::Pred) && n.has_writer) pred_written = true;
  EXPECT_TRUE(pred_written);
}

TEST_F(GraphTest, DeterministicNumbering) {
  Rng rng(5);
  const auto w = testing::random_warp(rng, 200);
  EXPECT_EQ(build_warp_graph(w, reg), build_warp_graph(w, reg));
}

TEST_F(GraphTest, FuzzInvariants) {
  const auto f = testing::graph_fuzz(2024, 1000, reg);
  EXPECT_EQ(f.counts.multi_writer_vars, 0u);
  EXPECT_EQ(f.counts.ctrl_count_mismatch, 0u);
  EXPECT_EQ(f.counts.ctrl_path_breaks, 0u);
  EXPECT_EQ(f.counts.addr_mismatch, 0u);
  EXPECT_EQ(f.library_violations, 0u);
}

TEST_F(GraphTest, MergeIdentityAndCardinality) {
  Rng rng(9);
  const auto a = build_warp_graph(testing::random_warp(rng, 30, 0), reg);
  const auto b = build_warp_graph(testing::random_warp(rng, 17, 1), reg);
  EXPECT_EQ(merge_kernel_graph(std::vector<TraceGraph>{a}), a);
  const auto m = merge_kernel_graph(std::vector<TraceGraph>{a, b});
  EXPECT_EQ(m.node_count(), a.node_count() + b.node_count());
  EXPECT_EQ(m.edge_count(), a.edge_count() + b.edge_count());
  ASSERT_EQ(m.warp_spans.size(), 2u);
  EXPECT_EQ(m.warp_spans[1].begin, a.node_count());
  EXPECT_TRUE(graph_violations(m).empty());
}

TEST_F(GraphTest, MergeSplitRoundTrip) {
  Rng rng(10);
  std::vector<TraceGraph> parts;
  for (std::uint32_t w = 0; w < 5; ++w) parts.push_back(build_warp_graph(testing::random_warp(rng, 25, w), reg));
  const auto split = split_by_warp(merge_kernel_graph(parts));
  EXPECT_EQ(split, parts);
}

TEST_F(GraphTest, KernelGraphOrderedByCtaAndWarp) {
  KernelTrace k;
  Rng rng(12);
  for (auto [x, w, n] : {std::tuple{1u, 0u, 3}, std::tuple{0u, 1u, 4}, std::tuple{0u, 0u, 5}}) {
    auto warp = testing::random_warp(rng, static_cast<std::size_t>(n), w);
    warp.cta.x = x;
    for (auto& r : warp.records) r.cta.x = x;
    k.warps.push_back(warp);
  }
  const auto g = build_kernel_graph(k, reg);
  ASSERT_EQ(g.warp_spans.size(), 3u);
  // (0,0) has 5 instructions, (0,1) 4, (1,0) 3.
  const auto parts = split_by_warp(g);
  EXPECT_EQ(parts[0].count(NodeKind::Instr), 5u);
  EXPECT_EQ(parts[1].count(NodeKind::Instr), 4u);
  EXPECT_EQ(parts[2].count(NodeKind::Instr), 3u);
  for (const auto& e : g.edges) {
    std::size_t ws = 9, wd = 9;
    for (std::size_t i = 0; i < g.warp_spans.size(); ++i) {
      if (e.src >= g.warp_spans[i].begin && e.src < g.warp_spans[i].end) ws = i;
      if (e.dst >= g.warp_spans[i].begin && e.dst < g.warp_spans[i].end) wd = i;
    }
    EXPECT_EQ(ws, wd);
  }
}

TEST_F(GraphTest, JsonRoundTrip) {
  Rng rng(13);
  std::vector<TraceGraph> parts;
  for (std::uint32_t w = 0; w < 3; ++w) parts.push_back(build_warp_graph(testing::random_warp(rng, 15, w), reg));
  auto g = merge_kernel_graph(parts);
  g.launch_id = 77;
  g.kernel_name = "k";
  const auto text = graph_to_json(g);
  EXPECT_EQ(graph_from_json(text), g);
  const auto j = nlohmann::json::parse(text);
  EXPECT_TRUE(j.contains("nodes") && j.contains("edges") && j.contains("warp_spans"));
}

TEST_F(GraphTest, ViolationsDetectCorruption) {
  auto g = build_warp_graph(testing::r4_fragment(), reg);
  auto twice = g;
  for (const auto& e : g.edges) {
    if (e.relation == Relation::Write) {
      twice.edges.push_back({e.src == 0 ? 1u : 0u, e.dst, Relation::Write});
      break;
    }
  }
  EXPECT_FALSE(graph_violations(twice).empty());
  auto no_ctrl = g;
  std::erase_if(no_ctrl.edges, [](const GraphEdge& e) { return e.relation == Relation::Ctrl; });
  EXPECT_FALSE(graph_violations(no_ctrl).empty());
  EXPECT_TRUE(graph_violations(no_ctrl, false).empty());
}

}  // namespace
}  // namespace gcls
