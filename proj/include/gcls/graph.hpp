#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gcls/registry.hpp"
#include "gcls/trace.hpp"

namespace gcls {

enum class NodeKind : std::uint8_t { Instr, Pseudo, Var };

/// The four typed relations. Ctrl links consecutive instructions; the three
/// data-flow relations point from source nodes to result nodes.
enum class Relation : std::uint8_t { Ctrl = 0, Read = 1, Write = 2, Addr = 3 };
inline constexpr std::size_t kNumRelations = 4;

std::string_view to_string(NodeKind k);
std::string_view to_string(Relation r);

struct GraphNode {
  NodeKind kind = NodeKind::Instr;
  std::uint32_t token = 0;  // opcode id, pseudo-op id or var category id
  // Instr payload
  std::uint64_t pc = 0;
  std::uint32_t mem_width = 0;
  // Var payload
  std::vector<std::int64_t> values;
  bool has_writer = false;

  bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  Relation relation = Relation::Ctrl;

  bool operator==(const GraphEdge&) const = default;
};

/// Half-open node id range [begin, end) owned by one warp.
struct WarpSpan {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;
  std::uint32_t size() const { return end - begin; }
  bool operator==(const WarpSpan&) const = default;
};

/// Heterogeneous relational graph of one kernel (or one warp). Node ids are
/// positions in `nodes`, numbered in creation order.
struct TraceGraph {
  std::uint64_t launch_id = 0;
  std::string kernel_name;
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  std::vector<WarpSpan> warp_spans;

  std::size_t node_count() const { return nodes.size(); }
  std::size_t edge_count() const { return edges.size(); }
  std::size_t count(NodeKind k) const;
  std::size_t count(Relation r) const;

  bool operator==(const TraceGraph&) const = default;
};

TraceGraph build_warp_graph(const WarpTrace& warp, const TokenRegistry& registry);

/// Disjoint union; node ids of graph i are shifted by the sizes of graphs 0..i-1.
TraceGraph merge_kernel_graph(std::span<const TraceGraph> warp_graphs);

/// Inverse of merge_kernel_graph: one graph per warp span, ids re-based to 0.
std::vector<TraceGraph> split_by_warp(const TraceGraph& kernel_graph);

/// Builds every warp (in parallel) and merges them ordered by (cta, warp_id).
TraceGraph build_kernel_graph(const KernelTrace& kernel, const TokenRegistry& registry);

/// Structural invariant violations; empty when the graph is well-formed.
/// check_ctrl_path can be disabled for augmented views.
std::vector<std::string> graph_violations(const TraceGraph& g, bool check_ctrl_path = true);

void save_graph(const TraceGraph& g, const std::filesystem::path& file);
TraceGraph load_graph(const std::filesystem::path& file);
std::string graph_to_json(const TraceGraph& g);
TraceGraph graph_from_json(std::string_view text);

/// Memory-variable key granularity.
inline constexpr std::uint64_t kLineBytes = 128;

}  // namespace gcls
