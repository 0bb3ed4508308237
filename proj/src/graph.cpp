#include "gcls/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "gcls/error.hpp"

namespace gcls {

std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Instr: return "Instr";
    case NodeKind::Pseudo: return "Pseudo";
    case NodeKind::Var: return "Var";
  }
  return "?";
}

std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::Ctrl: return "Ctrl";
    case Relation::Read: return "Read";
    case Relation::Write: return "Write";
    case Relation::Addr: return "Addr";
  }
  return "?";
}

std::size_t TraceGraph::count(NodeKind k) const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [k](const auto& n) { return n.kind == k; }));
}

std::size_t TraceGraph::count(Relation r) const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [r](const auto& e) { return e.relation == r; }));
}

namespace {

/// Latest version of every variable (register name or memory line).
class VersionTable {
 public:
  explicit VersionTable(TraceGraph& g) : g_(g) {}

  /// Current version, creating an unwritten node seeded with `values` if the
  /// variable has never been seen.
  std::uint32_t resolve(const std::string& key, std::uint32_t category, std::span<const std::int64_t> values) {
    auto it = current_.find(key);
    if (it != current_.end()) return it->second;
    GraphNode n;
    n.kind = NodeKind::Var;
    n.token = category;
    n.values.assign(values.begin(), values.end());
    const auto id = add(std::move(n));
    current_.emplace(key, id);
    return id;
  }

  /// Fresh version for a write.
  std::uint32_t write(const std::string& key, std::uint32_t category) {
    GraphNode n;
    n.kind = NodeKind::Var;
    n.token = category;
    n.has_writer = true;
    const auto id = add(std::move(n));
    current_[key] = id;
    return id;
  }

  std::uint32_t add(GraphNode n) {
    g_.nodes.push_back(std::move(n));
    return static_cast<std::uint32_t>(g_.nodes.size() - 1);
  }

 private:
  TraceGraph& g_;
  std::unordered_map<std::string, std::uint32_t> current_;
};

std::string reg_key(std::string_view reg) { return "R:" + std::string(reg); }
std::string mem_key(std::uint64_t line) { return "M:" + std::to_string(line); }

}  // namespace

TraceGraph build_warp_graph(const WarpTrace& warp, const TokenRegistry& registry) {
  TraceGraph g;
  VersionTable versions(g);
  auto edge = [&g](std::uint32_t s, std::uint32_t d, Relation r) { g.edges.push_back({s, d, r}); };
  const auto mem_cat = registry.var_category_id(VarCategory::Mem);

  std::int64_t prev_instr = -1;
  for (const auto& rec : warp.records) {
    GraphNode in;
    in.kind = NodeKind::Instr;
    in.token = registry.opcode_id(rec.opcode);
    in.pc = rec.pc;
    in.mem_width = rec.mem_width;
    const auto instr = versions.add(std::move(in));
    if (prev_instr >= 0) edge(static_cast<std::uint32_t>(prev_instr), instr, Relation::Ctrl);
    prev_instr = instr;

    // For memory instructions the first source operand is the address register.
    const bool mem = rec.is_memory();
    const std::size_t addr_slot = mem && !rec.src_regs.empty() ? 0 : rec.src_regs.size();
    for (std::size_t s = 0; s < rec.src_regs.size(); ++s) {
      if (s == addr_slot) continue;
      const auto& reg = rec.src_regs[s];
      if (is_immediate_operand(reg)) continue;
      auto v = versions.resolve(reg_key(reg), registry.var_category_id(register_category(reg)), rec.slot_values(s));
      edge(v, instr, Relation::Read);
    }

    std::uint64_t line = 0;
    if (mem) {
      GraphNode p;
      p.kind = NodeKind::Pseudo;
      p.token = registry.pseudo_id(kMemRefPseudo);
      const auto pseudo = versions.add(std::move(p));
      if (addr_slot < rec.src_regs.size() && !is_immediate_operand(rec.src_regs[addr_slot])) {
        const auto& reg = rec.src_regs[addr_slot];
        auto v = versions.resolve(reg_key(reg), registry.var_category_id(register_category(reg)),
                                  rec.slot_values(addr_slot));
        edge(v, pseudo, Relation::Read);
      }
      edge(pseudo, instr, Relation::Addr);

      auto addrs = rec.slot_values(rec.src_regs.size());
      line = addrs.empty() ? 0 : static_cast<std::uint64_t>(addrs.front()) / kLineBytes;
      if (reads_memory(rec.opcode)) {
        auto v = versions.resolve(mem_key(line), mem_cat, addrs);
        edge(v, instr, Relation::Read);
      }
    }

    for (const auto& reg : rec.dest_regs) {
      auto v = versions.write(reg_key(reg), registry.var_category_id(register_category(reg)));
      edge(instr, v, Relation::Write);
    }
    if (mem && writes_memory(rec.opcode)) {
      auto v = versions.write(mem_key(line), mem_cat);
      edge(instr, v, Relation::Write);
    }
  }
  g.warp_spans.push_back({0, static_cast<std::uint32_t>(g.nodes.size())});
  return g;
}

TraceGraph merge_kernel_graph(std::span<const TraceGraph> warp_graphs) {
  TraceGraph out;
  if (!warp_graphs.empty()) {
    out.launch_id = warp_graphs.front().launch_id;
    out.kernel_name = warp_graphs.front().kernel_name;
  }
  std::size_t n_nodes = 0, n_edges = 0;
  for (const auto& g : warp_graphs) {
    n_nodes += g.nodes.size();
    n_edges += g.edges.size();
  }
  out.nodes.reserve(n_nodes);
  out.edges.reserve(n_edges);
  for (const auto& g : warp_graphs) {
    const auto base = static_cast<std::uint32_t>(out.nodes.size());
    out.nodes.insert(out.nodes.end(), g.nodes.begin(), g.nodes.end());
    for (const auto& e : g.edges) out.edges.push_back({e.src + base, e.dst + base, e.relation});
    for (const auto& s : g.warp_spans) out.warp_spans.push_back({s.begin + base, s.end + base});
  }
  return out;
}

std::vector<TraceGraph> split_by_warp(const TraceGraph& kernel_graph) {
  std::vector<TraceGraph> out(kernel_graph.warp_spans.size());
  std::vector<std::size_t> owner(kernel_graph.nodes.size(), 0);
  for (std::size_t w = 0; w < kernel_graph.warp_spans.size(); ++w) {
    const auto& span = kernel_graph.warp_spans[w];
    auto& g = out[w];
    g.launch_id = kernel_graph.launch_id;
    g.kernel_name = kernel_graph.kernel_name;
    g.nodes.assign(kernel_graph.nodes.begin() + span.begin, kernel_graph.nodes.begin() + span.end);
    g.warp_spans.push_back({0, span.size()});
    for (auto i = span.begin; i < span.end; ++i) owner[i] = w;
  }
  for (const auto& e : kernel_graph.edges) {
    const auto w = owner[e.src];
    const auto base = kernel_graph.warp_spans[w].begin;
    out[w].edges.push_back({e.src - base, e.dst - base, e.relation});
  }
  return out;
}

TraceGraph build_kernel_graph(const KernelTrace& kernel, const TokenRegistry& registry) {
  std::vector<std::size_t> order(kernel.warps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& wa = kernel.warps[a];
    const auto& wb = kernel.warps[b];
    return std::tie(wa.cta, wa.warp_id) < std::tie(wb.cta, wb.warp_id);
  });
  std::vector<TraceGraph> parts(order.size());
  const auto n = static_cast<std::int64_t>(order.size());
#pragma omp parallel for schedule(dynamic) if (n > 1)
  for (std::int64_t i = 0; i < n; ++i) {
    parts[static_cast<std::size_t>(i)] = build_warp_graph(kernel.warps[order[static_cast<std::size_t>(i)]], registry);
  }
  TraceGraph g = merge_kernel_graph(parts);
  g.launch_id = kernel.launch_id;
  g.kernel_name = kernel.kernel_name;
  return g;
}

std::vector<std::string> graph_violations(const TraceGraph& g, bool check_ctrl_path) {
  std::vector<std::string> bad;
  const auto n = g.nodes.size();
  std::vector<std::int64_t> owner(n, -1);
  std::uint32_t expect_begin = 0;
  for (std::size_t w = 0; w < g.warp_spans.size(); ++w) {
    const auto& s = g.warp_spans[w];
    if (s.begin != expect_begin || s.end < s.begin || s.end > n) {
      bad.push_back("warp span " + std::to_string(w) + " is not contiguous");
      continue;
    }
    for (auto i = s.begin; i < s.end; ++i) owner[i] = static_cast<std::int64_t>(w);
    expect_begin = s.end;
  }
  if (expect_begin != n) bad.push_back("warp spans do not cover all nodes");

  std::vector<std::uint32_t> writes(n, 0), addr(n, 0), ctrl_in(n, 0), ctrl_out(n, 0);
  for (const auto& e : g.edges) {
    if (e.src >= n || e.dst >= n) {
      bad.push_back("edge references missing node");
      continue;
    }
    if (owner[e.src] != owner[e.dst]) bad.push_back("edge crosses warp spans");
    const auto& s = g.nodes[e.src];
    const auto& d = g.nodes[e.dst];
    switch (e.relation) {
      case Relation::Ctrl:
        if (s.kind != NodeKind::Instr || d.kind != NodeKind::Instr) bad.push_back("Ctrl edge between non-instructions");
        ++ctrl_out[e.src];
        ++ctrl_in[e.dst];
        break;
      case Relation::Write:
        if (d.kind != NodeKind::Var) bad.push_back("Write edge into non-variable");
        ++writes[e.dst];
        break;
      case Relation::Addr:
        if (s.kind != NodeKind::Pseudo || d.kind != NodeKind::Instr) bad.push_back("Addr edge not Pseudo->Instr");
        ++addr[e.dst];
        break;
      case Relation::Read:
        break;
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    const auto& node = g.nodes[v];
    if (node.kind == NodeKind::Var && writes[v] > 1) bad.push_back("variable " + std::to_string(v) + " has several writers");
    if (node.kind == NodeKind::Instr && node.mem_width > 0 && addr[v] != 1) {
      bad.push_back("memory instruction " + std::to_string(v) + " has " + std::to_string(addr[v]) + " Addr edges");
    }
  }
  if (check_ctrl_path) {
    for (std::size_t w = 0; w < g.warp_spans.size(); ++w) {
      const auto& s = g.warp_spans[w];
      std::vector<std::uint32_t> instrs;
      for (auto i = s.begin; i < s.end && i < n; ++i) {
        if (g.nodes[i].kind == NodeKind::Instr) instrs.push_back(i);
      }
      std::size_t ctrl = 0;
      for (std::size_t k = 0; k < instrs.size(); ++k) {
        const auto v = instrs[k];
        ctrl += ctrl_out[v];
        if (ctrl_in[v] != (k == 0 ? 0u : 1u) || ctrl_out[v] != (k + 1 == instrs.size() ? 0u : 1u)) {
          bad.push_back("Ctrl edges of warp " + std::to_string(w) + " do not form a simple path");
          break;
        }
      }
      if (!instrs.empty() && ctrl != instrs.size() - 1) bad.push_back("Ctrl edge count mismatch in warp " + std::to_string(w));
    }
    // The path must follow creation order.
    for (const auto& e : g.edges) {
      if (e.relation == Relation::Ctrl && e.src >= e.dst) bad.push_back("Ctrl edge against trace order");
    }
  }
  return bad;
}

namespace {

NodeKind parse_kind(const std::string& s) {
  if (s == "Instr") return NodeKind::Instr;
  if (s == "Pseudo") return NodeKind::Pseudo;
  if (s == "Var") return NodeKind::Var;
  throw Error(ErrorCode::BadArtifact, "unknown node kind " + s);
}

Relation parse_relation(const std::string& s) {
  for (std::size_t r = 0; r < kNumRelations; ++r) {
    if (to_string(static_cast<Relation>(r)) == s) return static_cast<Relation>(r);
  }
  throw Error(ErrorCode::BadArtifact, "unknown relation " + s);
}

}  // namespace

std::string graph_to_json(const TraceGraph& g) {
  using nlohmann::json;
  json nodes = json::array();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    json payload;
    switch (n.kind) {
      case NodeKind::Instr:
        payload = {{"token", n.token}, {"pc", n.pc}, {"mem_width", n.mem_width}};
        break;
      case NodeKind::Pseudo:
        payload = {{"token", n.token}};
        break;
      case NodeKind::Var:
        payload = {{"token", n.token}, {"values", n.values}, {"has_writer", n.has_writer}};
        break;
    }
    nodes.push_back({{"node_id", i}, {"kind", to_string(n.kind)}, {"payload", std::move(payload)}});
  }
  json edges = json::array();
  for (const auto& e : g.edges) edges.push_back({{"src", e.src}, {"dst", e.dst}, {"relation", to_string(e.relation)}});
  json spans = json::array();
  for (const auto& s : g.warp_spans) spans.push_back({{"begin", s.begin}, {"end", s.end}});
  json j{{"launch_id", g.launch_id},
         {"kernel_name", g.kernel_name},
         {"nodes", std::move(nodes)},
         {"edges", std::move(edges)},
         {"warp_spans", std::move(spans)}};
  return j.dump();
}

TraceGraph graph_from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    TraceGraph g;
    g.launch_id = j.at("launch_id").get<std::uint64_t>();
    g.kernel_name = j.at("kernel_name").get<std::string>();
    for (const auto& jn : j.at("nodes")) {
      GraphNode n;
      if (jn.at("node_id").get<std::size_t>() != g.nodes.size()) {
        throw Error(ErrorCode::BadArtifact, "node ids must be dense and ordered");
      }
      n.kind = parse_kind(jn.at("kind").get<std::string>());
      const auto& p = jn.at("payload");
      n.token = p.at("token").get<std::uint32_t>();
      if (n.kind == NodeKind::Instr) {
        n.pc = p.at("pc").get<std::uint64_t>();
        n.mem_width = p.value("mem_width", 0u);
      } else if (n.kind == NodeKind::Var) {
        n.values = p.at("values").get<std::vector<std::int64_t>>();
        n.has_writer = p.at("has_writer").get<bool>();
      }
      g.nodes.push_back(std::move(n));
    }
    for (const auto& je : j.at("edges")) {
      g.edges.push_back({je.at("src").get<std::uint32_t>(), je.at("dst").get<std::uint32_t>(),
                         parse_relation(je.at("relation").get<std::string>())});
    }
    for (const auto& js : j.at("warp_spans")) {
      g.warp_spans.push_back({js.at("begin").get<std::uint32_t>(), js.at("end").get<std::uint32_t>()});
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadArtifact, std::string("graph json: ") + e.what());
  }
}

void save_graph(const TraceGraph& g, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + file.string());
  out << graph_to_json(g) << '\n';
}

TraceGraph load_graph(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return graph_from_json(ss.str());
  } catch (const Error& e) {
    throw e.with_context(file.string());
  }
}

}  // namespace gcls
