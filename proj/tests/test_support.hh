#pragma once

// Independent oracles and fixtures shared by the unit tests and the
// acceptance binary. Nothing here calls into the code under test for the
// quantity it checks.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gcls/autodiff.hpp"
#include "gcls/graph.hpp"
#include "gcls/rgcn.hpp"
#include "gcls/rng.hpp"
#include "gcls/trace.hpp"

namespace gcls::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "gcls");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& file);
void write_file(const std::filesystem::path& file, const std::string& text);

/// Record with one value per active lane for every value slot.
InstructionRecord record(std::string opcode, std::vector<std::string> dests, std::vector<std::string> srcs,
                         std::uint64_t pc, std::uint32_t mem_width = 0, std::vector<std::int64_t> values = {},
                         std::uint32_t mask = 1, std::uint32_t warp_id = 0);

WarpTrace warp_of(std::vector<InstructionRecord> records);

/// Hand assembly of expected graphs.
class GraphBuilder {
 public:
  std::uint32_t instr(std::uint32_t token, std::uint64_t pc, std::uint32_t mem_width = 0);
  std::uint32_t pseudo(std::uint32_t token);
  std::uint32_t var(std::uint32_t category, std::vector<std::int64_t> values, bool has_writer);
  void edge(std::uint32_t src, std::uint32_t dst, Relation r);
  TraceGraph finish() const;

 private:
  TraceGraph g_;
};

/// Labelled directed multigraph isomorphism by backtracking. Node labels are
/// the full payload; edges must match with multiplicity and relation.
bool isomorphic(const TraceGraph& a, const TraceGraph& b);

/// IADD writes R4; FMUL reads it as data and LDG reads it as an address.
WarpTrace r4_fragment();
/// Hand-built graph expected for r4_fragment().
TraceGraph r4_oracle(const TokenRegistry& registry);
/// Nodes with exactly one incoming Write and two outgoing Reads.
std::size_t single_write_double_read_nodes(const TraceGraph& g);

/// Random single-warp trace over a small register file, mixing ALU,
/// predicate, load, store and immediate operands.
WarpTrace random_warp(Rng& rng, std::size_t n_records, std::uint32_t warp_id = 0);

struct FuzzCounts {
  std::size_t multi_writer_vars = 0;
  std::size_t ctrl_count_mismatch = 0;
  std::size_t ctrl_path_breaks = 0;
  std::size_t addr_mismatch = 0;
};

/// Invariant audit of a warp graph against the trace it came from.
FuzzCounts audit_warp_graph(const TraceGraph& g, const WarpTrace& warp, const TokenRegistry& registry);

struct FuzzSummary {
  FuzzCounts counts;
  std::size_t library_violations = 0;  // graph_violations() findings
  std::size_t total() const {
    return counts.multi_writer_vars + counts.ctrl_count_mismatch + counts.ctrl_path_breaks + counts.addr_mismatch +
           library_violations;
  }
};

/// Builds `traces` random warps of 1..60 records and audits every graph.
FuzzSummary graph_fuzz(std::uint64_t seed, std::size_t traces, const TokenRegistry& registry);

/// Random graph with `warps` spans of `nodes_per_warp` nodes and intra-warp
/// edges of every relation (duplicates and self loops allowed).
TraceGraph random_graph(Rng& rng, std::size_t nodes_per_warp, std::size_t edges_per_warp, std::size_t warps = 1);

ad::Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0);

/// Init params with every tensor (gains and biases included) redrawn so no
/// coordinate sits at a special value.
RgcnParams random_params(const EncoderConfig& config, std::uint64_t seed);

/// Eval-mode layer by direct summation over explicit dense relation weights.
ad::Tensor dense_rgcn_layer(const ad::Tensor& h, const TraceGraph& g, const RgcnLayerParams& layer);

/// Symmetric InfoNCE by plain loops.
double reference_infonce(const ad::Tensor& z1, const ad::Tensor& z2, double tau);

/// Adjusted Rand index from the pair-counting contingency table.
double reference_ari(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b);

/// BoundParams over tape variables laid out in RgcnParams::tensors() order.
BoundParams bind_vars(const RgcnParams& shape, std::span<const ad::Var> vars);

struct EncoderGradCheck {
  ad::GradCheckResult result;
  double seconds = 0.0;
};

/// Finite-difference check of encode -> project -> InfoNCE on a 20-node,
/// 2-warp graph. Features are checked in full, parameters by sampling.
EncoderGradCheck encoder_gradient_check(std::uint64_t seed, std::size_t coords_per_param = 64);

}  // namespace gcls::testing
