#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "gcls/autodiff.hpp"
#include "gcls/graph.hpp"
#include "gcls/registry.hpp"
#include "gcls/rng.hpp"

namespace gcls {

inline constexpr std::size_t kFeatureDim = 64;
inline constexpr std::size_t kInstrTokenDim = 48;
inline constexpr std::size_t kPositionDim = 16;
inline constexpr std::size_t kVarTokenDim = 32;
inline constexpr std::size_t kStatsDim = 8;
inline constexpr std::size_t kPseudoTokenDim = 16;

/// sign(v) * ln(1 + |v|)
double signed_log(double v);

/// [mean, population std, median, min, max, p25, p75, skewness] of the
/// signed-log transformed values. Percentiles interpolate linearly between
/// order statistics. Empty input gives zeros; skewness is 0 when std is 0.
std::array<double, kStatsDim> stats_summary(std::span<const double> values);
std::array<double, kStatsDim> stats_summary(std::span<const std::int64_t> values);

/// Frozen token embedding row: unit-variance Gaussian entries drawn from a
/// stream keyed by (seed, namespace, token id).
enum class TokenSpace : std::uint8_t { Opcode = 1, Pseudo = 2, Var = 3 };
std::vector<double> token_embedding(std::uint64_t seed, TokenSpace space, std::uint32_t token, std::size_t dim);

/// 16 interleaved sin/cos terms at frequencies pi * 2^j, j = 0..7.
std::array<double, kPositionDim> pc_encoding(double pc_norm);

struct FeaturizeStats {
  std::size_t unknown_tokens = 0;
};

/// One 64-wide row per node in node id order.
ad::Tensor featurize_graph(const TraceGraph& graph, const TokenRegistry& registry, std::uint64_t seed,
                           FeaturizeStats* stats = nullptr);

/// A graph with its node features; the unit the encoder consumes.
struct GraphView {
  TraceGraph graph;
  ad::Tensor features;
};

enum class Augmentation : std::uint8_t { NodeDrop, EdgeDrop, FeatureNoise };
inline constexpr std::size_t kNumAugmentations = 3;

struct AugmentationPool {
  double node_drop = 0.15;
  double edge_drop = 0.15;
  double noise_sigma = 0.01;
};

/// Removes floor(p * n) nodes uniformly (at least one node always survives)
/// with their incident edges; rows and warp spans are compacted.
GraphView node_drop(const GraphView& view, double p, Rng& rng);
/// Removes floor(p * m) edges uniformly; nodes untouched.
GraphView edge_drop(const GraphView& view, double p, Rng& rng);
/// Adds i.i.d. N(0, sigma^2) to every feature entry, padding included.
GraphView feature_noise(const GraphView& view, double sigma, Rng& rng);

struct AugmentedView {
  GraphView view;
  std::vector<Augmentation> applied;
};

/// One view: k in {1, 2} uniformly, then k distinct strategies in draw order.
AugmentedView make_view(const GraphView& base, Rng& rng, const AugmentationPool& pool = {});
/// Two independent views drawn from the same stream.
std::pair<AugmentedView, AugmentedView> make_views(const GraphView& base, Rng& rng, const AugmentationPool& pool = {});

}  // namespace gcls
