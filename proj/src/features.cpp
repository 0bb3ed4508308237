#include "gcls/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "gcls/error.hpp"

namespace gcls {

double signed_log(double v) { return v == 0.0 ? 0.0 : std::copysign(std::log1p(std::abs(v)), v); }

namespace {

double interpolated_percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

}  // namespace

std::array<double, kStatsDim> stats_summary(std::span<const double> values) {
  std::array<double, kStatsDim> out{};
  if (values.empty()) return out;
  std::vector<double> t(values.size());
  std::transform(values.begin(), values.end(), t.begin(), signed_log);
  std::sort(t.begin(), t.end());
  if (t.front() == t.back()) {
    out.fill(t.front());
    out[1] = 0.0;
    out[7] = 0.0;
    return out;
  }
  const double n = static_cast<double>(t.size());
  double mean = 0.0;
  for (double x : t) mean += x;
  mean /= n;
  double m2 = 0.0, m3 = 0.0;
  for (double x : t) {
    const double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  const double sd = std::sqrt(m2);
  out[0] = mean;
  out[1] = sd;
  out[2] = interpolated_percentile(t, 0.5);
  out[3] = t.front();
  out[4] = t.back();
  out[5] = interpolated_percentile(t, 0.25);
  out[6] = interpolated_percentile(t, 0.75);
  out[7] = m3 / (sd * sd * sd);
  return out;
}

std::array<double, kStatsDim> stats_summary(std::span<const std::int64_t> values) {
  std::vector<double> v(values.begin(), values.end());
  return stats_summary(std::span<const double>(v));
}

std::vector<double> token_embedding(std::uint64_t seed, TokenSpace space, std::uint32_t token, std::size_t dim) {
  Rng rng({seed, 0x70CE11ULL, static_cast<std::uint64_t>(space), token});
  std::vector<double> row(dim);
  for (auto& x : row) x = rng.normal();
  return row;
}

std::array<double, kPositionDim> pc_encoding(double pc_norm) {
  std::array<double, kPositionDim> out{};
  for (std::size_t j = 0; j < kPositionDim / 2; ++j) {
    const double w = std::numbers::pi * std::ldexp(1.0, static_cast<int>(j));
    out[2 * j] = std::sin(w * pc_norm);
    out[2 * j + 1] = std::cos(w * pc_norm);
  }
  return out;
}

ad::Tensor featurize_graph(const TraceGraph& graph, const TokenRegistry& registry, std::uint64_t seed,
                           FeaturizeStats* stats) {
  ad::Tensor f(graph.nodes.size(), kFeatureDim);
  std::uint64_t pc_min = UINT64_MAX, pc_max = 0;
  for (const auto& n : graph.nodes) {
    if (n.kind != NodeKind::Instr) continue;
    pc_min = std::min(pc_min, n.pc);
    pc_max = std::max(pc_max, n.pc);
  }
  const double pc_den = pc_min == UINT64_MAX ? 1.0 : static_cast<double>(pc_max - pc_min) + 1.0;

  std::map<std::pair<TokenSpace, std::uint32_t>, std::vector<double>> cache;
  auto embed = [&](TokenSpace s, std::uint32_t tok, std::size_t dim) -> const std::vector<double>& {
    auto it = cache.find({s, tok});
    if (it == cache.end()) it = cache.emplace(std::make_pair(s, tok), token_embedding(seed, s, tok, dim)).first;
    return it->second;
  };

  std::size_t unknown = 0;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& n = graph.nodes[i];
    double* row = f.row(i);
    const std::size_t vocab = n.kind == NodeKind::Instr    ? registry.opcode_vocab()
                              : n.kind == NodeKind::Pseudo ? registry.pseudo_vocab()
                                                           : TokenRegistry::var_vocab();
    const std::uint32_t token = n.token < vocab ? n.token : TokenRegistry::kUnk;
    if (token == TokenRegistry::kUnk) ++unknown;
    switch (n.kind) {
      case NodeKind::Instr: {
        const auto& e = embed(TokenSpace::Opcode, token, kInstrTokenDim);
        std::copy(e.begin(), e.end(), row);
        const auto pos = pc_encoding(static_cast<double>(n.pc - pc_min) / pc_den);
        std::copy(pos.begin(), pos.end(), row + kInstrTokenDim);
        break;
      }
      case NodeKind::Var: {
        const auto& e = embed(TokenSpace::Var, token, kVarTokenDim);
        std::copy(e.begin(), e.end(), row);
        const auto s = stats_summary(std::span<const std::int64_t>(n.values));
        std::copy(s.begin(), s.end(), row + kVarTokenDim);
        break;
      }
      case NodeKind::Pseudo: {
        const auto& e = embed(TokenSpace::Pseudo, token, kPseudoTokenDim);
        std::copy(e.begin(), e.end(), row);
        break;
      }
    }
  }
  if (stats) stats->unknown_tokens = unknown;
  return f;
}

GraphView node_drop(const GraphView& view, double p, Rng& rng) {
  const std::size_t n = view.graph.nodes.size();
  auto drop = static_cast<std::size_t>(std::floor(p * static_cast<double>(n)));
  if (n > 0 && drop >= n) drop = n - 1;
  if (drop == 0) return view;

  std::vector<std::uint8_t> removed(n, 0);
  for (auto i : rng.sample_without_replacement(n, drop)) removed[i] = 1;
  std::vector<std::int64_t> remap(n, -1);
  GraphView out;
  out.graph.launch_id = view.graph.launch_id;
  out.graph.kernel_name = view.graph.kernel_name;
  out.features = ad::Tensor(n - drop, view.features.cols);
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    remap[i] = next;
    out.graph.nodes.push_back(view.graph.nodes[i]);
    std::copy(view.features.row(i), view.features.row(i) + view.features.cols, out.features.row(next));
    ++next;
  }
  for (const auto& e : view.graph.edges) {
    if (remap[e.src] < 0 || remap[e.dst] < 0) continue;
    out.graph.edges.push_back({static_cast<std::uint32_t>(remap[e.src]), static_cast<std::uint32_t>(remap[e.dst]), e.relation});
  }
  std::uint32_t begin = 0;
  for (const auto& s : view.graph.warp_spans) {
    std::uint32_t kept = 0;
    for (auto i = s.begin; i < s.end; ++i) kept += removed[i] ? 0 : 1;
    out.graph.warp_spans.push_back({begin, begin + kept});
    begin += kept;
  }
  return out;
}

GraphView edge_drop(const GraphView& view, double p, Rng& rng) {
  const std::size_t m = view.graph.edges.size();
  const auto drop = static_cast<std::size_t>(std::floor(p * static_cast<double>(m)));
  if (drop == 0) return view;
  std::vector<std::uint8_t> removed(m, 0);
  for (auto i : rng.sample_without_replacement(m, drop)) removed[i] = 1;
  GraphView out;
  out.features = view.features;
  out.graph.launch_id = view.graph.launch_id;
  out.graph.kernel_name = view.graph.kernel_name;
  out.graph.nodes = view.graph.nodes;
  out.graph.warp_spans = view.graph.warp_spans;
  out.graph.edges.reserve(m - drop);
  for (std::size_t i = 0; i < m; ++i) {
    if (!removed[i]) out.graph.edges.push_back(view.graph.edges[i]);
  }
  return out;
}

GraphView feature_noise(const GraphView& view, double sigma, Rng& rng) {
  if (sigma < 0.0) throw Error(ErrorCode::BadConfig, "noise sigma must be non-negative");
  GraphView out = view;
  if (sigma == 0.0) return out;
  for (auto& x : out.features.values) x += rng.normal(0.0, sigma);
  return out;
}

AugmentedView make_view(const GraphView& base, Rng& rng, const AugmentationPool& pool) {
  const std::size_t k = static_cast<std::size_t>(rng.integer(1, 2));
  AugmentedView out{base, {}};
  for (auto idx : rng.sample_without_replacement(kNumAugmentations, k)) {
    const auto a = static_cast<Augmentation>(idx);
    switch (a) {
      case Augmentation::NodeDrop: out.view = node_drop(out.view, pool.node_drop, rng); break;
      case Augmentation::EdgeDrop: out.view = edge_drop(out.view, pool.edge_drop, rng); break;
      case Augmentation::FeatureNoise: out.view = feature_noise(out.view, pool.noise_sigma, rng); break;
    }
    out.applied.push_back(a);
  }
  return out;
}

std::pair<AugmentedView, AugmentedView> make_views(const GraphView& base, Rng& rng, const AugmentationPool& pool) {
  auto first = make_view(base, rng, pool);
  auto second = make_view(base, rng, pool);
  return {std::move(first), std::move(second)};
}

}  // namespace gcls
