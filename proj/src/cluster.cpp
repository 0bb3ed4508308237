#include "gcls/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "gcls/error.hpp"
#include "gcls/kernels.hpp"
#include "gcls/rng.hpp"

namespace gcls {

namespace {

constexpr std::uint64_t kRestartTag = 0xC1;
constexpr std::uint64_t kSubsampleTag = 0x5117;
constexpr std::uint64_t kSweepTag = 0x5EE9;

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

Embeddings seed_plus_plus(const Embeddings& x, std::size_t k, Rng& rng) {
  Embeddings c(k, x.dim);
  std::vector<double> d2(x.n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(x.n, 0);
  std::size_t pick = rng.index(x.n);
  for (std::size_t j = 0; j < k; ++j) {
    chosen[pick] = 1;
    std::copy(x.row(pick), x.row(pick) + x.dim, c.row(j));
    if (j + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < x.n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(x.row(i), c.row(j), x.dim));
      total += d2[i];
    }
    if (total > 0.0) {
      double r = rng.uniform() * total;
      pick = x.n - 1;
      for (std::size_t i = 0; i < x.n; ++i) {
        r -= d2[i];
        if (r < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[pick] == 0.0 && pick > 0) --pick;
    } else {
      // Every point coincides with a centre; take the first unused one.
      pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), 0) - chosen.begin());
      if (pick == x.n) pick = 0;
    }
  }
  return c;
}

struct LloydOutcome {
  std::vector<std::uint32_t> assignment;
  Embeddings centroids;
  double inertia = 0.0;
  std::vector<double> history;
};

LloydOutcome lloyd(const Embeddings& x, Embeddings c, const KMeansOptions& opt) {
  const std::size_t k = c.n, d = x.dim;
  LloydOutcome out;
  std::vector<double> dist;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    out.assignment = kernels::nearest_centroid(x.n, k, d, x.values.data(), c.values.data(), &dist);
    const double inertia = std::accumulate(dist.begin(), dist.end(), 0.0);
    out.history.push_back(inertia);
    const bool done = inertia == 0.0 || (std::isfinite(prev) && prev - inertia <= opt.rel_tol * prev);
    prev = inertia;

    Embeddings next(k, d);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < x.n; ++i) {
      const auto a = out.assignment[i];
      ++count[a];
      double* dst = next.row(a);
      const double* src = x.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    std::vector<std::size_t> far(x.n);
    std::iota(far.begin(), far.end(), 0);
    std::stable_sort(far.begin(), far.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
    std::size_t next_far = 0;
    bool reseeded = false;
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] > 0) {
        for (std::size_t t = 0; t < d; ++t) next.row(j)[t] /= static_cast<double>(count[j]);
      } else if (next_far < far.size() && dist[far[next_far]] > 0.0) {
        const auto p = far[next_far++];
        std::copy(x.row(p), x.row(p) + d, next.row(j));
        reseeded = true;
      } else {
        std::copy(c.row(j), c.row(j) + d, next.row(j));
      }
    }
    c = std::move(next);
    if (done && !reseeded) break;
  }
  // Final assignment against the final centroids.
  out.assignment = kernels::nearest_centroid(x.n, k, d, x.values.data(), c.values.data(), &dist);
  out.inertia = std::accumulate(dist.begin(), dist.end(), 0.0);
  out.history.push_back(out.inertia);
  out.centroids = std::move(c);
  return out;
}

std::vector<std::uint32_t> compact_labels(std::span<const std::uint32_t> labels, std::size_t* count) {
  std::map<std::uint32_t, std::uint32_t> ids;
  for (auto l : labels) ids.emplace(l, 0);
  std::uint32_t next = 0;
  for (auto& [_, v] : ids) v = next++;
  std::vector<std::uint32_t> out;
  out.reserve(labels.size());
  for (auto l : labels) out.push_back(ids[l]);
  *count = ids.size();
  return out;
}

}  // namespace

KMeansResult kmeans(const Embeddings& x, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
  if (k < 1 || k > x.n) throw Error(ErrorCode::InvalidSpec, "kmeans needs 1 <= K <= N");
  const std::size_t restarts = std::max<std::size_t>(1, options.restarts);
  std::vector<LloydOutcome> runs(restarts);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(derive_seed({seed, kRestartTag, r}));
    runs[r] = lloyd(x, seed_plus_plus(x, k, rng), options);
  }
  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r)
    if (runs[r].inertia < runs[best].inertia) best = r;
  KMeansResult out;
  out.assignment = std::move(runs[best].assignment);
  out.centroids = std::move(runs[best].centroids);
  out.inertia = runs[best].inertia;
  out.history = std::move(runs[best].history);
  return out;
}

double silhouette_score(const Embeddings& x, std::span<const std::uint32_t> assignment, std::size_t max_points,
                        std::uint64_t seed) {
  if (assignment.size() != x.n) throw Error(ErrorCode::ShapeMismatch, "silhouette: label count differs from N");
  std::size_t n_clusters = 0;
  auto labels = compact_labels(assignment, &n_clusters);
  if (n_clusters < 2) throw Error(ErrorCode::SingleCluster, "silhouette needs at least two clusters");

  std::vector<std::size_t> idx(x.n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_points > 0 && x.n > max_points) {
    Rng rng(derive_seed({seed, kSubsampleTag}));
    idx = rng.sample_without_replacement(x.n, max_points);
    std::sort(idx.begin(), idx.end());
  }
  const std::size_t m = idx.size();
  std::vector<std::size_t> size(n_clusters, 0);
  for (auto i : idx) ++size[labels[i]];

  std::vector<double> s(m, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t a = 0; a < m; ++a) {
    const auto own = labels[idx[a]];
    if (size[own] <= 1) continue;
    std::vector<double> sum(n_clusters, 0.0);
    for (std::size_t b = 0; b < m; ++b) {
      if (a == b) continue;
      sum[labels[idx[b]]] += std::sqrt(sq_dist(x.row(idx[a]), x.row(idx[b]), x.dim));
    }
    const double in = sum[own] / static_cast<double>(size[own] - 1);
    double out = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_clusters; ++c)
      if (c != own && size[c] > 0) out = std::min(out, sum[c] / static_cast<double>(size[c]));
    const double denom = std::max(in, out);
    s[a] = denom > 0.0 && std::isfinite(out) ? (out - in) / denom : 0.0;
  }
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(m);
}

std::size_t choose_k(std::span<const KScore> scores, double tie_band) {
  if (scores.empty()) return 1;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& s : scores) best = std::max(best, s.silhouette);
  std::size_t k = std::numeric_limits<std::size_t>::max();
  for (const auto& s : scores)
    if (s.silhouette >= best - tie_band) k = std::min(k, s.k);
  return k;
}

SelectKResult select_k(const Embeddings& x, const SelectKOptions& options) {
  if (x.n < 2) throw Error(ErrorCode::TooFewKernels, "select_k needs at least two points");
  SelectKResult out;
  double max_d2 = 0.0;
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t j = i + 1; j < x.n; ++j) max_d2 = std::max(max_d2, sq_dist(x.row(i), x.row(j), x.dim));
  if (std::sqrt(max_d2) < options.identity_eps) return out;

  const std::size_t k_max = std::min(options.k_max == 0 ? std::min<std::size_t>(20, x.n - 1) : options.k_max, x.n - 1);
  for (std::size_t k = std::max<std::size_t>(2, options.k_min); k <= k_max; ++k) {
    auto km = kmeans(x, k, derive_seed({options.seed, kSweepTag, k}), options.kmeans);
    std::size_t distinct = 0;
    compact_labels(km.assignment, &distinct);
    if (distinct < 2) continue;
    out.scores.push_back({k, silhouette_score(x, km.assignment, 2000, options.seed)});
  }
  out.k = choose_k(out.scores, options.tie_band);
  return out;
}

std::vector<std::pair<std::uint64_t, std::uint32_t>> ClusterPlan::assignment() const {
  std::vector<std::pair<std::uint64_t, std::uint32_t>> out;
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (auto id : clusters[c].members) out.emplace_back(id, static_cast<std::uint32_t>(c));
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t ClusterPlan::total_weight() const {
  std::size_t w = 0;
  for (const auto& c : clusters) w += c.weight();
  return w;
}

nlohmann::json ClusterPlan::to_json() const {
  nlohmann::json cl = nlohmann::json::array();
  for (const auto& c : clusters)
    cl.push_back({{"rep", c.representative}, {"weight", c.weight()}, {"members", c.members}});
  return {{"K", k}, {"silhouette", silhouette}, {"clusters", cl}};
}

ClusterPlan ClusterPlan::from_json(const nlohmann::json& j) {
  try {
    ClusterPlan p;
    p.k = j.at("K").get<std::size_t>();
    p.silhouette = j.at("silhouette").get<double>();
    for (const auto& c : j.at("clusters")) {
      PlanCluster pc;
      pc.representative = c.at("rep").get<std::uint64_t>();
      pc.members = c.at("members").get<std::vector<std::uint64_t>>();
      if (pc.members.empty() || c.at("weight").get<std::size_t>() != pc.members.size())
        throw Error(ErrorCode::BadArtifact, "plan cluster weight does not match its members");
      p.clusters.push_back(std::move(pc));
    }
    if (p.clusters.size() != p.k) throw Error(ErrorCode::BadArtifact, "plan K does not match cluster count");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadArtifact, std::string("cluster plan: ") + e.what());
  }
}

ClusterPlan plan_from_labels(std::span<const std::uint64_t> launch_ids, std::span<const std::uint32_t> labels) {
  if (launch_ids.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "plan: ids and labels differ in length");
  std::map<std::uint32_t, std::vector<std::uint64_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(launch_ids[i]);
  ClusterPlan plan;
  for (auto& [_, members] : groups) {
    std::sort(members.begin(), members.end());
    plan.clusters.push_back({members.front(), std::move(members)});
  }
  std::sort(plan.clusters.begin(), plan.clusters.end(),
            [](const auto& a, const auto& b) { return a.representative < b.representative; });
  plan.k = plan.clusters.size();
  return plan;
}

ClusterPlan make_plan(const Embeddings& x, std::span<const std::uint64_t> launch_ids, std::size_t k,
                      std::uint64_t seed, const KMeansOptions& options) {
  if (launch_ids.size() != x.n) throw Error(ErrorCode::ShapeMismatch, "plan: one launch id per embedding required");
  auto km = kmeans(x, k, seed, options);
  auto plan = plan_from_labels(launch_ids, km.assignment);
  std::size_t distinct = 0;
  compact_labels(km.assignment, &distinct);
  plan.silhouette = distinct >= 2 ? silhouette_score(x, km.assignment, 2000, seed) : 0.0;
  return plan;
}

double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "ARI: labelings differ in length");
  const double n = static_cast<double>(a.size());
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> table;
  std::map<std::uint32_t, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double v) { return v * (v - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [_, v] : table) index += c2(v);
  for (const auto& [_, v] : ra) sa += c2(v);
  for (const auto& [_, v] : rb) sb += c2(v);
  const double expected = n < 2.0 ? 0.0 : sa * sb / c2(n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return index == max_index ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

Embeddings normalize_rows(const Embeddings& x) {
  Embeddings out = x;
  for (std::size_t i = 0; i < x.n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.dim; ++j) s += x.row(i)[j] * x.row(i)[j];
    if (s == 0.0) continue;
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t j = 0; j < x.dim; ++j) out.row(i)[j] *= inv;
  }
  return out;
}

}  // namespace gcls
