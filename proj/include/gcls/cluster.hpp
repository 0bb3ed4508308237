#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

namespace gcls {

/// Row-major N x d point matrix.
struct Embeddings {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  Embeddings() = default;
  Embeddings(std::size_t rows, std::size_t cols) : n(rows), dim(cols), values(rows * cols, 0.0) {}
  const double* row(std::size_t i) const { return values.data() + i * dim; }
  double* row(std::size_t i) { return values.data() + i * dim; }
};

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iter = 300;
  double rel_tol = 1e-6;
};

struct KMeansResult {
  std::vector<std::uint32_t> assignment;
  Embeddings centroids;
  double inertia = 0.0;
  /// Inertia after every Lloyd iteration of the winning restart.
  std::vector<double> history;
};

/// k-means++ seeding and Lloyd iterations; the restart with the lowest
/// inertia wins, ties to the lower restart index.
KMeansResult kmeans(const Embeddings& x, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

/// Mean silhouette. Singleton-cluster points score 0, as do points with
/// a = b = 0. Larger inputs are scored on a seeded subsample.
double silhouette_score(const Embeddings& x, std::span<const std::uint32_t> assignment,
                        std::size_t max_points = 2000, std::uint64_t seed = 0);

struct SelectKOptions {
  std::size_t k_min = 2;
  std::size_t k_max = 0;  // 0 means min(20, N - 1)
  double tie_band = 0.01;
  double identity_eps = 1e-9;
  std::uint64_t seed = 0;
  KMeansOptions kmeans;
};

struct KScore {
  std::size_t k = 0;
  double silhouette = 0.0;
};

/// Smallest K whose score is within tie_band of the best.
std::size_t choose_k(std::span<const KScore> scores, double tie_band);

struct SelectKResult {
  std::size_t k = 1;
  std::vector<KScore> scores;
};

SelectKResult select_k(const Embeddings& x, const SelectKOptions& options = {});

struct PlanCluster {
  std::uint64_t representative = 0;
  std::vector<std::uint64_t> members;  // ascending
  std::size_t weight() const { return members.size(); }
};

struct ClusterPlan {
  std::size_t k = 0;
  double silhouette = 0.0;
  std::vector<PlanCluster> clusters;  // ordered by representative

  /// Cluster index of every launch id, in ascending launch id order.
  std::vector<std::pair<std::uint64_t, std::uint32_t>> assignment() const;
  std::size_t total_weight() const;
  nlohmann::json to_json() const;
  static ClusterPlan from_json(const nlohmann::json& j);
};

/// Builds a plan from cluster labels: representative = smallest launch id,
/// clusters renumbered by representative.
ClusterPlan plan_from_labels(std::span<const std::uint64_t> launch_ids, std::span<const std::uint32_t> labels);

ClusterPlan make_plan(const Embeddings& x, std::span<const std::uint64_t> launch_ids, std::size_t k,
                      std::uint64_t seed, const KMeansOptions& options = {});

/// Adjusted Rand index between two labelings of the same points.
double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

/// Row-wise L2 normalization (rows with zero norm are left as is).
Embeddings normalize_rows(const Embeddings& x);

}  // namespace gcls
