#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "gcls/cluster.hpp"
#include "gcls/error.hpp"
#include "test_support.hh"

namespace gcls {
namespace {

Embeddings points(std::vector<std::vector<double>> rows) {
  Embeddings e(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), e.row(i));
  return e;
}

Embeddings blobs(Rng& rng, std::size_t per_blob, std::vector<std::vector<double>> centers, double sd) {
  const std::size_t d = centers[0].size();
  Embeddings e(per_blob * centers.size(), d);
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (std::size_t i = 0; i < per_blob; ++i)
      for (std::size_t j = 0; j < d; ++j) e.row(c * per_blob + i)[j] = centers[c][j] + rng.normal(0.0, sd);
  return e;
}

double dist(const Embeddings& x, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.dim; ++k) s += (x.row(i)[k] - x.row(j)[k]) * (x.row(i)[k] - x.row(j)[k]);
  return std::sqrt(s);
}

double silhouette_oracle(const Embeddings& x, const std::vector<std::uint32_t>& lab) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.n; ++i) {
    std::map<std::uint32_t, std::pair<double, std::size_t>> by;
    for (std::size_t j = 0; j < x.n; ++j) {
      if (j == i) continue;
      by[lab[j]].first += dist(x, i, j);
      by[lab[j]].second += 1;
    }
    if (by.count(lab[i]) == 0) continue;  // singleton
    const double a = by[lab[i]].first / static_cast<double>(by[lab[i]].second);
    double b = std::numeric_limits<double>::infinity();
    for (auto& [c, s] : by)
      if (c != lab[i]) b = std::min(b, s.first / static_cast<double>(s.second));
    if (std::max(a, b) > 0.0) total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(x.n);
}

double inertia_of(const Embeddings& x, const std::vector<std::uint32_t>& lab, std::size_t k) {
  Embeddings c(k, x.dim);
  std::vector<double> cnt(k, 0.0);
  for (std::size_t i = 0; i < x.n; ++i) {
    cnt[lab[i]] += 1;
    for (std::size_t j = 0; j < x.dim; ++j) c.row(lab[i])[j] += x.row(i)[j];
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t j = 0; j < x.dim; ++j) {
      const double d = x.row(i)[j] - c.row(lab[i])[j] / cnt[lab[i]];
      s += d * d;
    }
  return s;
}

TEST(KMeans, FourPointsMatchBruteForce) {
  const auto x = points({{0}, {1}, {10}, {11}});
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < 15; ++mask) {
    std::vector<std::uint32_t> lab(4);
    for (unsigned i = 0; i < 4; ++i) lab[i] = (mask >> i) & 1u;
    best = std::min(best, inertia_of(x, lab, 2));
  }
  const auto r = kmeans(x, 2, 0);
  EXPECT_DOUBLE_EQ(r.inertia, best);
  EXPECT_DOUBLE_EQ(best, 1.0);
  EXPECT_EQ(r.assignment[0], r.assignment[1]);
  EXPECT_EQ(r.assignment[2], r.assignment[3]);
  EXPECT_NE(r.assignment[0], r.assignment[2]);
  std::vector<double> c{r.centroids.row(0)[0], r.centroids.row(1)[0]};
  std::sort(c.begin(), c.end());
  EXPECT_DOUBLE_EQ(c[0], 0.5);
  EXPECT_DOUBLE_EQ(c[1], 10.5);
}

TEST(KMeans, Extremes) {
  Rng rng(1);
  const auto x = blobs(rng, 7, {{0, 0, 0}, {3, 1, 2}}, 1.0);
  EXPECT_NEAR(kmeans(x, x.n, 3).inertia, 0.0, 1e-24);
  const auto one = kmeans(x, 1, 3);
  for (std::size_t j = 0; j < x.dim; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.n; ++i) m += x.row(i)[j];
    EXPECT_NEAR(one.centroids.row(0)[j], m / static_cast<double>(x.n), 1e-12);
  }
  EXPECT_THROW(kmeans(x, 0, 0), Error);
  EXPECT_THROW(kmeans(x, x.n + 1, 0), Error);
}

TEST(KMeans, InertiaNonIncreasingAndSeeded) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto x = blobs(rng, 30, {{0, 0}, {4, 0}, {0, 4}, {3, 3}}, 1.5);
    const auto r = kmeans(x, 4, t);
    ASSERT_FALSE(r.history.empty());
    for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1] * (1 + 1e-12));
    EXPECT_NEAR(r.history.back(), r.inertia, 1e-9 * r.inertia);
    EXPECT_NEAR(inertia_of(x, r.assignment, 4), r.inertia, 1e-9 * r.inertia);
    EXPECT_EQ(kmeans(x, 4, t).assignment, r.assignment);
  }
}

TEST(KMeans, IsometryInvariant) {
  Rng rng(3);
  const auto x = blobs(rng, 20, {{0, 0}, {5, 1}, {1, 6}}, 0.7);
  auto y = x;
  const double a = 1.1;
  for (std::size_t i = 0; i < x.n; ++i) {
    y.row(i)[0] = std::cos(a) * x.row(i)[0] - std::sin(a) * x.row(i)[1] + 17.0;
    y.row(i)[1] = std::sin(a) * x.row(i)[0] + std::cos(a) * x.row(i)[1] - 4.0;
  }
  const auto rx = kmeans(x, 3, 9), ry = kmeans(y, 3, 9);
  EXPECT_NEAR(adjusted_rand_index(rx.assignment, ry.assignment), 1.0, 1e-12);
  EXPECT_NEAR(rx.inertia, ry.inertia, 1e-9 * rx.inertia);
}

TEST(Silhouette, MatchesOracle) {
  const auto x = points({{0}, {1}, {10}, {11}});
  const std::vector<std::uint32_t> lab{0, 0, 1, 1};
  // a = 1, b = 10.5 or 9.5 for every point.
  const double expected = ((1 - 1 / 10.5) + (1 - 1 / 9.5)) / 2;
  EXPECT_NEAR(silhouette_oracle(x, lab), expected, 1e-15);
  EXPECT_NEAR(silhouette_score(x, lab), expected, 1e-12);

  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto y = blobs(rng, 15, {{0, 0, 0}, {2, 0, 1}, {0, 3, 0}}, 1.0);
    std::vector<std::uint32_t> l(y.n);
    for (auto& v : l) v = static_cast<std::uint32_t>(rng.index(4));
    l[0] = 0;
    l[1] = 1;
    EXPECT_NEAR(silhouette_score(y, l), silhouette_oracle(y, l), 1e-12);
  }
}

TEST(Silhouette, Degenerate) {
  const auto same = points({{1, 1}, {1, 1}, {1, 1}, {1, 1}});
  EXPECT_EQ(silhouette_score(same, std::vector<std::uint32_t>{0, 0, 1, 1}), 0.0);
  const auto x = points({{0}, {1}, {10}});
  // The singleton at 10 scores 0.
  EXPECT_NEAR(silhouette_score(x, std::vector<std::uint32_t>{0, 0, 1}), silhouette_oracle(x, {0, 0, 1}), 1e-15);
  try {
    silhouette_score(x, std::vector<std::uint32_t>{2, 2, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleCluster);
  }
}

TEST(Silhouette, TrueLabelsBeatRandomLabels) {
  Rng rng(5);
  const auto x = blobs(rng, 25, {{0, 0}, {6, 0}, {0, 6}}, 1.0);
  std::vector<std::uint32_t> truth(x.n), noise(x.n);
  for (std::size_t i = 0; i < x.n; ++i) {
    truth[i] = static_cast<std::uint32_t>(i / 25);
    noise[i] = static_cast<std::uint32_t>(rng.index(3));
  }
  EXPECT_GT(silhouette_score(x, truth), silhouette_score(x, noise) + 0.3);
}

TEST(ChooseK, TieBandPrefersSmallerK) {
  std::vector<KScore> s{{2, 0.40}, {3, 0.75}, {4, 0.820}, {5, 0.815}, {6, 0.70}};
  EXPECT_EQ(choose_k(s, 0.01), 4u);
  std::vector<KScore> s2{{4, 0.820}, {5, 0.829}};
  EXPECT_EQ(choose_k(s2, 0.01), 4u);
  std::vector<KScore> s3{{4, 0.80}, {5, 0.85}};
  EXPECT_EQ(choose_k(s3, 0.01), 5u);
}

TEST(SelectK, RecoversBlobCount) {
  Rng rng(6);
  const auto x = blobs(rng, 20, {{0, 0}, {8, 0}, {0, 8}}, 0.5);
  const auto r = select_k(x);
  EXPECT_EQ(r.k, 3u);
  EXPECT_EQ(r.scores.front().k, 2u);
  EXPECT_EQ(r.scores.back().k, 20u);
}

TEST(SelectK, IdenticalPointsGiveOne) {
  const auto x = points({{2, 3}, {2, 3}, {2, 3}, {2, 3}, {2, 3}});
  const auto r = select_k(x);
  EXPECT_EQ(r.k, 1u);
  EXPECT_TRUE(r.scores.empty());
}

TEST(Plan, RepresentativeIsSmallestLaunchId) {
  const std::vector<std::uint64_t> ids{5, 2, 9, 7, 4};
  const std::vector<std::uint32_t> lab{1, 1, 1, 0, 0};
  const auto p = plan_from_labels(ids, lab);
  ASSERT_EQ(p.k, 2u);
  EXPECT_EQ(p.clusters[0].representative, 2u);
  EXPECT_EQ(p.clusters[0].members, (std::vector<std::uint64_t>{2, 5, 9}));
  EXPECT_EQ(p.clusters[1].representative, 4u);
  EXPECT_EQ(p.total_weight(), 5u);
  const auto asg = p.assignment();
  EXPECT_EQ(asg.front(), (std::pair<std::uint64_t, std::uint32_t>{2, 0}));
  EXPECT_EQ(asg.back(), (std::pair<std::uint64_t, std::uint32_t>{9, 0}));
}

TEST(Plan, WeightsSumToNAndJsonRoundTrips) {
  Rng rng(7);
  const auto x = blobs(rng, 10, {{0, 0}, {5, 5}, {9, 0}, {3, 9}}, 0.4);
  std::vector<std::uint64_t> ids(x.n);
  for (std::size_t i = 0; i < x.n; ++i) ids[i] = 1000 - 3 * i;
  for (std::size_t k : {1u, 2u, 4u, 40u}) {
    const auto p = make_plan(x, ids, k, 1);
    EXPECT_EQ(p.k, k);
    EXPECT_EQ(p.total_weight(), x.n);
    for (std::size_t c = 1; c < p.clusters.size(); ++c)
      EXPECT_LT(p.clusters[c - 1].representative, p.clusters[c].representative);
    const auto back = ClusterPlan::from_json(p.to_json());
    EXPECT_EQ(back.to_json(), p.to_json());
  }
  auto j = make_plan(x, ids, 4, 1).to_json();
  j["K"] = 3;
  EXPECT_THROW(ClusterPlan::from_json(j), Error);
}

TEST(Ari, MatchesReference) {
  Rng rng(8);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 2 + rng.index(60);
    std::vector<std::uint32_t> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<std::uint32_t>(rng.index(4));
      b[i] = rng.uniform() < 0.7 ? a[i] : static_cast<std::uint32_t>(rng.index(5));
    }
    EXPECT_NEAR(adjusted_rand_index(a, b), testing::reference_ari(a, b), 1e-12);
  }
  const std::vector<std::uint32_t> a{0, 0, 1, 1, 2}, relabeled{7, 7, 3, 3, 9};
  EXPECT_DOUBLE_EQ(adjusted_rand_index(a, relabeled), 1.0);
}

TEST(NormalizeRows, UnitNormsAndZeroRowsKept) {
  const auto y = normalize_rows(points({{3, 4}, {0, 0}}));
  EXPECT_DOUBLE_EQ(y.row(0)[0], 0.6);
  EXPECT_DOUBLE_EQ(y.row(0)[1], 0.8);
  EXPECT_EQ(y.row(1)[0], 0.0);
}

}  // namespace
}  // namespace gcls
