#include <gtest/gtest.h>

#include "gcls/error.hpp"
#include "gcls/evaluator.hpp"
#include "test_support.hh"

namespace gcls {
namespace {

MetricRecord rec(std::uint64_t id, std::string name, double cycles, double time, std::uint64_t count) {
  MetricRecord r;
  r.launch_id = id;
  r.kernel_name = std::move(name);
  r.cycles = cycles;
  r.exec_time = time;
  r.instruction_count = count;
  return r;
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

ClusterPlan identity_plan(const MetricTable& t) {
  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> labels;
  for (const auto& r : t.records()) {
    ids.push_back(r.launch_id);
    labels.push_back(static_cast<std::uint32_t>(ids.size() - 1));
  }
  return plan_from_labels(ids, labels);
}

// Two clusters: {0, 1, 2} represented by 0 and {3} by itself.
struct TwoClusters : ::testing::Test {
  MetricTable table{[] {
    std::vector<MetricRecord> v{rec(0, "a", 10, 1.0, 100), rec(1, "a", 11, 1.0, 100), rec(2, "a", 12, 1.0, 100),
                                rec(3, "b", 20, 2.0, 300)};
    v[0].l1_hit = 0.9;
    v[3].l1_hit = 0.5;
    v[1].l1_hit = v[2].l1_hit = 0.7;
    return v;
  }()};
  ClusterPlan plan = plan_from_labels(std::vector<std::uint64_t>{0, 1, 2, 3}, std::vector<std::uint32_t>{0, 0, 0, 1});
};

TEST_F(TwoClusters, AdditiveIsWeightedSum) {
  ASSERT_EQ(plan.clusters[0].weight(), 3u);
  EXPECT_DOUBLE_EQ(reconstruct_additive(plan, table, Metric::Cycles), 3 * 10.0 + 1 * 20.0);
}

TEST_F(TwoClusters, RatioIsWeightNormalized) {
  EXPECT_DOUBLE_EQ(reconstruct_ratio(plan, table, Metric::L1Hit), (3 * 0.9 + 0.5) / 4);
  EXPECT_DOUBLE_EQ(reconstruct_ratio(plan, table, Metric::L1Hit), 0.8);
  // Cycles weighting: weights 3*10 and 1*20.
  EXPECT_DOUBLE_EQ(reconstruct_ratio(plan, table, Metric::L1Hit, RatioWeighting::Cycles), (30 * 0.9 + 20 * 0.5) / 50);
}

TEST_F(TwoClusters, MissingMetricNamesTheKernel) {
  try {
    reconstruct_ratio(plan, table, Metric::Ipc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingMetric);
    EXPECT_NE(std::string(e.what()).find("launch_id 0"), std::string::npos);
  }
  auto stray = plan;
  stray.clusters[1].representative = 99;
  EXPECT_EQ(code_of([&] { reconstruct_additive(stray, table, Metric::Cycles); }), ErrorCode::MissingMetric);
}

TEST_F(TwoClusters, SpeedupCountsRepresentativesOnce) {
  EXPECT_DOUBLE_EQ(speedup(plan, table), 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(speedup(identity_plan(table), table), 1.0);
}

TEST(Evaluator, AdditiveWithConstantMetricIsNTimesM) {
  Rng rng(1);
  std::vector<MetricRecord> v;
  for (std::uint64_t i = 0; i < 40; ++i) v.push_back(rec(i, "k", 7.5, 1.0, 1));
  const MetricTable t(v);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::uint64_t> ids;
    std::vector<std::uint32_t> lab;
    for (std::uint64_t i = 0; i < 40; ++i) {
      ids.push_back(i);
      lab.push_back(static_cast<std::uint32_t>(rng.index(1 + trial)));
    }
    EXPECT_DOUBLE_EQ(reconstruct_additive(plan_from_labels(ids, lab), t, Metric::Cycles), 40 * 7.5);
  }
}

TEST(SamplingError, Examples) {
  EXPECT_DOUBLE_EQ(sampling_error(100, 90), 10.0);
  EXPECT_DOUBLE_EQ(sampling_error(100, 100), 0.0);
  EXPECT_DOUBLE_EQ(sampling_error(100, 110), 10.0);
  EXPECT_EQ(code_of([] { sampling_error(0, 1); }), ErrorCode::ZeroFull);
}

TEST(SamplingError, ScaleInvariant) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const double full = rng.uniform(1, 1e6), sampled = rng.uniform(0, 2e6), lambda = std::exp(rng.uniform(-10, 10));
    EXPECT_NEAR(sampling_error(lambda * full, lambda * sampled), sampling_error(full, sampled),
                1e-12 * std::max(1.0, sampling_error(full, sampled)));
  }
}

TEST(Speedup, Examples) {
  // Full 220 s over reps totalling 10 s.
  std::vector<MetricRecord> v{rec(0, "a", 1, 4.0, 1), rec(1, "b", 1, 6.0, 1)};
  for (std::uint64_t i = 2; i < 23; ++i) v.push_back(rec(i, "a", 1, 10.0, 1));
  const MetricTable t(v);
  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> lab;
  for (std::uint64_t i = 0; i < 23; ++i) {
    ids.push_back(i);
    lab.push_back(i == 1 ? 1u : 0u);
  }
  EXPECT_DOUBLE_EQ(speedup(plan_from_labels(ids, lab), t), 22.0);

  // 22 minutes simulated in full against 10.3 s of representatives.
  const MetricTable nw({rec(0, "nw", 1, 10.3, 1), rec(1, "nw", 1, 22 * 60 - 10.3, 1)});
  const auto one = plan_from_labels(std::vector<std::uint64_t>{0, 1}, std::vector<std::uint32_t>{0, 0});
  EXPECT_NEAR(speedup(one, nw), 128.0, 0.5);

  std::vector<MetricRecord> raw{rec(0, "z", 1, 0.0, 1), rec(1, "z", 1, 3.0, 1)};
  const MetricTable zt(raw);
  EXPECT_EQ(code_of([&] { speedup(one, zt); }), ErrorCode::ZeroSampledTime);
}

TEST(Sieve, DistinctNamesGiveIdentityPlan) {
  std::vector<MetricRecord> v;
  for (std::uint64_t i = 0; i < 30; ++i) v.push_back(rec(i, "kernel_" + std::to_string(i), 100, 1.0, 100 + i));
  const MetricTable t(v);
  const auto p = sieve_baseline(t);
  EXPECT_EQ(p.k, 30u);
  EXPECT_DOUBLE_EQ(speedup(p, t), 1.0);
}

TEST(Sieve, IdenticalCountsGiveOneCluster) {
  std::vector<MetricRecord> v;
  for (std::uint64_t i = 5; i < 25; ++i) v.push_back(rec(i, "same", 100, 1.0, 1000));
  const auto p = sieve_baseline(MetricTable(v));
  EXPECT_EQ(p.k, 1u);
  EXPECT_EQ(p.clusters[0].representative, 5u);
}

TEST(Sieve, BimodalCountsAreStratified) {
  std::vector<MetricRecord> v;
  for (std::uint64_t i = 0; i < 100; ++i) v.push_back(rec(i, "mm", 100, 1.0, i % 2 ? 10000 : 100));
  // CoV oracle: mean 5050, std 4950 -> 0.98 > 0.25.
  const auto p = sieve_baseline(MetricTable(v));
  EXPECT_GE(p.k, 2u);
  for (const auto& c : p.clusters) {
    const auto first = c.members.front() % 2;
    for (auto id : c.members) EXPECT_EQ(id % 2, first);
  }
  EXPECT_EQ(code_of([&] { sieve_baseline(MetricTable(v), 0.0); }), ErrorCode::BadConfig);
}

TEST(Sieve, StratifiesOnlyOnce) {
  // Eight count levels: one quartile split leaves two levels per stratum.
  std::vector<MetricRecord> v;
  for (std::uint64_t i = 0; i < 80; ++i) v.push_back(rec(i, "x", 1, 1.0, 1ull << (2 * (i % 8))));
  EXPECT_EQ(sieve_baseline(MetricTable(v)).k, 4u);
}

TEST(Report, IdentityPlanIsExact) {
  std::vector<MetricRecord> v;
  Rng rng(3);
  for (std::uint64_t i = 0; i < 12; ++i) {
    auto r = rec(i, "k", rng.uniform(100, 1000), rng.uniform(1, 2), 10 + i);
    r.l1_hit = rng.uniform();
    r.l2_hit = rng.uniform();
    r.occupancy = rng.uniform();
    r.ipc = rng.uniform(0.5, 3.0);
    v.push_back(r);
  }
  const MetricTable t(v);
  const auto r = compile_report(identity_plan(t), t);
  EXPECT_EQ(r.k, 12u);
  EXPECT_EQ(r.speedup, 1.0);
  for (const auto& name : {"cycles", "l1_hit", "l2_hit", "occupancy", "ipc"}) {
    ASSERT_EQ(r.metrics.count(name), 1u) << name;
    EXPECT_NEAR(r.metrics.at(name).error_percent, 0.0, 1e-12) << name;
  }
  const auto j = r.to_json();
  EXPECT_EQ(j.at("K"), 12);
  EXPECT_TRUE(j.at("metrics").at("cycles").contains("error_percent"));
}

TEST(Report, MissingColumnIsOmitted) {
  std::vector<MetricRecord> v{rec(0, "a", 10, 1, 1), rec(1, "a", 12, 1, 1)};
  v[0].ipc = 1.0;  // only one kernel has it
  v[0].l1_hit = 0.5;
  v[1].l1_hit = 0.7;
  const MetricTable t(v);
  const auto r = compile_report(plan_from_labels(std::vector<std::uint64_t>{0, 1}, std::vector<std::uint32_t>{0, 0}), t);
  EXPECT_EQ(r.metrics.count("ipc"), 0u);
  EXPECT_EQ(r.metrics.count("occupancy"), 0u);
  EXPECT_NEAR(r.metrics.at("l1_hit").full, 0.6, 1e-15);
  EXPECT_NEAR(r.metrics.at("cycles").error_percent, 2.0 / 22.0 * 100.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.speedup, 2.0);
}

TEST(Report, PlanMustCoverTable) {
  const MetricTable t({rec(0, "a", 1, 1, 1), rec(1, "a", 1, 1, 1), rec(2, "a", 1, 1, 1)});
  const auto partial = plan_from_labels(std::vector<std::uint64_t>{0, 1}, std::vector<std::uint32_t>{0, 1});
  EXPECT_EQ(code_of([&] { compile_report(partial, t); }), ErrorCode::MissingMetric);
}

TEST(MetricTable, JsonRoundTripAndValidation) {
  testing::TempDir dir("metrics");
  std::vector<MetricRecord> v{rec(3, "a", 10.5, 0.25, 77), rec(1, "b", 1e9, 3.0, 1)};
  v[0].occupancy = 0.5;
  v[1].class_id = 2;
  const MetricTable t(v);
  t.save(dir / "m.json");
  const auto back = MetricTable::load(dir / "m.json");
  EXPECT_EQ(back.to_json(), t.to_json());
  EXPECT_EQ(back.at(3).occupancy, 0.5);
  EXPECT_FALSE(back.at(3).ipc.has_value());
  EXPECT_EQ(back.at(1).class_id, 2u);
  EXPECT_TRUE(back.has_column(Metric::Cycles));
  EXPECT_FALSE(back.has_column(Metric::Occupancy));

  auto j = t.to_json();
  j[0]["cycles"] = 0;
  EXPECT_EQ(code_of([&] { MetricTable::from_json(j); }), ErrorCode::BadArtifact);
  EXPECT_EQ(code_of([&] { MetricTable(std::vector<MetricRecord>{v[0], v[0]}); }), ErrorCode::DuplicateLaunchId);
  EXPECT_EQ(code_of([&] { MetricTable::load(dir / "absent.json"); }), ErrorCode::MissingFile);
}

}  // namespace
}  // namespace gcls
