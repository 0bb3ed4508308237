#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcls/cluster.hpp"

namespace gcls {

/// Per-kernel ground truth.
struct MetricRecord {
  std::uint64_t launch_id = 0;
  std::string kernel_name;
  double cycles = 0.0;
  double exec_time = 0.0;
  std::uint64_t instruction_count = 0;
  std::optional<double> l1_hit, l2_hit, occupancy, ipc;
  /// Planted class of synthetic kernels; not part of the evaluation.
  std::optional<std::uint32_t> class_id;
};

enum class Metric : std::uint8_t { Cycles, ExecTime, InstructionCount, L1Hit, L2Hit, Occupancy, Ipc };
const char* metric_name(Metric m);
bool is_additive(Metric m);

class MetricTable {
 public:
  MetricTable() = default;
  explicit MetricTable(std::vector<MetricRecord> records);

  const std::vector<MetricRecord>& records() const { return records_; }
  const MetricRecord& at(std::uint64_t launch_id) const;
  bool contains(std::uint64_t launch_id) const { return index_.count(launch_id) > 0; }
  std::size_t size() const { return records_.size(); }
  /// Value of a metric; nullopt when the column is absent for this kernel.
  std::optional<double> value(std::uint64_t launch_id, Metric m) const;
  /// True when every kernel carries the metric.
  bool has_column(Metric m) const;

  nlohmann::json to_json() const;
  static MetricTable from_json(const nlohmann::json& j);
  static MetricTable load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

 private:
  std::vector<MetricRecord> records_;
  std::map<std::uint64_t, std::size_t> index_;
};

/// sum_c weight_c * metric(rep_c)
double reconstruct_additive(const ClusterPlan& plan, const MetricTable& table, Metric m);

enum class RatioWeighting : std::uint8_t { Count, Cycles };

/// Weighted mean of representative values. Count weighting uses cluster
/// sizes; Cycles weighting uses weight_c * cycles(rep_c).
double reconstruct_ratio(const ClusterPlan& plan, const MetricTable& table, Metric m,
                         RatioWeighting weighting = RatioWeighting::Count);

/// |full - sampled| / full * 100
double sampling_error(double full, double sampled);

/// Total exec time over the exec time of the representatives.
double speedup(const ClusterPlan& plan, const MetricTable& table);

/// Name grouping with one level of instruction-count quartile strata for
/// groups whose CoV exceeds the threshold.
ClusterPlan sieve_baseline(const MetricTable& table, double cov_threshold = 0.25);

struct MetricReport {
  double full = 0.0;
  double sampled = 0.0;
  double error_percent = 0.0;
};

struct EvalReport {
  std::map<std::string, MetricReport> metrics;
  double speedup = 0.0;
  std::size_t k = 0;

  nlohmann::json to_json() const;
};

EvalReport compile_report(const ClusterPlan& plan, const MetricTable& table,
                          RatioWeighting weighting = RatioWeighting::Count);

}  // namespace gcls
