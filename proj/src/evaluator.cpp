#include "gcls/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "gcls/error.hpp"

namespace gcls {

namespace {

constexpr Metric kRatioMetrics[] = {Metric::L1Hit, Metric::L2Hit, Metric::Occupancy, Metric::Ipc};

std::string id_str(std::uint64_t id) { return "launch_id " + std::to_string(id); }

double require(const MetricTable& table, std::uint64_t id, Metric m) {
  if (!table.contains(id)) throw Error(ErrorCode::MissingMetric, id_str(id) + " not in metric table");
  auto v = table.value(id, m);
  if (!v) throw Error(ErrorCode::MissingMetric, id_str(id) + " has no " + metric_name(m));
  return *v;
}

void set_optional(nlohmann::json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

std::optional<double> get_optional(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

double cov(const std::vector<const MetricRecord*>& group) {
  double mean = 0.0;
  for (auto* r : group) mean += static_cast<double>(r->instruction_count);
  mean /= static_cast<double>(group.size());
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (auto* r : group) {
    const double d = static_cast<double>(r->instruction_count) - mean;
    var += d * d;
  }
  return std::sqrt(var / static_cast<double>(group.size())) / mean;
}

// Splits by instruction-count quartile bins; empty bins vanish.
std::vector<std::vector<const MetricRecord*>> quartile_bins(const std::vector<const MetricRecord*>& group) {
  std::vector<double> counts;
  for (auto* r : group) counts.push_back(static_cast<double>(r->instruction_count));
  std::sort(counts.begin(), counts.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(counts.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, counts.size() - 1);
    return counts[lo] + (pos - static_cast<double>(lo)) * (counts[hi] - counts[lo]);
  };
  const double cuts[3] = {quantile(0.25), quantile(0.5), quantile(0.75)};
  std::vector<std::vector<const MetricRecord*>> bins(4);
  for (auto* r : group) {
    const double c = static_cast<double>(r->instruction_count);
    std::size_t b = 0;
    while (b < 3 && c > cuts[b]) ++b;
    bins[b].push_back(r);
  }
  std::erase_if(bins, [](const auto& b) { return b.empty(); });
  return bins;
}

void stratify(const std::vector<const MetricRecord*>& group, double threshold,
              std::vector<std::vector<const MetricRecord*>>& out) {
  if (group.size() < 2 || cov(group) <= threshold) {
    out.push_back(group);
    return;
  }
  for (auto& b : quartile_bins(group)) out.push_back(std::move(b));
}

}  // namespace

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::Cycles: return "cycles";
    case Metric::ExecTime: return "exec_time";
    case Metric::InstructionCount: return "instruction_count";
    case Metric::L1Hit: return "l1_hit";
    case Metric::L2Hit: return "l2_hit";
    case Metric::Occupancy: return "occupancy";
    case Metric::Ipc: return "ipc";
  }
  return "?";
}

bool is_additive(Metric m) { return m == Metric::Cycles || m == Metric::ExecTime || m == Metric::InstructionCount; }

MetricTable::MetricTable(std::vector<MetricRecord> records) : records_(std::move(records)) {
  std::sort(records_.begin(), records_.end(), [](const auto& a, const auto& b) { return a.launch_id < b.launch_id; });
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!index_.emplace(records_[i].launch_id, i).second)
      throw Error(ErrorCode::DuplicateLaunchId, id_str(records_[i].launch_id) + " appears twice in metric table");
  }
}

const MetricRecord& MetricTable::at(std::uint64_t launch_id) const {
  auto it = index_.find(launch_id);
  if (it == index_.end()) throw Error(ErrorCode::MissingMetric, id_str(launch_id) + " not in metric table");
  return records_[it->second];
}

std::optional<double> MetricTable::value(std::uint64_t launch_id, Metric m) const {
  const auto& r = at(launch_id);
  switch (m) {
    case Metric::Cycles: return r.cycles;
    case Metric::ExecTime: return r.exec_time;
    case Metric::InstructionCount: return static_cast<double>(r.instruction_count);
    case Metric::L1Hit: return r.l1_hit;
    case Metric::L2Hit: return r.l2_hit;
    case Metric::Occupancy: return r.occupancy;
    case Metric::Ipc: return r.ipc;
  }
  return std::nullopt;
}

bool MetricTable::has_column(Metric m) const {
  return !records_.empty() &&
         std::all_of(records_.begin(), records_.end(), [&](const auto& r) { return value(r.launch_id, m).has_value(); });
}

nlohmann::json MetricTable::to_json() const {
  auto out = nlohmann::json::array();
  for (const auto& r : records_) {
    nlohmann::json j{{"launch_id", r.launch_id},
                     {"kernel_name", r.kernel_name},
                     {"cycles", r.cycles},
                     {"exec_time", r.exec_time},
                     {"instruction_count", r.instruction_count}};
    set_optional(j, "l1_hit", r.l1_hit);
    set_optional(j, "l2_hit", r.l2_hit);
    set_optional(j, "occupancy", r.occupancy);
    set_optional(j, "ipc", r.ipc);
    if (r.class_id) j["class_id"] = *r.class_id;
    out.push_back(std::move(j));
  }
  return out;
}

MetricTable MetricTable::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::BadArtifact, "metric table must be a JSON array");
  std::vector<MetricRecord> records;
  for (const auto& e : j) {
    MetricRecord r;
    try {
      r.launch_id = e.at("launch_id").get<std::uint64_t>();
      r.kernel_name = e.at("kernel_name").get<std::string>();
      r.cycles = e.at("cycles").get<double>();
      r.exec_time = e.at("exec_time").get<double>();
      r.instruction_count = e.at("instruction_count").get<std::uint64_t>();
      r.l1_hit = get_optional(e, "l1_hit");
      r.l2_hit = get_optional(e, "l2_hit");
      r.occupancy = get_optional(e, "occupancy");
      r.ipc = get_optional(e, "ipc");
      if (e.contains("class_id")) r.class_id = e.at("class_id").get<std::uint32_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::BadArtifact, std::string("metric table record: ") + ex.what());
    }
    if (!(r.cycles > 0.0) || !(r.exec_time > 0.0) || r.instruction_count == 0)
      throw Error(ErrorCode::BadArtifact, id_str(r.launch_id) + ": cycles, exec_time and instruction_count must be positive");
    records.push_back(std::move(r));
  }
  return MetricTable(std::move(records));
}

MetricTable MetricTable::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, file.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::BadArtifact, file.string() + ": " + e.what());
  }
}

void MetricTable::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + file.string());
  out << to_json().dump(1) << '\n';
}

double reconstruct_additive(const ClusterPlan& plan, const MetricTable& table, Metric m) {
  double total = 0.0;
  for (const auto& c : plan.clusters)
    total += static_cast<double>(c.weight()) * require(table, c.representative, m);
  return total;
}

double reconstruct_ratio(const ClusterPlan& plan, const MetricTable& table, Metric m, RatioWeighting weighting) {
  double num = 0.0, den = 0.0;
  for (const auto& c : plan.clusters) {
    double w = static_cast<double>(c.weight());
    if (weighting == RatioWeighting::Cycles) w *= require(table, c.representative, Metric::Cycles);
    num += w * require(table, c.representative, m);
    den += w;
  }
  if (den == 0.0) throw Error(ErrorCode::ZeroFull, "ratio reconstruction over an empty plan");
  return num / den;
}

double sampling_error(double full, double sampled) {
  if (full == 0.0) throw Error(ErrorCode::ZeroFull, "full-workload value is zero");
  return std::abs(full - sampled) / full * 100.0;
}

double speedup(const ClusterPlan& plan, const MetricTable& table) {
  double full = 0.0;
  for (const auto& r : table.records()) full += r.exec_time;
  double sampled = 0.0;
  for (const auto& c : plan.clusters) sampled += require(table, c.representative, Metric::ExecTime);
  if (sampled == 0.0) throw Error(ErrorCode::ZeroSampledTime, "representatives have zero execution time");
  return full / sampled;
}

ClusterPlan sieve_baseline(const MetricTable& table, double cov_threshold) {
  if (!(cov_threshold > 0.0)) throw Error(ErrorCode::BadConfig, "cov_threshold must be positive");
  std::map<std::string, std::vector<const MetricRecord*>> by_name;
  for (const auto& r : table.records()) by_name[r.kernel_name].push_back(&r);
  std::vector<std::vector<const MetricRecord*>> strata;
  for (const auto& [_, group] : by_name) stratify(group, cov_threshold, strata);

  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> labels;
  for (std::size_t s = 0; s < strata.size(); ++s)
    for (auto* r : strata[s]) {
      ids.push_back(r->launch_id);
      labels.push_back(static_cast<std::uint32_t>(s));
    }
  return plan_from_labels(ids, labels);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [name, r] : metrics)
    m[name] = {{"full", r.full}, {"sampled", r.sampled}, {"error_percent", r.error_percent}};
  return {{"metrics", m}, {"speedup", speedup}, {"K", k}};
}

EvalReport compile_report(const ClusterPlan& plan, const MetricTable& table, RatioWeighting weighting) {
  for (const auto& c : plan.clusters)
    for (auto id : c.members)
      if (!table.contains(id)) throw Error(ErrorCode::MissingMetric, id_str(id) + " not in metric table");
  if (plan.total_weight() != table.size())
    throw Error(ErrorCode::MissingMetric, "plan covers " + std::to_string(plan.total_weight()) + " kernels, table " +
                                              std::to_string(table.size()));

  EvalReport report;
  report.k = plan.k;
  {
    double full = 0.0;
    for (const auto& r : table.records()) full += r.cycles;
    const double sampled = reconstruct_additive(plan, table, Metric::Cycles);
    report.metrics["cycles"] = {full, sampled, sampling_error(full, sampled)};
  }
  for (auto m : kRatioMetrics) {
    if (!table.has_column(m)) continue;
    double num = 0.0, den = 0.0;
    for (const auto& r : table.records()) {
      const double w = weighting == RatioWeighting::Cycles ? r.cycles : 1.0;
      num += w * *table.value(r.launch_id, m);
      den += w;
    }
    const double full = num / den;
    const double sampled = reconstruct_ratio(plan, table, m, weighting);
    report.metrics[metric_name(m)] = {full, sampled, sampling_error(full, sampled)};
  }
  report.speedup = speedup(plan, table);
  return report;
}

}  // namespace gcls
