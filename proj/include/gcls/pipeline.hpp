#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcls/cluster.hpp"
#include "gcls/evaluator.hpp"
#include "gcls/features.hpp"
#include "gcls/rgcn.hpp"
#include "gcls/synth.hpp"
#include "gcls/trainer.hpp"

namespace gcls {

enum class LogLevel : std::uint8_t { Error = 0, Info = 1, Debug = 2 };

/// Reads GCLS_LOG (error, info, debug); unset means info. Throws BadConfig
/// on any other value.
LogLevel log_level_from_env();
void set_log_level(LogLevel level);
void log(LogLevel level, const std::string& message);

struct SynthSection {
  bool enabled = true;
  std::size_t kernels_per_class = 50;
  std::vector<SynthClassSpec> classes = default_class_specs();
  CostCoefficients cost;
  KernelNaming naming = KernelNaming::PerClass;
};

struct ClusterSection {
  std::size_t k_min = 2;
  std::size_t k_max = 0;
  double tie_band = 0.01;
  double identity_eps = 1e-9;
  bool normalize = false;
  KMeansOptions kmeans;
};

struct EvaluateSection {
  RatioWeighting ratio_weighting = RatioWeighting::Count;
  double sieve_cov_threshold = 0.25;
};

struct PathsSection {
  /// Manifest file or directory holding manifest.json. Ignored when synth runs.
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> registry;
  /// Metric table; defaults to the manifest's labels.
  std::optional<std::filesystem::path> labels;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  PathsSection paths;
  SynthSection synth;
  TrainConfig train;
  EncoderConfig encoder;
  AugmentationPool augment;
  ClusterSection cluster;
  EvaluateSection evaluate;

  /// Canonical form; paths are included but do not enter the hash.
  nlohmann::json to_json() const;
  /// Accepts a full document or a bare train section. Relative paths
  /// resolve against base_dir. Throws BadConfig.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& file);
  /// Overrides the global seed everywhere it is used.
  void set_seed(std::uint64_t s);
  void validate() const;
  /// 16 hex digits of FNV-1a over the canonical config without paths.
  std::string hash() const;
};

inline constexpr const char* kStageVersion = "1";

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string stage_version = kStageVersion;

  nlohmann::json to_json() const;
  static Provenance from_json(const nlohmann::json& j);
  bool operator==(const Provenance&) const = default;
};

enum class Stage : std::uint8_t { Synth, BuildGraphs, Train, Embed, Cluster, Evaluate };
const char* stage_name(Stage s);

struct RunOptions {
  std::filesystem::path out = "gcls_out";
  /// Pipeline: recompute up-to-date stages. Evaluate: accept artifacts
  /// produced under a different config hash.
  bool force = false;
};

/// Artifact locations under the output directory.
struct ArtifactLayout {
  std::filesystem::path root;
  std::filesystem::path corpus_dir() const { return root / "corpus"; }
  std::filesystem::path graphs_dir() const { return root / "graphs"; }
  std::filesystem::path graph_index() const { return graphs_dir() / "index.json"; }
  std::filesystem::path model_stem() const { return root / "model"; }
  std::filesystem::path train_log() const { return root / "trainlog.jsonl"; }
  std::filesystem::path embeddings() const { return root / "embeddings.jsonl"; }
  std::filesystem::path plan() const { return root / "plan.json"; }
  std::filesystem::path report() const { return root / "report.json"; }
};

void run_stage(Stage stage, const PipelineConfig& config, const RunOptions& options);
/// Runs every stage in order, skipping stages whose artifact already carries
/// the current provenance (unless force is set).
void run_pipeline(const PipelineConfig& config, const RunOptions& options);
/// True when the stage's artifact exists and matches the config.
bool stage_up_to_date(Stage stage, const PipelineConfig& config, const RunOptions& options);

struct EmbeddingSet {
  std::vector<std::uint64_t> launch_ids;
  std::vector<std::string> names;
  Embeddings points;
  Provenance provenance;
};

EmbeddingSet load_embeddings(const std::filesystem::path& file);
/// Graphs written by build-graphs with features recomputed from the seed.
std::vector<TrainingSample> load_graph_samples(const PipelineConfig& config, const ArtifactLayout& layout);

/// Process exit code for an exception: 2 config, 3 data, 4 numeric, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace gcls
