#include "gcls/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "gcls/error.hpp"
#include "gcls/graph.hpp"
#include "gcls/optim.hpp"
#include "gcls/registry.hpp"

namespace gcls {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<int> g_log_level{static_cast<int>(LogLevel::Info)};
std::mutex g_log_mutex;

constexpr const char* kManifest = "manifest.json";

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, file.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& file, const std::string& text) {
  // Write-then-rename so an interrupted stage never leaves a partial artifact.
  auto tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::MissingFile, "write failed: " + tmp.string());
  }
  fs::rename(tmp, file);
}

json parse_json(const fs::path& file) {
  auto text = read_file(file);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadArtifact, file.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::MissingFile, "cannot create " + dir.string() + ": " + ec.message());
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const char* naming_name(KernelNaming n) { return n == KernelNaming::PerClass ? "per_class" : "distinct"; }
const char* weighting_name(RatioWeighting w) { return w == RatioWeighting::Count ? "count" : "cycles"; }

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
      throw Error(ErrorCode::BadConfig, "unknown key '" + it.key() + "' in " + where);
  }
}

bool is_bare_train_section(const json& j) {
  if (!j.is_object() || j.empty()) return false;
  static const char* train_keys[] = {"batch_size", "epochs", "lr0",       "temperature", "split_ratio",
                                     "seed",       "patience", "grad_clip", "weight_decay"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(std::begin(train_keys), std::end(train_keys), it.key()) == std::end(train_keys)) return false;
  return true;
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() || base.empty() ? p : base / p; }

// ---------------------------------------------------------------------------
// Corpus and artifacts

fs::path manifest_path(const PipelineConfig& c, const ArtifactLayout& layout) {
  if (c.synth.enabled) return layout.corpus_dir() / kManifest;
  if (!c.paths.corpus) throw Error(ErrorCode::MissingFile, "no corpus path configured and synth disabled");
  const auto& p = *c.paths.corpus;
  if (fs::is_directory(p)) return p / kManifest;
  return p;
}

TokenRegistry registry_for(const PipelineConfig& c) {
  return c.paths.registry ? TokenRegistry::load(*c.paths.registry) : TokenRegistry::defaults();
}

json with_provenance(json j, const Provenance& p) {
  j["provenance"] = p.to_json();
  return j;
}

Provenance provenance_of(const PipelineConfig& c) { return {c.hash(), c.seed, kStageVersion}; }

std::optional<Provenance> read_provenance(const fs::path& file) {
  if (!fs::exists(file)) return std::nullopt;
  try {
    if (file.extension() == ".jsonl") {
      std::ifstream in(file);
      std::string line;
      if (!std::getline(in, line)) return std::nullopt;
      return Provenance::from_json(json::parse(line));
    }
    auto j = parse_json(file);
    if (j.contains("provenance")) return Provenance::from_json(j.at("provenance"));
    if (j.contains("metadata") && j.at("metadata").contains("provenance"))
      return Provenance::from_json(j.at("metadata").at("provenance"));
  } catch (const std::exception&) {
    return std::nullopt;
  }
  return std::nullopt;
}

fs::path stage_artifact(Stage s, const ArtifactLayout& layout) {
  switch (s) {
    case Stage::Synth: return layout.corpus_dir() / "provenance.json";
    case Stage::BuildGraphs: return layout.graph_index();
    case Stage::Train: {
      auto p = layout.model_stem();
      p += ".json";
      return p;
    }
    case Stage::Embed: return layout.embeddings();
    case Stage::Cluster: return layout.plan();
    case Stage::Evaluate: return layout.report();
  }
  return {};
}

std::vector<optim::NamedTensor> named_tensors(const RgcnParams& p) {
  std::vector<optim::NamedTensor> out;
  for (const auto& [name, t] : p.tensors()) out.push_back({name, *t});
  return out;
}

RgcnParams load_model(const ArtifactLayout& layout) {
  auto ck = optim::load_checkpoint(layout.model_stem());
  EncoderConfig enc;
  try {
    enc = ck.metadata.at("encoder").get<EncoderConfig>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadArtifact, std::string("checkpoint metadata: ") + e.what());
  }
  auto params = init_params(enc, 0);
  auto slots = params.tensors();
  if (slots.size() != ck.tensors.size()) throw Error(ErrorCode::BadArtifact, "checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto& [name, dst] = slots[i];
    const auto& src = ck.tensors[i];
    if (src.name != name || !src.tensor.same_shape(*dst))
      throw Error(ErrorCode::BadArtifact, "checkpoint tensor " + src.name + " does not match " + name);
    *dst = src.tensor;
  }
  return params;
}

void require_provenance(const fs::path& file, const Provenance& expected, bool force, const char* what) {
  auto got = read_provenance(file);
  if (!got) throw Error(ErrorCode::BadArtifact, std::string(what) + " has no provenance: " + file.string());
  if (*got == expected) return;
  if (force) {
    log(LogLevel::Info, std::string(what) + " was produced under config " + got->config_hash + "; continuing (--force)");
    return;
  }
  throw Error(ErrorCode::HashMismatch, std::string(what) + " was produced under config " + got->config_hash +
                                           " seed " + std::to_string(got->seed) + ", current config is " +
                                           expected.config_hash + " seed " + std::to_string(expected.seed));
}

// ---------------------------------------------------------------------------
// Stages

void stage_synth(const PipelineConfig& c, const ArtifactLayout& layout) {
  if (!c.synth.enabled) {
    log(LogLevel::Info, "synth disabled; using configured corpus");
    return;
  }
  SynthOptions opt;
  opt.cost = c.synth.cost;
  opt.naming = c.synth.naming;
  auto corpus = generate_corpus(c.synth.classes, c.synth.kernels_per_class, c.seed, layout.corpus_dir(), opt);
  write_file(layout.corpus_dir() / "provenance.json", with_provenance(json::object(), provenance_of(c)).dump(1) + "\n");
  log(LogLevel::Info, "synth: " + std::to_string(corpus.traces.size()) + " kernels in " + layout.corpus_dir().string());
}

void stage_build_graphs(const PipelineConfig& c, const ArtifactLayout& layout) {
  const auto manifest_file = manifest_path(c, layout);
  if (!fs::exists(manifest_file)) throw Error(ErrorCode::MissingFile, "corpus manifest not found: " + manifest_file.string());
  auto manifest = CorpusManifest::load(manifest_file);
  auto registry = registry_for(c);
  auto traces = load_corpus(manifest);
  ensure_dir(layout.graphs_dir());

  std::vector<std::exception_ptr> errors(traces.size());
  std::vector<std::string> files(traces.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < traces.size(); ++i) {
    try {
      auto g = build_kernel_graph(traces[i], registry);
      char name[32];
      std::snprintf(name, sizeof name, "k%05llu.json", static_cast<unsigned long long>(traces[i].launch_id));
      files[i] = name;
      write_file(layout.graphs_dir() / name, graph_to_json(g));
    } catch (const Error& e) {
      errors[i] = std::make_exception_ptr(e.with_context("launch_id " + std::to_string(traces[i].launch_id)));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  json index = json::object();
  index["manifest"] = fs::absolute(manifest_file).lexically_normal().string();
  index["kernels"] = json::array();
  for (std::size_t i = 0; i < traces.size(); ++i)
    index["kernels"].push_back({{"launch_id", traces[i].launch_id}, {"name", traces[i].kernel_name}, {"file", files[i]}});
  write_file(layout.graph_index(), with_provenance(index, provenance_of(c)).dump(1) + "\n");
  log(LogLevel::Info, "build-graphs: " + std::to_string(traces.size()) + " kernel graphs");
}

void stage_train(const PipelineConfig& c, const ArtifactLayout& layout) {
  auto samples = load_graph_samples(c, layout);
  const auto prov = provenance_of(c);
  std::ofstream log_file(layout.train_log(), std::ios::binary);
  if (!log_file) throw Error(ErrorCode::MissingFile, "cannot write " + layout.train_log().string());
  auto result = train(samples, c.train, c.encoder, c.augment, [&](const EpochRecord& r) {
    json line{{"epoch", r.epoch}, {"train_loss", r.train_loss},
              {"val_loss", std::isnan(r.val_loss) ? json(nullptr) : json(r.val_loss)},
              {"lr", r.lr}, {"wall_seconds", r.wall_seconds}};
    log_file << with_provenance(line, prov).dump() << '\n' << std::flush;
    char buf[160];
    std::snprintf(buf, sizeof buf, "train: epoch %zu loss %.5f val %.5f lr %.3g (%.1fs)", r.epoch, r.train_loss,
                  r.val_loss, r.lr, r.wall_seconds);
    log(LogLevel::Debug, buf);
  });
  json meta{{"encoder", c.encoder},
            {"train", c.train},
            {"best_epoch", result.log.best_epoch},
            {"best_loss", result.log.best_loss},
            {"epochs_run", result.log.epochs.size()},
            {"steps", result.log.steps},
            {"split", {{"train", result.split.train}, {"validation", result.split.validation}}},
            {"provenance", prov.to_json()}};
  optim::save_checkpoint(layout.model_stem(), named_tensors(result.params), meta);
  log(LogLevel::Info, "train: " + std::to_string(result.log.epochs.size()) + " epochs, best epoch " +
                          std::to_string(result.log.best_epoch));
}

void stage_embed(const PipelineConfig& c, const ArtifactLayout& layout, bool force) {
  const auto prov = provenance_of(c);
  auto model_header = layout.model_stem();
  model_header += ".json";
  require_provenance(model_header, prov, force, "model checkpoint");
  auto params = load_model(layout);
  auto samples = load_graph_samples(c, layout);
  std::vector<std::vector<double>> z(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    try {
      z[i] = embed_kernel(samples[i].view, params);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::string out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    json rec{{"launch_id", samples[i].launch_id},
             {"kernel_name", samples[i].view.graph.kernel_name},
             {"z", z[i]},
             {"config_hash", prov.config_hash},
             {"seed", prov.seed},
             {"stage_version", prov.stage_version}};
    out += rec.dump() + "\n";
  }
  write_file(layout.embeddings(), out);
  log(LogLevel::Info, "embed: " + std::to_string(samples.size()) + " embeddings");
}

void stage_cluster(const PipelineConfig& c, const ArtifactLayout& layout, bool force) {
  const auto prov = provenance_of(c);
  require_provenance(layout.embeddings(), prov, force, "embeddings");
  auto set = load_embeddings(layout.embeddings());
  auto points = c.cluster.normalize ? normalize_rows(set.points) : set.points;
  SelectKOptions sk;
  sk.k_min = c.cluster.k_min;
  sk.k_max = c.cluster.k_max;
  sk.tie_band = c.cluster.tie_band;
  sk.identity_eps = c.cluster.identity_eps;
  sk.seed = c.seed;
  sk.kmeans = c.cluster.kmeans;
  auto sel = select_k(points, sk);
  auto plan = make_plan(points, set.launch_ids, sel.k, c.seed, c.cluster.kmeans);
  json j = plan.to_json();
  json scores = json::array();
  for (const auto& s : sel.scores) scores.push_back({{"K", s.k}, {"silhouette", s.silhouette}});
  j["k_scores"] = scores;
  write_file(layout.plan(), with_provenance(j, prov).dump(1) + "\n");
  log(LogLevel::Info, "cluster: K=" + std::to_string(plan.k));
}

fs::path labels_path(const PipelineConfig& c, const ArtifactLayout& layout) {
  if (c.paths.labels) return *c.paths.labels;
  auto manifest = CorpusManifest::load(manifest_path(c, layout));
  if (!manifest.labels_path) throw Error(ErrorCode::MissingFile, "no metric table: set paths.labels or manifest labels");
  return *manifest.labels_path;
}

void stage_evaluate(const PipelineConfig& c, const ArtifactLayout& layout, bool force) {
  const auto prov = provenance_of(c);
  require_provenance(layout.plan(), prov, force, "cluster plan");
  auto plan = ClusterPlan::from_json(parse_json(layout.plan()));
  auto table = MetricTable::load(labels_path(c, layout));
  auto report = compile_report(plan, table, c.evaluate.ratio_weighting);
  auto baseline = compile_report(sieve_baseline(table, c.evaluate.sieve_cov_threshold), table, c.evaluate.ratio_weighting);

  json j = report.to_json();
  j["plan"] = fs::absolute(layout.plan()).lexically_normal().filename().string();
  j["baseline"] = {{"sieve", baseline.to_json()}};
  if (std::all_of(table.records().begin(), table.records().end(), [](const auto& r) { return r.class_id.has_value(); })) {
    std::vector<std::uint32_t> planted, found;
    for (auto [id, cl] : plan.assignment()) {
      planted.push_back(*table.at(id).class_id);
      found.push_back(cl);
    }
    j["planted_ari"] = adjusted_rand_index(found, planted);
  }
  write_file(layout.report(), with_provenance(j, prov).dump(1) + "\n");
  char buf[200];
  std::snprintf(buf, sizeof buf, "evaluate: K=%zu cycles error %.4f%% speedup %.2fx (sieve %.2fx)", report.k,
                report.metrics.at("cycles").error_percent, report.speedup, baseline.speedup);
  log(LogLevel::Info, buf);
}

}  // namespace

// ---------------------------------------------------------------------------
// Logging

LogLevel log_level_from_env() {
  const char* v = std::getenv("GCLS_LOG");
  if (v == nullptr || *v == '\0') return LogLevel::Info;
  const std::string s(v);
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  throw Error(ErrorCode::BadConfig, "GCLS_LOG must be one of error, info, debug (got '" + s + "')");
}

void set_log_level(LogLevel level) { g_log_level = static_cast<int>(level); }

void log(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) > g_log_level.load()) return;
  static const char* tags[] = {"error", "info", "debug"};
  std::lock_guard lock(g_log_mutex);
  std::cerr << "[gcls " << tags[static_cast<int>(level)] << "] " << message << '\n';
}

// ---------------------------------------------------------------------------
// Config

json PipelineConfig::to_json() const {
  json classes = json::array();
  for (const auto& s : synth.classes) classes.push_back(s);
  json paths_j = json::object();
  if (paths.corpus) paths_j["corpus"] = paths.corpus->string();
  if (paths.registry) paths_j["registry"] = paths.registry->string();
  if (paths.labels) paths_j["labels"] = paths.labels->string();
  return {
      {"seed", seed},
      {"paths", paths_j},
      {"synth",
       {{"enabled", synth.enabled},
        {"kernels_per_class", synth.kernels_per_class},
        {"classes", classes},
        {"cost", synth.cost},
        {"naming", naming_name(synth.naming)}}},
      {"train", train},
      {"encoder", encoder},
      {"augment",
       {{"node_drop", augment.node_drop}, {"edge_drop", augment.edge_drop}, {"noise_sigma", augment.noise_sigma}}},
      {"cluster",
       {{"k_min", cluster.k_min},
        {"k_max", cluster.k_max},
        {"tie_band", cluster.tie_band},
        {"identity_eps", cluster.identity_eps},
        {"normalize", cluster.normalize},
        {"restarts", cluster.kmeans.restarts},
        {"max_iter", cluster.kmeans.max_iter},
        {"rel_tol", cluster.kmeans.rel_tol}}},
      {"evaluate",
       {{"ratio_weighting", weighting_name(evaluate.ratio_weighting)},
        {"sieve_cov_threshold", evaluate.sieve_cov_threshold}}},
  };
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    if (is_bare_train_section(j)) {
      c.train = j.get<TrainConfig>();
      c.seed = c.train.seed;
      return c;
    }
    check_keys(j, {"seed", "paths", "synth", "train", "encoder", "augment", "cluster", "evaluate"}, "config");
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    c.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : c.train.seed;
    c.train.seed = c.seed;
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      check_keys(p, {"corpus", "registry", "labels"}, "paths");
      if (p.contains("corpus")) c.paths.corpus = resolve(p.at("corpus").get<std::string>(), base_dir);
      if (p.contains("registry")) c.paths.registry = resolve(p.at("registry").get<std::string>(), base_dir);
      if (p.contains("labels")) c.paths.labels = resolve(p.at("labels").get<std::string>(), base_dir);
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      check_keys(s, {"enabled", "kernels_per_class", "classes", "cost", "naming"}, "synth");
      c.synth.enabled = s.value("enabled", c.synth.enabled);
      c.synth.kernels_per_class = s.value("kernels_per_class", c.synth.kernels_per_class);
      if (s.contains("classes")) c.synth.classes = s.at("classes").get<std::vector<SynthClassSpec>>();
      if (s.contains("cost")) c.synth.cost = s.at("cost").get<CostCoefficients>();
      const auto naming = s.value("naming", std::string("per_class"));
      if (naming == "per_class") c.synth.naming = KernelNaming::PerClass;
      else if (naming == "distinct") c.synth.naming = KernelNaming::Distinct;
      else throw Error(ErrorCode::BadConfig, "synth.naming must be per_class or distinct");
    }
    if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      check_keys(a, {"node_drop", "edge_drop", "noise_sigma"}, "augment");
      c.augment.node_drop = a.value("node_drop", c.augment.node_drop);
      c.augment.edge_drop = a.value("edge_drop", c.augment.edge_drop);
      c.augment.noise_sigma = a.value("noise_sigma", c.augment.noise_sigma);
    }
    if (j.contains("cluster")) {
      const auto& k = j.at("cluster");
      check_keys(k, {"k_min", "k_max", "tie_band", "identity_eps", "normalize", "restarts", "max_iter", "rel_tol"},
                 "cluster");
      c.cluster.k_min = k.value("k_min", c.cluster.k_min);
      c.cluster.k_max = k.value("k_max", c.cluster.k_max);
      c.cluster.tie_band = k.value("tie_band", c.cluster.tie_band);
      c.cluster.identity_eps = k.value("identity_eps", c.cluster.identity_eps);
      c.cluster.normalize = k.value("normalize", c.cluster.normalize);
      c.cluster.kmeans.restarts = k.value("restarts", c.cluster.kmeans.restarts);
      c.cluster.kmeans.max_iter = k.value("max_iter", c.cluster.kmeans.max_iter);
      c.cluster.kmeans.rel_tol = k.value("rel_tol", c.cluster.kmeans.rel_tol);
    }
    if (j.contains("evaluate")) {
      const auto& e = j.at("evaluate");
      check_keys(e, {"ratio_weighting", "sieve_cov_threshold"}, "evaluate");
      const auto w = e.value("ratio_weighting", std::string("count"));
      if (w == "count") c.evaluate.ratio_weighting = RatioWeighting::Count;
      else if (w == "cycles") c.evaluate.ratio_weighting = RatioWeighting::Cycles;
      else throw Error(ErrorCode::BadConfig, "evaluate.ratio_weighting must be count or cycles");
      c.evaluate.sieve_cov_threshold = e.value("sieve_cov_threshold", c.evaluate.sieve_cov_threshold);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    throw Error(ErrorCode::BadConfig, e.what());
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::BadConfig, "cannot read config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadConfig, file.string() + ": " + e.what());
  }
  return from_json(j, file.parent_path());
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
}

void PipelineConfig::validate() const {
  train.validate();
  encoder.validate();
  if (train.seed != seed) throw Error(ErrorCode::BadConfig, "train.seed differs from the global seed");
  if (synth.enabled) {
    if (synth.classes.empty() || synth.kernels_per_class == 0)
      throw Error(ErrorCode::BadConfig, "synth needs at least one class and one kernel per class");
    try {
      for (const auto& s : synth.classes) s.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::BadConfig, e.what());
    }
  }
  auto prob = [](double p) { return p >= 0.0 && p < 1.0; };
  if (!prob(augment.node_drop) || !prob(augment.edge_drop) || !(augment.noise_sigma >= 0.0))
    throw Error(ErrorCode::BadConfig, "augmentation rates must be in [0, 1) and sigma >= 0");
  if (cluster.k_min < 2) throw Error(ErrorCode::BadConfig, "cluster.k_min must be >= 2");
  if (cluster.k_max != 0 && cluster.k_max < cluster.k_min)
    throw Error(ErrorCode::BadConfig, "cluster.k_max must be 0 (auto) or >= k_min");
  if (!(cluster.tie_band >= 0.0)) throw Error(ErrorCode::BadConfig, "cluster.tie_band must be >= 0");
  if (cluster.kmeans.restarts == 0 || cluster.kmeans.max_iter == 0)
    throw Error(ErrorCode::BadConfig, "cluster restarts and max_iter must be positive");
  if (!(evaluate.sieve_cov_threshold > 0.0)) throw Error(ErrorCode::BadConfig, "sieve_cov_threshold must be > 0");
}

std::string PipelineConfig::hash() const {
  auto j = to_json();
  j.erase("paths");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

json Provenance::to_json() const {
  return {{"config_hash", config_hash}, {"seed", seed}, {"stage_version", stage_version}};
}

Provenance Provenance::from_json(const json& j) {
  return {j.at("config_hash").get<std::string>(), j.at("seed").get<std::uint64_t>(),
          j.at("stage_version").get<std::string>()};
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Synth: return "synth";
    case Stage::BuildGraphs: return "build-graphs";
    case Stage::Train: return "train";
    case Stage::Embed: return "embed";
    case Stage::Cluster: return "cluster";
    case Stage::Evaluate: return "evaluate";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Artifact readers

EmbeddingSet load_embeddings(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, file.string());
  EmbeddingSet set;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      set.launch_ids.push_back(j.at("launch_id").get<std::uint64_t>());
      set.names.push_back(j.value("kernel_name", std::string()));
      rows.push_back(j.at("z").get<std::vector<double>>());
      auto p = Provenance::from_json(j);
      if (rows.size() == 1) set.provenance = p;
      else if (!(p == set.provenance)) throw Error(ErrorCode::BadArtifact, "mixed provenance");
    } catch (const json::exception& e) {
      throw Error(ErrorCode::BadArtifact, file.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (rows.empty()) throw Error(ErrorCode::BadArtifact, "no embeddings in " + file.string());
  set.points = Embeddings(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != set.points.dim) throw Error(ErrorCode::BadArtifact, "ragged embedding rows");
    std::copy(rows[i].begin(), rows[i].end(), set.points.row(i));
  }
  return set;
}

std::vector<TrainingSample> load_graph_samples(const PipelineConfig& c, const ArtifactLayout& layout) {
  if (!fs::exists(layout.graph_index()))
    throw Error(ErrorCode::MissingFile, "graph index not found: " + layout.graph_index().string());
  auto index = parse_json(layout.graph_index());
  auto registry = registry_for(c);
  std::vector<std::pair<std::uint64_t, std::string>> entries;
  try {
    for (const auto& k : index.at("kernels")) entries.emplace_back(k.at("launch_id").get<std::uint64_t>(), k.at("file").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadArtifact, std::string("graph index: ") + e.what());
  }
  std::vector<TrainingSample> out(entries.size());
  std::vector<std::exception_ptr> errors(entries.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < entries.size(); ++i) {
    try {
      auto g = load_graph(layout.graphs_dir() / entries[i].second);
      auto f = featurize_graph(g, registry, c.seed);
      out[i] = {entries[i].first, {std::move(g), std::move(f)}};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration

bool stage_up_to_date(Stage stage, const PipelineConfig& config, const RunOptions& options) {
  ArtifactLayout layout{options.out};
  auto got = read_provenance(stage_artifact(stage, layout));
  if (!got || !(*got == provenance_of(config))) return false;
  if (stage == Stage::Synth) return fs::exists(layout.corpus_dir() / kManifest);
  if (stage == Stage::Train) {
    auto bin = layout.model_stem();
    bin += ".bin";
    return fs::exists(bin);
  }
  return true;
}

void run_stage(Stage stage, const PipelineConfig& config, const RunOptions& options) {
  config.validate();
  ArtifactLayout layout{options.out};
  ensure_dir(layout.root);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    switch (stage) {
      case Stage::Synth: stage_synth(config, layout); break;
      case Stage::BuildGraphs: stage_build_graphs(config, layout); break;
      case Stage::Train: stage_train(config, layout); break;
      case Stage::Embed: stage_embed(config, layout, options.force); break;
      case Stage::Cluster: stage_cluster(config, layout, options.force); break;
      case Stage::Evaluate: stage_evaluate(config, layout, options.force); break;
    }
  } catch (const Error& e) {
    throw e.with_context(std::string("stage ") + stage_name(stage));
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::MissingFile, std::string("stage ") + stage_name(stage) + ": " + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s finished in %.2fs", stage_name(stage), secs);
  log(LogLevel::Debug, buf);
}

void run_pipeline(const PipelineConfig& config, const RunOptions& options) {
  config.validate();
  static constexpr Stage order[] = {Stage::Synth, Stage::BuildGraphs, Stage::Train,
                                    Stage::Embed, Stage::Cluster,     Stage::Evaluate};
  bool rerun = options.force;
  for (auto s : order) {
    if (s == Stage::Synth && !config.synth.enabled) continue;
    if (!rerun && stage_up_to_date(s, config, options)) {
      log(LogLevel::Info, std::string(stage_name(s)) + ": up to date, skipped");
      continue;
    }
    // Everything downstream of a recomputed stage is recomputed too.
    rerun = true;
    run_stage(s, config, options);
  }
}

int exit_code_for(const std::exception& e) {
  if (auto* err = dynamic_cast<const Error*>(&e)) return static_cast<int>(err->kind());
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return static_cast<int>(ErrorKind::Data);
  if (dynamic_cast<const json::exception*>(&e)) return static_cast<int>(ErrorKind::Data);
  return 1;
}

}  // namespace gcls
