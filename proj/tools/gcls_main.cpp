// gcls: trace-graph kernel sampling pipeline.
//
//   gcls pipeline --config cfg.json --out run/
//   gcls train --config train.json --out run/ --seed 7

#include <omp.h>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gcls/error.hpp"
#include "gcls/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "gcls_out";
  int workers = 0;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file (full pipeline document or bare train section)");
  cmd->add_option("--seed", f.seed, "global seed; overrides the config");
  cmd->add_option("--out", f.out, "artifact directory")->capture_default_str();
  cmd->add_option("--workers", f.workers, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--force", f.force, "pipeline: recompute every stage; evaluate: accept foreign artifacts");
}

gcls::PipelineConfig resolve_config(const CommonFlags& f) {
  auto config = f.config.empty() ? gcls::PipelineConfig{} : gcls::PipelineConfig::load(f.config);
  if (f.seed) config.set_seed(*f.seed);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel sampling from trace graphs"};
  app.require_subcommand(1);
  CommonFlags flags;

  struct Command {
    const char* name;
    const char* help;
    std::optional<gcls::Stage> stage;
  };
  const Command commands[] = {
      {"synth", "generate a synthetic trace corpus", gcls::Stage::Synth},
      {"build-graphs", "build relational graphs from traces", gcls::Stage::BuildGraphs},
      {"train", "contrastive training of the graph encoder", gcls::Stage::Train},
      {"embed", "embed every kernel graph", gcls::Stage::Embed},
      {"cluster", "select K and build the sampling plan", gcls::Stage::Cluster},
      {"evaluate", "score the plan against ground-truth metrics", gcls::Stage::Evaluate},
      {"pipeline", "run every stage, skipping up-to-date ones", std::nullopt},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, flags);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(gcls::ErrorKind::Config);
  }

  const Command* chosen = nullptr;
  for (auto& [sub, cmd] : subs)
    if (sub->parsed()) chosen = cmd;

  try {
    gcls::set_log_level(gcls::log_level_from_env());
    if (flags.workers > 0) omp_set_num_threads(flags.workers);
    const auto config = resolve_config(flags);
    const gcls::RunOptions options{flags.out, flags.force};
    gcls::log(gcls::LogLevel::Debug, "config hash " + config.hash());
    if (chosen->stage) {
      gcls::run_stage(*chosen->stage, config, options);
    } else {
      gcls::run_pipeline(config, options);
    }
  } catch (const std::exception& e) {
    std::cerr << "gcls " << chosen->name << ": " << e.what() << '\n';
    return gcls::exit_code_for(e);
  }
  return 0;
}
