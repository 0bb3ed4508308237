#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcls/evaluator.hpp"
#include "gcls/trace.hpp"

namespace gcls {

struct IntRange {
  std::int64_t lo = 1;
  std::int64_t hi = 1;
};

/// One planted kernel class. Every kernel runs a loop body of body_len
/// instructions loop_len times per warp. round(mem_fraction * body_len) body
/// slots are memory instructions; opcodes are drawn from opcode_mix
/// restricted to the slot's category. The body is drawn once per class from
/// (seed, class_id), so every kernel of a class shares it.
struct SynthClassSpec {
  std::uint32_t class_id = 0;
  std::string name;
  std::map<std::string, double> opcode_mix;
  double mem_fraction = 0.0;
  std::size_t body_len = 8;
  IntRange loop_len;
  std::int64_t stride = 4;
  IntRange n_warps;

  /// Throws InvalidSpec.
  void validate() const;
};

void to_json(nlohmann::json& j, const SynthClassSpec& s);
void from_json(const nlohmann::json& j, SynthClassSpec& s);

/// Four classes with disjoint dominant opcodes and strides.
std::vector<SynthClassSpec> default_class_specs();

struct CostCoefficients {
  double alpha = 1.0;   // per instruction
  double beta = 4.0;    // per memory instruction
  double gamma = 20.0;  // per distinct 128-byte line
  double eta = 0.01;    // noise scale relative to the deterministic cost
};

void to_json(nlohmann::json& j, const CostCoefficients& c);
void from_json(const nlohmann::json& j, CostCoefficients& c);

/// alpha*#instr + beta*#mem + gamma*#lines + N(0, (eta*mean)^2), clamped above 1,
/// where mean is the deterministic part.
double synth_cost_model(const KernelTrace& trace, const CostCoefficients& coeffs, std::uint64_t seed);

/// Distinct 128-byte lines touched by all memory instructions of a kernel.
std::size_t distinct_lines(const KernelTrace& trace);

enum class KernelNaming : std::uint8_t { PerClass, Distinct };

struct SynthOptions {
  CostCoefficients cost;
  KernelNaming naming = KernelNaming::PerClass;
  double clock_hz = 1e9;
};

struct SynthCorpus {
  CorpusManifest manifest;
  MetricTable truth;  // class_id filled
  std::vector<KernelTrace> traces;
};

/// Generates one kernel; launch ids are assigned round-robin over specs.
KernelTrace synth_kernel(const SynthClassSpec& spec, std::uint64_t launch_id, std::uint64_t seed,
                         KernelNaming naming = KernelNaming::PerClass);

/// In-memory corpus. Launch ids start at 0.
SynthCorpus synth_corpus(std::span<const SynthClassSpec> specs, std::size_t kernels_per_class, std::uint64_t seed,
                         const SynthOptions& options = {});

/// Writes traces/kernel_<launch_id>.trace, labels.json and manifest.json under out_dir.
SynthCorpus generate_corpus(std::span<const SynthClassSpec> specs, std::size_t kernels_per_class, std::uint64_t seed,
                            const std::filesystem::path& out_dir, const SynthOptions& options = {});

}  // namespace gcls
