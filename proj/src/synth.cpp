#include "gcls/synth.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>
#include <unordered_map>

#include "gcls/error.hpp"
#include "gcls/graph.hpp"
#include "gcls/registry.hpp"
#include "gcls/rng.hpp"

namespace gcls {

namespace {

constexpr std::uint64_t kKernelTag = 0x5E7;
constexpr std::uint64_t kTemplateTag = 0x7E3;
constexpr std::uint64_t kCostTag = 0xC057;
constexpr std::uint32_t kLanes = 32;
constexpr std::int64_t kArraySpan = std::int64_t{1} << 24;
constexpr std::size_t kValueRegs = 8;

bool is_memory_op(const std::string& op) { return reads_memory(op) || writes_memory(op); }

std::size_t memory_slots(const SynthClassSpec& s) {
  return static_cast<std::size_t>(std::llround(s.mem_fraction * static_cast<double>(s.body_len)));
}

// Source operand count of compute opcodes.
std::size_t arity(const std::string& op) {
  static const std::set<std::string> none{"S2R", "EXIT", "NOP", "BAR"};
  static const std::set<std::string> one{"MOV", "MUFU", "BRA"};
  static const std::set<std::string> three{"FFMA", "IMAD", "IADD3", "LOP3", "DFMA", "HMMA"};
  if (none.count(op)) return 0;
  if (one.count(op)) return 1;
  if (three.count(op)) return 3;
  return 2;
}

bool writes_predicate(const std::string& op) { return op == "ISETP" || op == "FSETP"; }
bool has_dest(const std::string& op) { return op != "EXIT" && op != "NOP" && op != "BAR" && op != "BRA"; }

std::string draw_opcode(const SynthClassSpec& spec, bool memory, Rng& rng) {
  double total = 0.0;
  for (const auto& [op, p] : spec.opcode_mix)
    if (is_memory_op(op) == memory) total += p;
  double r = rng.uniform() * total;
  std::string last;
  for (const auto& [op, p] : spec.opcode_mix) {
    if (is_memory_op(op) != memory || p <= 0.0) continue;
    last = op;
    r -= p;
    if (r < 0.0) return op;
  }
  return last;
}

struct Slot {
  std::string opcode;
  std::vector<std::string> dests;
  std::vector<std::string> srcs;
  bool memory = false;
};

std::string value_reg(std::size_t i) { return "R" + std::to_string(4 + i % kValueRegs); }
std::string addr_reg(std::size_t slot) { return "R" + std::to_string(32 + slot); }

std::vector<Slot> make_body(const SynthClassSpec& spec, Rng& rng) {
  std::vector<char> memory(spec.body_len, 0);
  std::fill(memory.begin(), memory.begin() + static_cast<std::ptrdiff_t>(memory_slots(spec)), 1);
  rng.shuffle(memory);
  std::vector<Slot> body(spec.body_len);
  for (std::size_t s = 0; s < spec.body_len; ++s) {
    auto& slot = body[s];
    slot.memory = memory[s] != 0;
    slot.opcode = draw_opcode(spec, slot.memory, rng);
    const auto& op = slot.opcode;
    if (slot.memory) {
      slot.srcs.push_back(addr_reg(s));
      if (writes_memory(op)) slot.srcs.push_back(value_reg(rng.index(kValueRegs)));
      if (reads_memory(op)) slot.dests.push_back(value_reg(s));
      continue;
    }
    if (op == "BRA") {
      slot.srcs.push_back("P0");
      continue;
    }
    for (std::size_t a = 0; a < arity(op); ++a) slot.srcs.push_back(value_reg(rng.index(kValueRegs)));
    if (op == "SHF" || op == "LOP3") slot.srcs.back() = std::to_string(1 + rng.index(15));
    if (has_dest(op)) slot.dests.push_back(writes_predicate(op) ? "P" + std::to_string(s % 2) : value_reg(s));
  }
  return body;
}

std::int64_t mix_value(std::int64_t a, std::int64_t b) {
  auto h = mix64(static_cast<std::uint64_t>(a) * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(b));
  return static_cast<std::int64_t>(h & 0xFFFFF);
}

}  // namespace

void SynthClassSpec::validate() const {
  auto bad = [this](const std::string& what) {
    throw Error(ErrorCode::InvalidSpec, "class " + std::to_string(class_id) + ": " + what);
  };
  if (opcode_mix.empty()) bad("empty opcode mix");
  double total = 0.0, mem_mass = 0.0;
  for (const auto& [op, p] : opcode_mix) {
    if (!(p >= 0.0) || !std::isfinite(p)) bad("negative probability for " + op);
    total += p;
    if (is_memory_op(op)) mem_mass += p;
  }
  if (std::abs(total - 1.0) > 1e-9) bad("opcode mix sums to " + std::to_string(total));
  if (!(mem_fraction >= 0.0 && mem_fraction <= 1.0)) bad("mem_fraction outside [0, 1]");
  if (body_len == 0) bad("empty body");
  const auto n_mem = memory_slots(*this);
  if (n_mem > 0 && mem_mass <= 0.0) bad("memory slots but no memory opcode in the mix");
  if (n_mem < body_len && total - mem_mass <= 0.0) bad("compute slots but no compute opcode in the mix");
  if (loop_len.lo < 1 || loop_len.hi < loop_len.lo) bad("loop_len range empty");
  if (n_warps.lo < 1 || n_warps.hi < n_warps.lo) bad("n_warps range empty");
  if (stride < 1) bad("stride must be positive");
  if (n_warps.hi * loop_len.hi * kLanes * stride >= kArraySpan) bad("footprint too large");
  if (name.empty()) bad("empty name");
}

void to_json(nlohmann::json& j, const SynthClassSpec& s) {
  j = {{"class_id", s.class_id},
       {"name", s.name},
       {"opcode_mix", s.opcode_mix},
       {"mem_fraction", s.mem_fraction},
       {"body_len", s.body_len},
       {"loop_len", {s.loop_len.lo, s.loop_len.hi}},
       {"stride", s.stride},
       {"n_warps", {s.n_warps.lo, s.n_warps.hi}}};
}

void from_json(const nlohmann::json& j, SynthClassSpec& s) {
  try {
    s.class_id = j.at("class_id").get<std::uint32_t>();
    s.name = j.value("name", "class" + std::to_string(s.class_id));
    s.opcode_mix = j.at("opcode_mix").get<std::map<std::string, double>>();
    s.mem_fraction = j.at("mem_fraction").get<double>();
    s.body_len = j.value("body_len", s.body_len);
    auto range = [&](const char* key) {
      auto r = j.at(key).get<std::vector<std::int64_t>>();
      if (r.size() != 2) throw Error(ErrorCode::InvalidSpec, std::string(key) + " must be [lo, hi]");
      return IntRange{r[0], r[1]};
    };
    s.loop_len = range("loop_len");
    s.n_warps = range("n_warps");
    s.stride = j.at("stride").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("class spec: ") + e.what());
  }
}

std::vector<SynthClassSpec> default_class_specs() {
  std::vector<SynthClassSpec> specs(4);
  specs[0] = {0, "stream_triad",
              {{"LDG", 0.25}, {"STG", 0.125}, {"FFMA", 0.25}, {"FMUL", 0.125}, {"IADD", 0.125}, {"IMAD", 0.125}},
              0.375, 8, {3, 3}, 4, {2, 2}};
  specs[1] = {1, "dense_compute",
              {{"LDG", 0.125}, {"FFMA", 0.375}, {"FMUL", 0.125}, {"MUFU", 0.125}, {"FADD", 0.125}, {"FSETP", 0.125}},
              0.125, 8, {3, 3}, 4, {2, 2}};
  specs[2] = {2, "index_gather",
              {{"LDG", 0.375}, {"STG", 0.125}, {"IMAD", 0.125}, {"SHF", 0.125}, {"LOP3", 0.125}, {"IADD3", 0.125}},
              0.5, 8, {3, 3}, 128, {2, 2}};
  specs[3] = {3, "shared_tile",
              {{"LDS", 0.25}, {"STS", 0.125}, {"HMMA", 0.25}, {"IADD", 0.125}, {"ISETP", 0.125}, {"MOV", 0.125}},
              0.375, 8, {3, 3}, 8, {2, 2}};
  return specs;
}

void to_json(nlohmann::json& j, const CostCoefficients& c) {
  j = {{"alpha", c.alpha}, {"beta", c.beta}, {"gamma", c.gamma}, {"eta", c.eta}};
}

void from_json(const nlohmann::json& j, CostCoefficients& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.gamma = j.value("gamma", c.gamma);
  c.eta = j.value("eta", c.eta);
}

std::size_t distinct_lines(const KernelTrace& trace) {
  std::set<std::uint64_t> lines;
  for (const auto& w : trace.warps)
    for (const auto& r : w.records) {
      if (!r.is_memory()) continue;
      for (auto a : r.slot_values(r.src_regs.size())) lines.insert(static_cast<std::uint64_t>(a) / kLineBytes);
    }
  return lines.size();
}

double synth_cost_model(const KernelTrace& trace, const CostCoefficients& c, std::uint64_t seed) {
  if (c.alpha < 0 || c.beta < 0 || c.gamma < 0 || c.eta < 0)
    throw Error(ErrorCode::InvalidSpec, "cost coefficients must be nonnegative");
  std::size_t n_instr = 0, n_mem = 0;
  for (const auto& w : trace.warps)
    for (const auto& r : w.records) {
      ++n_instr;
      if (r.is_memory()) ++n_mem;
    }
  const double mean = c.alpha * static_cast<double>(n_instr) + c.beta * static_cast<double>(n_mem) +
                      c.gamma * static_cast<double>(distinct_lines(trace));
  double cycles = mean;
  if (c.eta > 0.0 && mean > 0.0) {
    Rng rng(derive_seed({seed, kCostTag, trace.launch_id}));
    cycles += rng.normal(0.0, c.eta * mean);
  }
  return std::max(cycles, 1.0);
}

KernelTrace synth_kernel(const SynthClassSpec& spec, std::uint64_t launch_id, std::uint64_t seed,
                         KernelNaming naming) {
  spec.validate();
  // The loop body is fixed per class; kernels of a class differ in trip
  // count, warp count, base address and register contents.
  Rng class_rng(derive_seed({seed, kTemplateTag, spec.class_id}));
  const auto body = make_body(spec, class_rng);
  Rng rng(derive_seed({seed, kKernelTag, launch_id}));
  const auto loop_len = rng.integer(spec.loop_len.lo, spec.loop_len.hi);
  const auto n_warps = rng.integer(spec.n_warps.lo, spec.n_warps.hi);
  const std::int64_t base = (1 + rng.integer(0, 1 << 16)) * 4096;

  KernelTrace k;
  k.launch_id = launch_id;
  k.kernel_name = naming == KernelNaming::PerClass ? spec.name : spec.name + "_" + std::to_string(launch_id);
  for (std::int64_t w = 0; w < n_warps; ++w) {
    WarpTrace warp;
    warp.cta = {static_cast<std::uint32_t>(w / 4), 0, 0};
    warp.warp_id = static_cast<std::uint32_t>(w % 4);
    std::unordered_map<std::string, std::vector<std::int64_t>> regs;
    auto read = [&](const std::string& reg) -> const std::vector<std::int64_t>& {
      auto [it, fresh] = regs.try_emplace(reg);
      if (fresh) {
        it->second.resize(kLanes);
        for (auto& v : it->second) v = reg[0] == 'P' ? rng.integer(0, 1) : rng.integer(0, 1 << 16);
      }
      return it->second;
    };
    for (std::int64_t i = 0; i < loop_len; ++i) {
      for (std::size_t s = 0; s < body.size(); ++s) {
        const auto& slot = body[s];
        InstructionRecord r;
        r.cta = warp.cta;
        r.warp_id = warp.warp_id;
        r.pc = 0x100 + 0x10 * s;
        r.mask = 0xFFFFFFFFu;
        r.opcode = slot.opcode;
        r.dest_regs = slot.dests;
        r.src_regs = slot.srcs;

        std::vector<std::int64_t> addrs;
        if (slot.memory) {
          r.mem_width = 4;
          const std::int64_t array = base + static_cast<std::int64_t>(s) * kArraySpan;
          for (std::uint32_t l = 0; l < kLanes; ++l)
            addrs.push_back(array + ((w * loop_len + i) * kLanes + l) * spec.stride);
        }
        std::vector<std::vector<std::int64_t>> slots;
        for (std::size_t a = 0; a < slot.srcs.size(); ++a) {
          const auto& src = slot.srcs[a];
          if (slot.memory && a == 0) {
            slots.push_back(addrs);
          } else if (is_immediate_operand(src)) {
            slots.emplace_back(kLanes, std::stoll(src));
          } else {
            slots.push_back(read(src));
          }
        }
        if (slot.memory) slots.push_back(addrs);
        for (const auto& vals : slots) r.dynamic_values.insert(r.dynamic_values.end(), vals.begin(), vals.end());

        for (const auto& d : slot.dests) {
          std::vector<std::int64_t> out(kLanes);
          for (std::uint32_t l = 0; l < kLanes; ++l) {
            std::int64_t acc = static_cast<std::int64_t>(s);
            for (const auto& vals : slots) acc = mix_value(acc, vals[l]);
            out[l] = d[0] == 'P' ? (acc & 1) : acc;
          }
          regs[d] = std::move(out);
        }
        warp.records.push_back(std::move(r));
      }
    }
    k.warps.push_back(std::move(warp));
  }
  return k;
}

SynthCorpus synth_corpus(std::span<const SynthClassSpec> specs, std::size_t kernels_per_class, std::uint64_t seed,
                         const SynthOptions& options) {
  if (specs.empty()) throw Error(ErrorCode::InvalidSpec, "no class specs");
  if (kernels_per_class < 1) throw Error(ErrorCode::InvalidSpec, "kernels_per_class must be >= 1");
  std::set<std::uint32_t> ids;
  for (const auto& s : specs) {
    s.validate();
    if (!ids.insert(s.class_id).second) throw Error(ErrorCode::InvalidSpec, "duplicate class id");
  }
  if (!(options.clock_hz > 0.0)) throw Error(ErrorCode::InvalidSpec, "clock must be positive");

  const std::size_t n = specs.size() * kernels_per_class;
  SynthCorpus out;
  out.traces.resize(n);
  std::vector<MetricRecord> records(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t id = 0; id < n; ++id) {
    try {
      const auto& spec = specs[id % specs.size()];
      auto k = synth_kernel(spec, id, seed, options.naming);
      auto& m = records[id];
      m.launch_id = id;
      m.kernel_name = k.kernel_name;
      m.class_id = spec.class_id;
      m.instruction_count = k.instruction_count();
      m.cycles = synth_cost_model(k, options.cost, seed);
      m.exec_time = m.cycles / options.clock_hz;

      std::size_t n_mem = 0, line_accesses = 0, lane_accesses = 0;
      for (const auto& w : k.warps)
        for (const auto& r : w.records) {
          if (!r.is_memory()) continue;
          ++n_mem;
          std::set<std::int64_t> lines;
          for (auto a : r.slot_values(r.src_regs.size())) lines.insert(a / static_cast<std::int64_t>(kLineBytes));
          line_accesses += lines.size();
          lane_accesses += r.active_lanes();
        }
      const double lines = static_cast<double>(distinct_lines(k));
      // Hit rate of a coalescing first-level cache: one miss per line per instruction.
      m.l1_hit = lane_accesses == 0 ? 0.0
                                    : 1.0 - static_cast<double>(line_accesses) / static_cast<double>(lane_accesses);
      m.l2_hit = n_mem == 0 ? 0.0 : 1.0 / (1.0 + lines / static_cast<double>(n_mem));
      m.occupancy = std::min(1.0, static_cast<double>(k.warps.size()) / 48.0);
      m.ipc = static_cast<double>(m.instruction_count) / m.cycles;
      out.traces[id] = std::move(k);
    } catch (...) {
      errors[id] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t id = 0; id < n; ++id)
    out.manifest.kernels.push_back({id, out.traces[id].kernel_name, ""});
  out.truth = MetricTable(std::move(records));
  return out;
}

SynthCorpus generate_corpus(std::span<const SynthClassSpec> specs, std::size_t kernels_per_class, std::uint64_t seed,
                            const std::filesystem::path& out_dir, const SynthOptions& options) {
  auto corpus = synth_corpus(specs, kernels_per_class, seed, options);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "traces", ec);
  if (ec) throw Error(ErrorCode::MissingFile, "cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::exception_ptr> errors(corpus.traces.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < corpus.traces.size(); ++i) {
    try {
      const auto& k = corpus.traces[i];
      char name[32];
      std::snprintf(name, sizeof name, "kernel_%llu.trace", static_cast<unsigned long long>(k.launch_id));
      corpus.manifest.kernels[i].path = fs::path("traces") / name;
      std::ofstream f(out_dir / corpus.manifest.kernels[i].path, std::ios::binary);
      if (!f) throw Error(ErrorCode::MissingFile, "cannot write trace " + std::string(name));
      std::vector<InstructionRecord> records;
      for (const auto& w : k.warps) records.insert(records.end(), w.records.begin(), w.records.end());
      write_trace(f, records);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  corpus.manifest.labels_path = "labels.json";
  corpus.truth.save(out_dir / "labels.json");
  corpus.manifest.save(out_dir / "manifest.json");
  return corpus;
}

}  // namespace gcls
