#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <tuple>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gcls {

struct CtaId {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t z = 0;
  auto operator<=>(const CtaId&) const = default;
};

/// One traced SASS instruction.
///
/// dynamic_values holds, per active lane in lane order, one value for each
/// source operand followed by the memory address when mem_width > 0. Values
/// are stored slot-major: all lanes of slot 0, then all lanes of slot 1, ...
struct InstructionRecord {
  CtaId cta;
  std::uint32_t warp_id = 0;
  std::uint64_t pc = 0;
  std::uint32_t mask = 0;
  std::vector<std::string> dest_regs;
  std::string opcode;
  std::vector<std::string> src_regs;
  std::uint32_t mem_width = 0;
  std::vector<std::int64_t> dynamic_values;

  bool is_memory() const { return mem_width > 0; }
  std::size_t active_lanes() const;
  std::size_t value_slots() const { return src_regs.size() + (is_memory() ? 1 : 0); }
  /// Values recorded for one slot (source index, or src_regs.size() for the address).
  std::span<const std::int64_t> slot_values(std::size_t slot) const;

  bool operator==(const InstructionRecord&) const = default;
};

struct WarpTrace {
  CtaId cta;
  std::uint32_t warp_id = 0;
  std::vector<InstructionRecord> records;
};

struct KernelTrace {
  std::string kernel_name;
  std::uint64_t launch_id = 0;
  std::vector<WarpTrace> warps;

  std::size_t instruction_count() const;
};

struct ManifestEntry {
  std::uint64_t launch_id = 0;
  std::string name;
  std::filesystem::path path;
};

struct CorpusManifest {
  std::vector<ManifestEntry> kernels;
  std::optional<std::filesystem::path> labels_path;

  /// Relative paths are resolved against the manifest's directory.
  static CorpusManifest load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;
};

/// Parses one non-comment line. line_no is 1-based and only used in errors.
InstructionRecord parse_trace_line(std::string_view line, std::size_t line_no);
std::string format_trace_line(const InstructionRecord& rec);

/// Streams the file line by line; records go straight into their warp group.
KernelTrace parse_trace_file(std::istream& in, std::string kernel_name, std::uint64_t launch_id);
void write_trace(std::ostream& out, std::span<const InstructionRecord> records);

/// Incremental warp grouping; warps ordered by first appearance.
class WarpGrouper {
 public:
  void add(InstructionRecord rec);
  std::vector<WarpTrace> finish() &&;
  std::size_t size() const { return count_; }

 private:
  std::vector<WarpTrace> warps_;
  std::map<std::tuple<CtaId, std::uint32_t>, std::size_t> index_;
  std::size_t count_ = 0;
};

std::vector<WarpTrace> group_by_warp(std::span<const InstructionRecord> records);

/// Parses every kernel of the manifest (in parallel) and returns them in launch order.
std::vector<KernelTrace> load_corpus(const CorpusManifest& manifest);

}  // namespace gcls
