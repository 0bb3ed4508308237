#include "gcls/trace.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <exception>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "gcls/error.hpp"

namespace gcls {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool is_blank_or_comment(std::string_view line) {
  for (char c : line) {
    if (c == '#') return true;
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

class TokenCursor {
 public:
  TokenCursor(std::vector<std::string_view> tokens, std::size_t line_no)
      : tokens_(std::move(tokens)), line_no_(line_no) {}

  std::string_view next() {
    if (pos_ >= tokens_.size()) fail("too few fields");
    return tokens_[pos_++];
  }

  template <typename T>
  T next_int(int base = 10) {
    std::string_view tok = next();
    if (base == 16 && tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X')) tok.remove_prefix(2);
    T value{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value, base);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) fail("bad integer '" + std::string(tok) + "'");
    return value;
  }

  bool done() const { return pos_ == tokens_.size(); }

  [[noreturn]] void fail(const std::string& why) const {
    throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no_) + ": " + why);
  }

 private:
  std::vector<std::string_view> tokens_;
  std::size_t pos_ = 0;
  std::size_t line_no_;
};

constexpr std::size_t kMaxList = 4096;

}  // namespace

std::size_t InstructionRecord::active_lanes() const { return static_cast<std::size_t>(std::popcount(mask)); }

std::span<const std::int64_t> InstructionRecord::slot_values(std::size_t slot) const {
  const std::size_t lanes = active_lanes();
  if ((slot + 1) * lanes > dynamic_values.size()) return {};
  return std::span<const std::int64_t>(dynamic_values).subspan(slot * lanes, lanes);
}

std::size_t KernelTrace::instruction_count() const {
  std::size_t n = 0;
  for (const auto& w : warps) n += w.records.size();
  return n;
}

InstructionRecord parse_trace_line(std::string_view line, std::size_t line_no) {
  TokenCursor cur(split_ws(line), line_no);
  InstructionRecord rec;
  rec.cta.x = cur.next_int<std::uint32_t>();
  rec.cta.y = cur.next_int<std::uint32_t>();
  rec.cta.z = cur.next_int<std::uint32_t>();
  rec.warp_id = cur.next_int<std::uint32_t>();
  rec.pc = cur.next_int<std::uint64_t>(16);
  rec.mask = cur.next_int<std::uint32_t>(16);
  if (rec.mask == 0) cur.fail("empty active mask");

  const auto n_dests = cur.next_int<std::size_t>();
  if (n_dests > kMaxList) cur.fail("implausible #dests");
  for (std::size_t i = 0; i < n_dests; ++i) rec.dest_regs.emplace_back(cur.next());
  rec.opcode = std::string(cur.next());
  const auto n_srcs = cur.next_int<std::size_t>();
  if (n_srcs > kMaxList) cur.fail("implausible #srcs");
  for (std::size_t i = 0; i < n_srcs; ++i) rec.src_regs.emplace_back(cur.next());
  rec.mem_width = cur.next_int<std::uint32_t>();

  const auto n_vals = cur.next_int<std::size_t>();
  if (n_vals != rec.value_slots() * rec.active_lanes()) {
    cur.fail("value count " + std::to_string(n_vals) + " does not match " + std::to_string(rec.value_slots()) +
             " slots x " + std::to_string(rec.active_lanes()) + " lanes");
  }
  rec.dynamic_values.reserve(n_vals);
  for (std::size_t i = 0; i < n_vals; ++i) rec.dynamic_values.push_back(cur.next_int<std::int64_t>());
  if (!cur.done()) cur.fail("trailing fields");
  return rec;
}

std::string format_trace_line(const InstructionRecord& rec) {
  std::ostringstream os;
  char hex[32];
  os << rec.cta.x << ' ' << rec.cta.y << ' ' << rec.cta.z << ' ' << rec.warp_id << ' ';
  std::snprintf(hex, sizeof hex, "%04llx", static_cast<unsigned long long>(rec.pc));
  os << hex << ' ';
  std::snprintf(hex, sizeof hex, "%08x", rec.mask);
  os << hex << ' ' << rec.dest_regs.size();
  for (const auto& r : rec.dest_regs) os << ' ' << r;
  os << ' ' << rec.opcode << ' ' << rec.src_regs.size();
  for (const auto& r : rec.src_regs) os << ' ' << r;
  os << ' ' << rec.mem_width << ' ' << rec.dynamic_values.size();
  for (auto v : rec.dynamic_values) os << ' ' << v;
  return os.str();
}

void write_trace(std::ostream& out, std::span<const InstructionRecord> records) {
  out << "# tb_x tb_y tb_z warp_id pc mask n_dests dests.. opcode n_srcs srcs.. mem_width n_vals vals..\n";
  for (const auto& r : records) out << format_trace_line(r) << '\n';
}

void WarpGrouper::add(InstructionRecord rec) {
  auto key = std::make_tuple(rec.cta, rec.warp_id);
  auto it = index_.find(key);
  if (it == index_.end()) {
    it = index_.emplace(key, warps_.size()).first;
    warps_.push_back(WarpTrace{rec.cta, rec.warp_id, {}});
  }
  warps_[it->second].records.push_back(std::move(rec));
  ++count_;
}

std::vector<WarpTrace> WarpGrouper::finish() && { return std::move(warps_); }

std::vector<WarpTrace> group_by_warp(std::span<const InstructionRecord> records) {
  WarpGrouper g;
  for (const auto& r : records) g.add(r);
  return std::move(g).finish();
}

KernelTrace parse_trace_file(std::istream& in, std::string kernel_name, std::uint64_t launch_id) {
  WarpGrouper grouper;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank_or_comment(line)) continue;
    grouper.add(parse_trace_line(line, line_no));
  }
  if (grouper.size() == 0) throw Error(ErrorCode::EmptyTrace, "kernel " + std::to_string(launch_id) + " has no records");
  KernelTrace k;
  k.kernel_name = std::move(kernel_name);
  k.launch_id = launch_id;
  k.warps = std::move(grouper).finish();
  return k;
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadArtifact, file.string() + ": " + e.what());
  }
  const auto base = file.parent_path();
  CorpusManifest m;
  try {
    for (const auto& k : j.at("kernels")) {
      ManifestEntry e;
      e.launch_id = k.at("launch_id").get<std::uint64_t>();
      e.name = k.at("name").get<std::string>();
      std::filesystem::path p = k.at("path").get<std::string>();
      e.path = p.is_absolute() ? p : base / p;
      m.kernels.push_back(std::move(e));
    }
    if (j.contains("labels") && !j["labels"].is_null()) {
      std::filesystem::path p = j["labels"].get<std::string>();
      m.labels_path = p.is_absolute() ? p : base / p;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadArtifact, file.string() + ": " + e.what());
  }
  return m;
}

void CorpusManifest::save(const std::filesystem::path& file) const {
  const auto base = file.parent_path();
  nlohmann::json j;
  j["kernels"] = nlohmann::json::array();
  for (const auto& k : kernels) {
    auto rel = k.path.is_absolute() && !base.empty() ? std::filesystem::relative(k.path, base) : k.path;
    j["kernels"].push_back({{"launch_id", k.launch_id}, {"name", k.name}, {"path", rel.generic_string()}});
  }
  if (labels_path) {
    auto rel = labels_path->is_absolute() && !base.empty() ? std::filesystem::relative(*labels_path, base) : *labels_path;
    j["labels"] = rel.generic_string();
  }
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + file.string());
  out << j.dump(2) << '\n';
}

std::vector<KernelTrace> load_corpus(const CorpusManifest& manifest) {
  std::vector<ManifestEntry> entries = manifest.kernels;
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.launch_id < b.launch_id; });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].launch_id == entries[i - 1].launch_id) {
      throw Error(ErrorCode::DuplicateLaunchId, "launch_id " + std::to_string(entries[i].launch_id));
    }
  }
  for (const auto& e : entries) {
    if (!std::filesystem::exists(e.path)) {
      throw Error(ErrorCode::MissingFile, "launch_id " + std::to_string(e.launch_id) + ": " + e.path.string());
    }
  }

  std::vector<KernelTrace> out(entries.size());
  std::vector<std::exception_ptr> errors(entries.size());
  const auto n = static_cast<std::int64_t>(entries.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& e = entries[static_cast<std::size_t>(i)];
    try {
      std::ifstream in(e.path);
      if (!in) throw Error(ErrorCode::MissingFile, e.path.string());
      out[static_cast<std::size_t>(i)] = parse_trace_file(in, e.name, e.launch_id);
    } catch (const Error& err) {
      errors[static_cast<std::size_t>(i)] = std::make_exception_ptr(err.with_context("launch_id " + std::to_string(e.launch_id)));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return out;
}

}  // namespace gcls
