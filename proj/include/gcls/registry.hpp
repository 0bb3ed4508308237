#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace gcls {

enum class VarCategory : std::uint8_t { Reg, Pred, Mem };

/// Token vocabularies for node featurization. Id 0 of every namespace is UNK;
/// known tokens are numbered densely from 1 in registration order.
class TokenRegistry {
 public:
  static constexpr std::uint32_t kUnk = 0;

  TokenRegistry(std::vector<std::string> opcodes, std::vector<std::string> pseudo_ops,
                std::vector<std::string> memory_opcodes);

  /// SASS opcodes used by the synthetic corpus plus common extras.
  static TokenRegistry defaults();
  static TokenRegistry load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  std::uint32_t opcode_id(std::string_view opcode) const;
  std::uint32_t pseudo_id(std::string_view op) const;
  std::uint32_t var_category_id(VarCategory c) const { return static_cast<std::uint32_t>(c) + 1; }

  bool is_memory_opcode(std::string_view opcode) const;
  std::size_t opcode_vocab() const { return opcodes_.size() + 1; }
  std::size_t pseudo_vocab() const { return pseudo_ops_.size() + 1; }
  static constexpr std::size_t var_vocab() { return 4; }

  const std::vector<std::string>& opcodes() const { return opcodes_; }
  const std::vector<std::string>& pseudo_ops() const { return pseudo_ops_; }
  const std::vector<std::string>& memory_opcodes() const { return memory_opcodes_; }

 private:
  std::vector<std::string> opcodes_;
  std::vector<std::string> pseudo_ops_;
  std::vector<std::string> memory_opcodes_;
  std::unordered_map<std::string, std::uint32_t> opcode_ids_;
  std::unordered_map<std::string, std::uint32_t> pseudo_ids_;
  std::unordered_set<std::string> memory_set_;
};

inline constexpr std::string_view kMemRefPseudo = "MEMREF";

/// Category of a register operand name: P*/UP* are predicates, everything else a register.
VarCategory register_category(std::string_view reg);
/// Immediate operands (leading digit, '-' or 0x prefix) do not become variable nodes.
bool is_immediate_operand(std::string_view operand);
/// Memory instructions that write their target line (stores, reductions, atomics).
bool writes_memory(std::string_view opcode);
/// Memory instructions that read their target line (loads, atomics).
bool reads_memory(std::string_view opcode);

}  // namespace gcls
