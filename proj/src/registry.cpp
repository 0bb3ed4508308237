#include "gcls/registry.hpp"

#include <fstream>

#include <json.hpp>

#include "gcls/error.hpp"

namespace gcls {

namespace {

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

}  // namespace

TokenRegistry::TokenRegistry(std::vector<std::string> opcodes, std::vector<std::string> pseudo_ops,
                             std::vector<std::string> memory_opcodes)
    : opcodes_(std::move(opcodes)), pseudo_ops_(std::move(pseudo_ops)), memory_opcodes_(std::move(memory_opcodes)) {
  for (std::size_t i = 0; i < opcodes_.size(); ++i) {
    if (!opcode_ids_.emplace(opcodes_[i], static_cast<std::uint32_t>(i + 1)).second) {
      throw Error(ErrorCode::BadConfig, "duplicate opcode token " + opcodes_[i]);
    }
  }
  for (std::size_t i = 0; i < pseudo_ops_.size(); ++i) {
    if (!pseudo_ids_.emplace(pseudo_ops_[i], static_cast<std::uint32_t>(i + 1)).second) {
      throw Error(ErrorCode::BadConfig, "duplicate pseudo-op token " + pseudo_ops_[i]);
    }
  }
  memory_set_.insert(memory_opcodes_.begin(), memory_opcodes_.end());
}

TokenRegistry TokenRegistry::defaults() {
  return TokenRegistry(
      {"LDG", "STG", "LDS", "STS", "LDL", "STL", "LD", "ST", "ATOMG", "RED", "LDC", "IADD", "IADD3", "IMAD",
       "ISETP", "LOP3", "SHF", "MOV", "S2R", "FADD", "FMUL", "FFMA", "FSETP", "MUFU", "DADD", "DMUL", "DFMA",
       "HMMA", "BRA", "BAR", "EXIT", "NOP"},
      {std::string(kMemRefPseudo)}, {"LDG", "STG", "LDS", "STS", "LDL", "STL", "LD", "ST", "ATOMG", "RED"});
}

TokenRegistry TokenRegistry::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, file.string());
  try {
    nlohmann::json j;
    in >> j;
    auto cats = j.value("var_categories", std::vector<std::string>{"REG", "PRED", "MEM"});
    if (cats != std::vector<std::string>{"REG", "PRED", "MEM"}) {
      throw Error(ErrorCode::BadConfig, "var_categories must be [REG, PRED, MEM]");
    }
    return TokenRegistry(j.at("opcodes").get<std::vector<std::string>>(),
                         j.at("pseudo_ops").get<std::vector<std::string>>(),
                         j.at("memory_opcodes").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, file.string() + ": " + e.what());
  }
}

void TokenRegistry::save(const std::filesystem::path& file) const {
  nlohmann::json j{{"opcodes", opcodes_},
                   {"pseudo_ops", pseudo_ops_},
                   {"var_categories", {"REG", "PRED", "MEM"}},
                   {"memory_opcodes", memory_opcodes_}};
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + file.string());
  out << j.dump(2) << '\n';
}

std::uint32_t TokenRegistry::opcode_id(std::string_view opcode) const {
  auto it = opcode_ids_.find(std::string(opcode));
  return it == opcode_ids_.end() ? kUnk : it->second;
}

std::uint32_t TokenRegistry::pseudo_id(std::string_view op) const {
  auto it = pseudo_ids_.find(std::string(op));
  return it == pseudo_ids_.end() ? kUnk : it->second;
}

bool TokenRegistry::is_memory_opcode(std::string_view opcode) const {
  return memory_set_.contains(std::string(opcode));
}

VarCategory register_category(std::string_view reg) {
  if (starts_with(reg, "UP") || (!reg.empty() && reg[0] == 'P' && reg != "PT" && reg.size() > 1 && reg[1] >= '0' && reg[1] <= '9')) {
    return VarCategory::Pred;
  }
  if (reg == "PT") return VarCategory::Pred;
  return VarCategory::Reg;
}

bool is_immediate_operand(std::string_view operand) {
  if (operand.empty()) return false;
  const char c = operand[0];
  return (c >= '0' && c <= '9') || c == '-' || c == '+';
}

bool writes_memory(std::string_view opcode) {
  return starts_with(opcode, "ST") || starts_with(opcode, "RED") || starts_with(opcode, "ATOM");
}

bool reads_memory(std::string_view opcode) { return starts_with(opcode, "LD") || starts_with(opcode, "ATOM"); }

}  // namespace gcls
