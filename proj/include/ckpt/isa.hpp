#pragma once

// Toy x86-flavoured instruction set, its textual assembly format and the
// program loader.  See docs/assembly.md for the grammar.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ckpt {

/// General-purpose registers in x86-64 encoding order.
enum class Reg : std::uint8_t {
  rax, rcx, rdx, rbx, rsp, rbp, rsi, rdi,
  r8, r9, r10, r11, r12, r13, r14, r15,
};
inline constexpr int kGprCount = 16;

std::string_view to_string(Reg r);
std::optional<Reg> parse_reg(std::string_view name);

enum class Opcode : std::uint8_t {
  PushReg,
  PopReg,
  MovImmToReg,
  MovRegToReg,
  SubRsp,
  AddRsp,
  StoreLocal,
  LoadLocal,
  AluOp,
  Jmp,
  JmpCond,
  Call,
  PseudoCall,
  Ret,
  Out,
  Halt,
};

enum class AluKind : std::uint8_t { Add, Sub, Mul, Cmp, And, Or, Xor, Shl, Shr };
enum class Cond : std::uint8_t { Eq, Ne, Lt, Ge, Gt, Le };

struct Instruction {
  Opcode op = Opcode::Halt;
  Reg dst = Reg::rax;
  Reg src = Reg::rax;
  AluKind alu = AluKind::Add;
  Cond cond = Cond::Eq;
  bool src_is_imm = false;
  /// Immediate operand, rsp adjustment, or rbp-relative byte offset.
  std::int64_t imm = 0;
  /// Jump label or callee function name.
  std::string target;
  /// Absolute code address of `target`, filled by Program::link().
  std::uint64_t target_addr = 0;

  bool is_call() const { return op == Opcode::Call || op == Opcode::PseudoCall; }
  bool is_branch() const { return op == Opcode::Jmp || op == Opcode::JmpCond; }
  /// True for instructions that change rsp.
  bool moves_stack() const;

  bool operator==(const Instruction&) const = default;
};

// Convenience constructors, mostly for tests and the transform pass.
namespace ins {
Instruction push(Reg r);
Instruction pop(Reg r);
Instruction mov_imm(Reg dst, std::int64_t value);
Instruction mov(Reg dst, Reg src);
Instruction sub_rsp(std::int64_t bytes);
Instruction add_rsp(std::int64_t bytes);
Instruction store(std::int64_t offset, Reg src);
Instruction load(Reg dst, std::int64_t offset);
Instruction alu(AluKind kind, Reg dst, Reg src);
Instruction alu_imm(AluKind kind, Reg dst, std::int64_t value);
Instruction jmp(std::string label);
Instruction jcc(Cond cond, std::string label);
Instruction call(std::string function);
Instruction pseudo_call(std::string function);
Instruction ret();
Instruction out(Reg r);
Instruction halt();
}  // namespace ins

std::string format_instruction(const Instruction& in);

struct FunctionDef {
  std::string name;
  std::vector<Instruction> body;
  /// Bytes reserved by the prologue's `sub rsp, N` (0 when absent).
  std::int64_t frame_bytes = 0;
  bool is_pseudo = false;
  /// Local label -> index into body.
  std::map<std::string, std::size_t> labels;

  bool operator==(const FunctionDef&) const = default;
};

struct LoopAnnotation {
  std::string function;
  std::string head_label;
  /// Index into the owning function's body of the jump that closes the loop.
  std::size_t back_edge_index = 0;
  std::optional<std::uint64_t> static_trip_count;
  int nesting_depth = 1;

  bool operator==(const LoopAnnotation&) const = default;
};

struct FunctionLayout {
  std::uint64_t entry = 0;
  std::uint64_t end = 0;  // one past the last instruction
};

/// A validated program.  Functions keep source order; each function's body
/// is laid out contiguously starting at address 0 in that order.
class Program {
 public:
  Program() = default;

  const std::vector<FunctionDef>& functions() const { return functions_; }
  const std::vector<LoopAnnotation>& loops() const { return loops_; }
  const std::string& entry() const { return entry_; }

  const FunctionDef* find(std::string_view name) const;
  const FunctionDef& function(std::string_view name) const;
  std::size_t function_index(std::string_view name) const;
  const FunctionLayout& layout(std::size_t function_index) const { return layout_.at(function_index); }
  std::uint64_t entry_address() const;
  std::uint64_t function_entry(std::string_view name) const;

  /// Flat, linked code indexed by instruction address.
  const std::vector<Instruction>& code() const { return code_; }
  std::size_t function_at(std::uint64_t addr) const { return owner_.at(addr); }
  /// Address of a label (function name or local label).
  std::uint64_t label_address(std::string_view label) const;

  /// Innermost annotated loop lexically containing `addr`, if any.
  const LoopAnnotation* enclosing_loop(std::uint64_t addr) const;
  /// Address range [head, back_edge] of an annotated loop.
  std::pair<std::uint64_t, std::uint64_t> loop_span(const LoopAnnotation& loop) const;

  /// Validates and links a program built in memory.  Throws ckpt::Error.
  static Program build(std::vector<FunctionDef> functions, std::string entry, std::vector<LoopAnnotation> loops);

  bool operator==(const Program& other) const {
    return functions_ == other.functions_ && entry_ == other.entry_ && loops_ == other.loops_;
  }

 private:
  void validate_and_link();

  std::vector<FunctionDef> functions_;
  std::string entry_;
  std::vector<LoopAnnotation> loops_;

  std::vector<FunctionLayout> layout_;
  std::vector<Instruction> code_;
  std::vector<std::size_t> owner_;
  std::vector<int> innermost_loop_;  // per address, index into loops_ or -1
};

Program parse_program(std::string_view text);
Program load_program_file(const std::string& path);
std::string print_program(const Program& p);

std::size_t static_instruction_count(const Program& p);

}  // namespace ckpt
