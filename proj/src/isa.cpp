#include "ckpt/isa.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "ckpt/error.hpp"

namespace ckpt {

namespace {

constexpr std::array<std::string_view, kGprCount> kRegNames = {
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
    "r8",  "r9",  "r10", "r11", "r12", "r13", "r14", "r15",
};

struct AluName {
  std::string_view name;
  AluKind kind;
};
constexpr std::array<AluName, 9> kAluNames = {{
    {"add", AluKind::Add}, {"sub", AluKind::Sub}, {"mul", AluKind::Mul},
    {"cmp", AluKind::Cmp}, {"and", AluKind::And}, {"or", AluKind::Or},
    {"xor", AluKind::Xor}, {"shl", AluKind::Shl}, {"shr", AluKind::Shr},
}};

struct CondName {
  std::string_view name;
  Cond cond;
};
constexpr std::array<CondName, 6> kCondNames = {{
    {"je", Cond::Eq}, {"jne", Cond::Ne}, {"jl", Cond::Lt},
    {"jge", Cond::Ge}, {"jg", Cond::Gt}, {"jle", Cond::Le},
}};

std::string_view alu_name(AluKind k) {
  for (const auto& a : kAluNames) {
    if (a.kind == k) return a.name;
  }
  return "?";
}

std::string_view cond_name(Cond c) {
  for (const auto& n : kCondNames) {
    if (n.cond == c) return n.name;
  }
  return "?";
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$'; }

bool is_identifier(std::string_view s) {
  if (s.empty() || !is_ident_start(s.front()) || s.front() == '.') return false;
  return std::all_of(s.begin(), s.end(), is_ident_char);
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    neg = s.front() == '-';
    s.remove_prefix(1);
  }
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    s.remove_prefix(2);
  }
  if (s.empty()) return std::nullopt;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  auto sv = static_cast<std::int64_t>(v);
  return neg ? -sv : sv;
}

// One lexical token on a line, with its 1-based column.
struct Token {
  std::string_view text;
  std::size_t column;
};

class LineParser {
 public:
  LineParser(std::string_view line, std::size_t line_no) : line_(line), line_no_(line_no) {}

  [[noreturn]] void fail(const std::string& msg, std::size_t column) const {
    throw Error(ErrorKind::Syntax, msg, line_no_, column);
  }

  std::size_t line_no() const { return line_no_; }

  // Splits "a, b" style operand lists; brackets are kept intact.
  std::vector<Token> split_operands(std::size_t from) const {
    std::vector<Token> out;
    std::size_t i = from;
    while (i < line_.size()) {
      while (i < line_.size() && std::isspace(static_cast<unsigned char>(line_[i]))) ++i;
      if (i >= line_.size()) break;
      std::size_t start = i;
      while (i < line_.size() && line_[i] != ',') ++i;
      std::size_t end = i;
      while (end > start && std::isspace(static_cast<unsigned char>(line_[end - 1]))) --end;
      if (end == start) fail("empty operand", start + 1);
      out.push_back({line_.substr(start, end - start), start + 1});
      if (i < line_.size()) {
        ++i;  // skip comma
        std::size_t j = i;
        while (j < line_.size() && std::isspace(static_cast<unsigned char>(line_[j]))) ++j;
        if (j >= line_.size()) fail("trailing comma", i);
      }
    }
    return out;
  }

  Reg reg(const Token& t) const {
    auto r = parse_reg(t.text);
    if (!r) fail("expected register, got '" + std::string(t.text) + "'", t.column);
    return *r;
  }

  std::int64_t imm(const Token& t) const {
    auto v = parse_int(t.text);
    if (!v) fail("expected integer, got '" + std::string(t.text) + "'", t.column);
    return *v;
  }

  // [rbp-N]
  std::int64_t mem(const Token& t) const {
    std::string s;
    for (char c : t.text) {
      if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
    }
    if (s.size() < 7 || s.front() != '[' || s.back() != ']' || s.compare(1, 4, "rbp-") != 0) {
      fail("expected memory operand [rbp-N], got '" + std::string(t.text) + "'", t.column);
    }
    auto v = parse_int(std::string_view(s).substr(5, s.size() - 6));
    if (!v || *v <= 0) fail("bad rbp offset in '" + std::string(t.text) + "'", t.column);
    return *v;
  }

  std::string label(const Token& t) const {
    if (!is_identifier(t.text)) fail("expected label, got '" + std::string(t.text) + "'", t.column);
    return std::string(t.text);
  }

  Instruction instruction(Token mnemonic, std::size_t operands_from) const {
    const auto ops = split_operands(operands_from);
    auto expect = [&](std::size_t n) {
      if (ops.size() != n) {
        fail(std::string(mnemonic.text) + " takes " + std::to_string(n) + " operand(s)", mnemonic.column);
      }
    };
    const std::string_view m = mnemonic.text;

    if (m == "push") { expect(1); return ins::push(reg(ops[0])); }
    if (m == "pop") { expect(1); return ins::pop(reg(ops[0])); }
    if (m == "ret" || m == "retq") { expect(0); return ins::ret(); }
    if (m == "halt" || m == "hlt") { expect(0); return ins::halt(); }
    if (m == "out") { expect(1); return ins::out(reg(ops[0])); }
    if (m == "jmp") { expect(1); return ins::jmp(label(ops[0])); }
    if (m == "call" || m == "callq") { expect(1); return ins::call(label(ops[0])); }
    if (m == "pcall") { expect(1); return ins::pseudo_call(label(ops[0])); }
    for (const auto& c : kCondNames) {
      if (m == c.name) { expect(1); return ins::jcc(c.cond, label(ops[0])); }
    }
    if (m == "mov") {
      expect(2);
      Reg dst = reg(ops[0]);
      if (auto src = parse_reg(ops[1].text)) return ins::mov(dst, *src);
      return ins::mov_imm(dst, imm(ops[1]));
    }
    if (m == "store") { expect(2); return ins::store(mem(ops[0]), reg(ops[1])); }
    if (m == "load") { expect(2); return ins::load(reg(ops[0]), mem(ops[1])); }
    for (const auto& a : kAluNames) {
      if (m != a.name) continue;
      expect(2);
      Reg dst = reg(ops[0]);
      auto src = parse_reg(ops[1].text);
      if (dst == Reg::rsp && !src && (a.kind == AluKind::Sub || a.kind == AluKind::Add)) {
        std::int64_t bytes = imm(ops[1]);
        return a.kind == AluKind::Sub ? ins::sub_rsp(bytes) : ins::add_rsp(bytes);
      }
      if (dst == Reg::rsp || dst == Reg::rbp) {
        fail("arithmetic on " + std::string(to_string(dst)) + " is only allowed as sub/add rsp, imm", ops[0].column);
      }
      return src ? ins::alu(a.kind, dst, *src) : ins::alu_imm(a.kind, dst, imm(ops[1]));
    }
    fail("unknown mnemonic '" + std::string(m) + "'", mnemonic.column);
  }

  // key=value arguments of a directive
  std::map<std::string, Token> directive_args(std::size_t from, std::vector<Token>& flags) const {
    std::map<std::string, Token> args;
    std::size_t i = from;
    while (i < line_.size()) {
      while (i < line_.size() && std::isspace(static_cast<unsigned char>(line_[i]))) ++i;
      if (i >= line_.size()) break;
      std::size_t start = i;
      while (i < line_.size() && !std::isspace(static_cast<unsigned char>(line_[i]))) ++i;
      std::string_view word = line_.substr(start, i - start);
      auto eq = word.find('=');
      if (eq == std::string_view::npos) {
        flags.push_back({word, start + 1});
      } else {
        std::string key(word.substr(0, eq));
        if (args.count(key)) fail("duplicate argument '" + key + "'", start + 1);
        args.emplace(key, Token{word.substr(eq + 1), start + eq + 2});
      }
    }
    return args;
  }

  std::string_view line() const { return line_; }

 private:
  std::string_view line_;
  std::size_t line_no_;
};

struct PendingLoop {
  LoopAnnotation loop;
  std::size_t line;
};

[[noreturn]] void fail(ErrorKind k, const std::string& msg) { throw Error(k, msg); }

}  // namespace

std::string_view to_string(Reg r) { return kRegNames[static_cast<std::size_t>(r)]; }

std::optional<Reg> parse_reg(std::string_view name) {
  if (!name.empty() && name.front() == '%') name.remove_prefix(1);
  for (std::size_t i = 0; i < kRegNames.size(); ++i) {
    if (kRegNames[i] == name) return static_cast<Reg>(i);
  }
  return std::nullopt;
}

bool Instruction::moves_stack() const {
  switch (op) {
    case Opcode::PushReg:
    case Opcode::PopReg:
    case Opcode::SubRsp:
    case Opcode::AddRsp:
    case Opcode::Call:
    case Opcode::PseudoCall:
    case Opcode::Ret:
      return true;
    case Opcode::MovRegToReg:
      return dst == Reg::rsp;
    default:
      return false;
  }
}

namespace ins {
Instruction push(Reg r) { Instruction i; i.op = Opcode::PushReg; i.src = r; return i; }
Instruction pop(Reg r) { Instruction i; i.op = Opcode::PopReg; i.dst = r; return i; }
Instruction mov_imm(Reg dst, std::int64_t v) {
  Instruction i; i.op = Opcode::MovImmToReg; i.dst = dst; i.src_is_imm = true; i.imm = v; return i;
}
Instruction mov(Reg dst, Reg src) { Instruction i; i.op = Opcode::MovRegToReg; i.dst = dst; i.src = src; return i; }
Instruction sub_rsp(std::int64_t b) { Instruction i; i.op = Opcode::SubRsp; i.dst = Reg::rsp; i.imm = b; return i; }
Instruction add_rsp(std::int64_t b) { Instruction i; i.op = Opcode::AddRsp; i.dst = Reg::rsp; i.imm = b; return i; }
Instruction store(std::int64_t off, Reg src) { Instruction i; i.op = Opcode::StoreLocal; i.src = src; i.imm = off; return i; }
Instruction load(Reg dst, std::int64_t off) { Instruction i; i.op = Opcode::LoadLocal; i.dst = dst; i.imm = off; return i; }
Instruction alu(AluKind k, Reg dst, Reg src) {
  Instruction i; i.op = Opcode::AluOp; i.alu = k; i.dst = dst; i.src = src; return i;
}
Instruction alu_imm(AluKind k, Reg dst, std::int64_t v) {
  Instruction i; i.op = Opcode::AluOp; i.alu = k; i.dst = dst; i.src_is_imm = true; i.imm = v; return i;
}
Instruction jmp(std::string l) { Instruction i; i.op = Opcode::Jmp; i.target = std::move(l); return i; }
Instruction jcc(Cond c, std::string l) { Instruction i; i.op = Opcode::JmpCond; i.cond = c; i.target = std::move(l); return i; }
Instruction call(std::string f) { Instruction i; i.op = Opcode::Call; i.target = std::move(f); return i; }
Instruction pseudo_call(std::string f) { Instruction i; i.op = Opcode::PseudoCall; i.target = std::move(f); return i; }
Instruction ret() { Instruction i; i.op = Opcode::Ret; return i; }
Instruction out(Reg r) { Instruction i; i.op = Opcode::Out; i.src = r; return i; }
Instruction halt() { Instruction i; i.op = Opcode::Halt; return i; }
}  // namespace ins

std::string format_instruction(const Instruction& in) {
  std::ostringstream os;
  switch (in.op) {
    case Opcode::PushReg: os << "push " << to_string(in.src); break;
    case Opcode::PopReg: os << "pop " << to_string(in.dst); break;
    case Opcode::MovImmToReg: os << "mov " << to_string(in.dst) << ", " << in.imm; break;
    case Opcode::MovRegToReg: os << "mov " << to_string(in.dst) << ", " << to_string(in.src); break;
    case Opcode::SubRsp: os << "sub rsp, " << in.imm; break;
    case Opcode::AddRsp: os << "add rsp, " << in.imm; break;
    case Opcode::StoreLocal: os << "store [rbp-" << in.imm << "], " << to_string(in.src); break;
    case Opcode::LoadLocal: os << "load " << to_string(in.dst) << ", [rbp-" << in.imm << "]"; break;
    case Opcode::AluOp:
      os << alu_name(in.alu) << ' ' << to_string(in.dst) << ", ";
      if (in.src_is_imm) {
        os << in.imm;
      } else {
        os << to_string(in.src);
      }
      break;
    case Opcode::Jmp: os << "jmp " << in.target; break;
    case Opcode::JmpCond: os << cond_name(in.cond) << ' ' << in.target; break;
    case Opcode::Call: os << "call " << in.target; break;
    case Opcode::PseudoCall: os << "pcall " << in.target; break;
    case Opcode::Ret: os << "ret"; break;
    case Opcode::Out: os << "out " << to_string(in.src); break;
    case Opcode::Halt: os << "halt"; break;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Program

const FunctionDef* Program::find(std::string_view name) const {
  for (const auto& f : functions_) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

const FunctionDef& Program::function(std::string_view name) const {
  const auto* f = find(name);
  if (!f) fail(ErrorKind::UnresolvedLabel, "no function named '" + std::string(name) + "'");
  return *f;
}

std::size_t Program::function_index(std::string_view name) const {
  for (std::size_t i = 0; i < functions_.size(); ++i) {
    if (functions_[i].name == name) return i;
  }
  fail(ErrorKind::UnresolvedLabel, "no function named '" + std::string(name) + "'");
}

std::uint64_t Program::entry_address() const { return function_entry(entry_); }

std::uint64_t Program::function_entry(std::string_view name) const { return layout_.at(function_index(name)).entry; }

std::uint64_t Program::label_address(std::string_view label) const {
  for (std::size_t i = 0; i < functions_.size(); ++i) {
    const auto& f = functions_[i];
    if (f.name == label) return layout_[i].entry;
    auto it = f.labels.find(std::string(label));
    if (it != f.labels.end()) return layout_[i].entry + it->second;
  }
  fail(ErrorKind::UnresolvedLabel, "unknown label '" + std::string(label) + "'");
}

const LoopAnnotation* Program::enclosing_loop(std::uint64_t addr) const {
  if (addr >= innermost_loop_.size() || innermost_loop_[addr] < 0) return nullptr;
  return &loops_[static_cast<std::size_t>(innermost_loop_[addr])];
}

std::pair<std::uint64_t, std::uint64_t> Program::loop_span(const LoopAnnotation& loop) const {
  const std::size_t fi = function_index(loop.function);
  const auto& f = functions_[fi];
  return {layout_[fi].entry + f.labels.at(loop.head_label), layout_[fi].entry + loop.back_edge_index};
}

Program Program::build(std::vector<FunctionDef> functions, std::string entry, std::vector<LoopAnnotation> loops) {
  Program p;
  p.functions_ = std::move(functions);
  p.entry_ = std::move(entry);
  p.loops_ = std::move(loops);
  p.validate_and_link();
  return p;
}

void Program::validate_and_link() {
  if (functions_.empty()) fail(ErrorKind::MissingEntry, "program has no functions");
  if (!find(entry_)) fail(ErrorKind::MissingEntry, "entry function '" + entry_ + "' is not defined");

  std::set<std::string> names;
  for (const auto& f : functions_) {
    if (!is_identifier(f.name)) fail(ErrorKind::Syntax, "bad function name '" + f.name + "'");
    if (!names.insert(f.name).second) fail(ErrorKind::DuplicateLabel, "function '" + f.name + "' defined twice");
  }
  for (const auto& f : functions_) {
    for (const auto& [label, idx] : f.labels) {
      if (!names.insert(label).second) fail(ErrorKind::DuplicateLabel, "label '" + label + "' defined twice");
      if (idx >= f.body.size()) fail(ErrorKind::Syntax, "label '" + label + "' does not precede an instruction");
    }
  }

  for (auto& f : functions_) {
    const bool is_entry = f.name == entry_;
    const auto& b = f.body;
    if (b.size() < 2 || b[0] != ins::push(Reg::rbp) || b[1] != ins::mov(Reg::rbp, Reg::rsp)) {
      fail(ErrorKind::MissingPrologue, "function '" + f.name + "' must begin with push rbp; mov rbp, rsp");
    }
    std::int64_t frame = 0;
    if (b.size() > 2 && b[2].op == Opcode::SubRsp) frame = b[2].imm;
    if (frame < 0 || frame % 8 != 0) {
      fail(ErrorKind::InvalidFrame, "function '" + f.name + "' frame size must be a non-negative multiple of 8");
    }
    if (f.frame_bytes != 0 && f.frame_bytes != frame) {
      if (frame == 0) {
        fail(ErrorKind::MissingPrologue, "function '" + f.name + "' declares frame=" +
                                             std::to_string(f.frame_bytes) + " but has no sub rsp in its prologue");
      }
      fail(ErrorKind::InvalidFrame, "function '" + f.name + "' declares frame=" + std::to_string(f.frame_bytes) +
                                        " but reserves " + std::to_string(frame));
    }
    f.frame_bytes = frame;

    const Opcode last = b.back().op;
    const Opcode terminator = is_entry ? Opcode::Halt : Opcode::Ret;
    if (last != terminator && last != Opcode::Jmp) {
      fail(ErrorKind::InvalidTermination,
           "function '" + f.name + "' must end in " + (is_entry ? "halt" : "ret") + " or jmp");
    }
    for (const auto& in : b) {
      if (is_entry && in.op == Opcode::Ret) {
        fail(ErrorKind::InvalidTermination, "entry function '" + f.name + "' may not ret");
      }
      if (!is_entry && in.op == Opcode::Halt) {
        fail(ErrorKind::InvalidTermination, "only the entry function may halt (in '" + f.name + "')");
      }
      if (in.op == Opcode::StoreLocal || in.op == Opcode::LoadLocal) {
        if (in.imm < 8 || in.imm > frame) {
          fail(ErrorKind::OffsetOutOfFrame, "offset rbp-" + std::to_string(in.imm) + " outside the " +
                                                std::to_string(frame) + "-byte frame of '" + f.name + "'");
        }
      }
      if ((in.op == Opcode::SubRsp || in.op == Opcode::AddRsp) && (in.imm < 0 || in.imm % 8 != 0)) {
        fail(ErrorKind::InvalidFrame, "rsp adjustments must be non-negative multiples of 8");
      }
      if (in.is_branch() && !f.labels.count(in.target)) {
        fail(ErrorKind::UnresolvedLabel, "jump target '" + in.target + "' is not a label in '" + f.name + "'");
      }
      if (in.is_call() && !find(in.target)) {
        fail(ErrorKind::UnresolvedLabel, "call target '" + in.target + "' is not a function");
      }
    }
  }

  // Call-graph cycle check (DFS with an explicit path for the diagnostic).
  {
    std::map<std::string, int> state;  // 0 new, 1 on path, 2 done
    std::vector<std::string> path;
    std::function<void(const FunctionDef&)> visit = [&](const FunctionDef& f) {
      state[f.name] = 1;
      path.push_back(f.name);
      for (const auto& in : f.body) {
        if (!in.is_call()) continue;
        const int s = state[in.target];
        if (s == 1) {
          auto it = std::find(path.begin(), path.end(), in.target);
          std::string cycle;
          for (; it != path.end(); ++it) cycle += *it + " -> ";
          cycle += in.target;
          throw Error(ErrorKind::RecursionDetected, cycle);
        }
        if (s == 0) visit(*find(in.target));
      }
      path.pop_back();
      state[f.name] = 2;
    };
    for (const auto& f : functions_) {
      if (state[f.name] == 0) visit(f);
    }
  }

  // Loops: resolve back edges and canonicalize order.
  for (auto& l : loops_) {
    const auto* f = find(l.function);
    if (!f) fail(ErrorKind::InvalidLoop, "loop in unknown function '" + l.function + "'");
    auto it = f->labels.find(l.head_label);
    if (it == f->labels.end()) {
      fail(ErrorKind::UnresolvedLabel, "loop head '" + l.head_label + "' is not a label in '" + f->name + "'");
    }
    if (l.nesting_depth < 1) fail(ErrorKind::InvalidLoop, "loop depth must be >= 1");
    if (l.static_trip_count && *l.static_trip_count < 1) fail(ErrorKind::InvalidLoop, "loop trips must be >= 1");
    std::optional<std::size_t> back;
    for (std::size_t i = it->second; i < f->body.size(); ++i) {
      if (f->body[i].is_branch() && f->body[i].target == l.head_label) back = i;
    }
    if (!back) fail(ErrorKind::InvalidLoop, "loop '" + l.head_label + "' has no back edge");
    l.back_edge_index = *back;
  }
  std::stable_sort(loops_.begin(), loops_.end(), [&](const LoopAnnotation& a, const LoopAnnotation& b) {
    auto ka = std::make_tuple(function_index(a.function), find(a.function)->labels.at(a.head_label), a.back_edge_index);
    auto kb = std::make_tuple(function_index(b.function), find(b.function)->labels.at(b.head_label), b.back_edge_index);
    return ka < kb;
  });
  for (std::size_t i = 1; i < loops_.size(); ++i) {
    if (loops_[i].function == loops_[i - 1].function && loops_[i].head_label == loops_[i - 1].head_label) {
      fail(ErrorKind::InvalidLoop, "loop '" + loops_[i].head_label + "' annotated twice");
    }
  }

  // Link.
  layout_.clear();
  code_.clear();
  owner_.clear();
  std::uint64_t addr = 0;
  for (std::size_t i = 0; i < functions_.size(); ++i) {
    layout_.push_back({addr, addr + functions_[i].body.size()});
    addr += functions_[i].body.size();
  }
  for (std::size_t i = 0; i < functions_.size(); ++i) {
    auto& f = functions_[i];
    for (auto& in : f.body) {
      if (in.is_branch()) {
        in.target_addr = layout_[i].entry + f.labels.at(in.target);
      } else if (in.is_call()) {
        in.target_addr = layout_[function_index(in.target)].entry;
      } else {
        in.target_addr = 0;
      }
      code_.push_back(in);
      owner_.push_back(i);
    }
  }
  innermost_loop_.assign(code_.size(), -1);
  for (std::size_t li = 0; li < loops_.size(); ++li) {
    auto [lo, hi] = loop_span(loops_[li]);
    for (std::uint64_t a = lo; a <= hi; ++a) {
      const int cur = innermost_loop_[a];
      if (cur < 0 || loops_[static_cast<std::size_t>(cur)].nesting_depth <= loops_[li].nesting_depth) {
        innermost_loop_[a] = static_cast<int>(li);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Parsing / printing

Program parse_program(std::string_view text) {
  std::vector<FunctionDef> functions;
  std::vector<PendingLoop> loops;
  std::optional<std::string> entry;
  FunctionDef* cur = nullptr;
  std::vector<std::pair<std::string, std::size_t>> pending_labels;  // label, line

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);

    LineParser lp(raw, line_no);
    std::size_t i = 0;
    auto skip_ws = [&] {
      while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    };
    skip_ws();
    if (i >= raw.size()) {
      if (nl == text.size()) break;
      continue;
    }

    if (raw[i] == '.') {
      std::size_t start = i;
      while (i < raw.size() && !std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
      std::string_view dir = raw.substr(start, i - start);
      std::vector<Token> flags;
      auto args = lp.directive_args(i, flags);
      auto take = [&](const std::string& key) -> std::optional<Token> {
        auto it = args.find(key);
        if (it == args.end()) return std::nullopt;
        Token t = it->second;
        args.erase(it);
        return t;
      };
      auto reject_extra = [&] {
        if (!args.empty()) lp.fail("unknown argument '" + args.begin()->first + "'", args.begin()->second.column);
      };

      if (dir == ".func") {
        if (cur) lp.fail(".func inside another function (missing .endfunc)", start + 1);
        if (flags.empty() || !is_identifier(flags[0].text)) lp.fail(".func needs a function name", start + 1);
        FunctionDef f;
        f.name = std::string(flags[0].text);
        for (std::size_t k = 1; k < flags.size(); ++k) {
          if (flags[k].text == "pseudo") {
            f.is_pseudo = true;
          } else {
            lp.fail("unknown flag '" + std::string(flags[k].text) + "'", flags[k].column);
          }
        }
        if (auto fr = take("frame")) {
          f.frame_bytes = lp.imm(*fr);
          if (f.frame_bytes < 0) lp.fail("frame must be non-negative", fr->column);
        }
        reject_extra();
        functions.push_back(std::move(f));
        cur = &functions.back();
      } else if (dir == ".endfunc") {
        if (!cur) lp.fail(".endfunc without .func", start + 1);
        if (!pending_labels.empty()) {
          throw Error(ErrorKind::Syntax, "label '" + pending_labels.front().first + "' does not precede an instruction",
                      pending_labels.front().second, 1);
        }
        cur = nullptr;
      } else if (dir == ".loop") {
        if (!cur) lp.fail(".loop outside a function", start + 1);
        LoopAnnotation l;
        l.function = cur->name;
        auto head = take("head");
        if (!head) lp.fail(".loop needs head=<label>", start + 1);
        l.head_label = lp.label(*head);
        if (auto t = take("trips")) {
          auto v = lp.imm(*t);
          if (v < 1) lp.fail("trips must be positive", t->column);
          l.static_trip_count = static_cast<std::uint64_t>(v);
        }
        if (auto d = take("depth")) {
          auto v = lp.imm(*d);
          if (v < 1) lp.fail("depth must be positive", d->column);
          l.nesting_depth = static_cast<int>(v);
        }
        reject_extra();
        if (!flags.empty()) lp.fail("unexpected '" + std::string(flags[0].text) + "'", flags[0].column);
        loops.push_back({l, line_no});
      } else if (dir == ".entry") {
        if (flags.size() != 1 || !is_identifier(flags[0].text)) lp.fail(".entry needs one function name", start + 1);
        reject_extra();
        entry = std::string(flags[0].text);
      } else {
        lp.fail("unknown directive '" + std::string(dir) + "'", start + 1);
      }
      if (nl == text.size()) break;
      continue;
    }

    // Optional "label:" prefix, possibly several on one line.
    while (true) {
      std::size_t start = i;
      while (i < raw.size() && is_ident_char(raw[i])) ++i;
      if (i < raw.size() && raw[i] == ':' && i > start) {
        std::string_view name = raw.substr(start, i - start);
        if (!is_identifier(name)) lp.fail("bad label '" + std::string(name) + "'", start + 1);
        if (!cur) lp.fail("label outside a function", start + 1);
        ++i;
        // The function's own name as the first label is an alias for its entry.
        if (!(name == cur->name && cur->body.empty())) {
          if (name == cur->name || cur->labels.count(std::string(name))) {
            throw Error(ErrorKind::DuplicateLabel, "label '" + std::string(name) + "' defined twice", line_no,
                        start + 1);
          }
          pending_labels.emplace_back(std::string(name), line_no);
          cur->labels[std::string(name)] = cur->body.size();
        }
        skip_ws();
        if (i >= raw.size()) break;
        continue;
      }
      i = start;
      break;
    }
    skip_ws();
    if (i >= raw.size()) {
      if (nl == text.size()) break;
      continue;
    }

    std::size_t mstart = i;
    while (i < raw.size() && !std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    Token mnemonic{raw.substr(mstart, i - mstart), mstart + 1};
    if (!cur) lp.fail("instruction outside a function", mstart + 1);
    cur->body.push_back(lp.instruction(mnemonic, i));
    pending_labels.clear();
    if (nl == text.size()) break;
  }
  if (cur) throw Error(ErrorKind::Syntax, "missing .endfunc for '" + cur->name + "'", line_no, 1);

  std::vector<LoopAnnotation> annotated;
  annotated.reserve(loops.size());
  for (auto& pl : loops) annotated.push_back(std::move(pl.loop));
  std::string entry_name = entry.value_or("main");
  if (!entry && !functions.empty()) {
    bool has_main = std::any_of(functions.begin(), functions.end(), [](const auto& f) { return f.name == "main"; });
    if (!has_main) entry_name = functions.front().name;
  }
  return Program::build(std::move(functions), std::move(entry_name), std::move(annotated));
}

Program load_program_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_program(ss.str());
}

std::string print_program(const Program& p) {
  std::ostringstream os;
  os << ".entry " << p.entry() << "\n";
  for (const auto& f : p.functions()) {
    os << "\n.func " << f.name;
    if (f.frame_bytes) os << " frame=" << f.frame_bytes;
    if (f.is_pseudo) os << " pseudo";
    os << "\n";
    std::multimap<std::size_t, std::string> by_index;
    for (const auto& [label, idx] : f.labels) by_index.emplace(idx, label);
    for (std::size_t i = 0; i < f.body.size(); ++i) {
      auto [lo, hi] = by_index.equal_range(i);
      for (auto it = lo; it != hi; ++it) os << it->second << ":\n";
      os << "    " << format_instruction(f.body[i]) << "\n";
    }
    for (const auto& l : p.loops()) {
      if (l.function != f.name) continue;
      os << ".loop head=" << l.head_label;
      if (l.static_trip_count) os << " trips=" << *l.static_trip_count;
      os << " depth=" << l.nesting_depth << "\n";
    }
    os << ".endfunc\n";
  }
  return os.str();
}

std::size_t static_instruction_count(const Program& p) { return p.code().size(); }

}  // namespace ckpt
