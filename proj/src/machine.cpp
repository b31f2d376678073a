#include "ckpt/machine.hpp"

#include <algorithm>
#include <cstring>

#include "ckpt/error.hpp"

namespace ckpt {

namespace {

template <typename T>
void put_le(std::uint8_t*& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    *out++ = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i));
  }
}

template <typename T>
T get_le(const std::uint8_t*& in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(*in++) << (8 * i);
  return static_cast<T>(v);
}

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  do {
    s.insert(s.begin(), digits[v & 0xf]);
    v >>= 4;
  } while (v);
  return "0x" + s;
}

void check_word(const MachineState& s, std::uint64_t addr) {
  if (addr < s.rsp() || addr + kWordBytes > kStackBase) {
    throw Error(ErrorKind::InvalidAddress,
                "word access at " + hex(addr) + " outside live stack [" + hex(s.rsp()) + ", " + hex(kStackBase) + ")");
  }
}

void set_rsp(MachineState& s, std::uint64_t new_rsp) {
  if (new_rsp > kStackBase) throw Error(ErrorKind::StackUnderflow, "rsp would move above the stack base");
  if (new_rsp < s.stack_floor()) throw Error(ErrorKind::StackOverflow, "rsp would move below the stack floor");
  s.regs[Reg::rsp] = new_rsp;
}

void push_word(MachineState& s, std::uint64_t v) {
  const std::uint64_t rsp = s.rsp();
  if (rsp < s.stack_floor() + kWordBytes) throw Error(ErrorKind::StackOverflow, "push below the stack floor");
  s.regs[Reg::rsp] = rsp - kWordBytes;
  s.write_word(rsp - kWordBytes, v);
}

std::uint64_t pop_word(MachineState& s) {
  const std::uint64_t rsp = s.rsp();
  if (rsp + kWordBytes > kStackBase) throw Error(ErrorKind::StackUnderflow, "pop above the stack base");
  const std::uint64_t v = s.read_word(rsp);
  s.regs[Reg::rsp] = rsp + kWordBytes;
  return v;
}

std::uint64_t result_flags(std::uint64_t flags, std::uint64_t value) {
  flags &= ~(kFlagZero | kFlagSign);
  if (value == 0) flags |= kFlagZero;
  if (value >> 63) flags |= kFlagSign;
  return flags;
}

bool holds(Cond c, std::uint64_t flags) {
  const bool zf = flags & kFlagZero;
  const bool sf = flags & kFlagSign;
  switch (c) {
    case Cond::Eq: return zf;
    case Cond::Ne: return !zf;
    case Cond::Lt: return sf;
    case Cond::Ge: return !sf;
    case Cond::Gt: return !sf && !zf;
    case Cond::Le: return sf || zf;
  }
  return false;
}

}  // namespace

RegisterFile::Image RegisterFile::serialize() const {
  Image img{};
  std::uint8_t* out = img.data();
  for (auto v : gpr) put_le(out, v);
  for (auto v : seg) put_le(out, v);
  put_le(out, flags);
  put_le(out, rip);
  return img;
}

RegisterFile RegisterFile::deserialize(std::span<const std::uint8_t> image) {
  if (image.size() != kSerializedSize) {
    throw Error(ErrorKind::CorruptRecord, "register image must be " + std::to_string(kSerializedSize) + " bytes");
  }
  RegisterFile r;
  const std::uint8_t* in = image.data();
  for (auto& v : r.gpr) v = get_le<std::uint64_t>(in);
  for (auto& v : r.seg) v = get_le<std::uint16_t>(in);
  r.flags = get_le<std::uint64_t>(in);
  r.rip = get_le<std::uint64_t>(in);
  return r;
}

MachineState MachineState::boot(const Program& program, const MachineConfig& config) {
  if (config.stack_capacity == 0 || config.stack_capacity > kStackBase || config.stack_capacity % kWordBytes) {
    throw Error(ErrorKind::InvalidArgument, "stack capacity must be a positive multiple of 8 not above the base");
  }
  MachineState s;
  s.stack.assign(config.stack_capacity, 0);
  s.regs[Reg::rsp] = kStackBase;
  s.regs[Reg::rbp] = kStackBase;
  // cs, ds, es, fs, gs, ss as a user-mode x86-64 process would see them
  s.regs.seg = {0x33, 0x2b, 0x2b, 0x00, 0x00, 0x2b};
  s.regs.flags = 0x202;
  s.regs.rip = program.entry_address();
  s.call_site_counters.assign(program.code().size(), 0);
  return s;
}

std::uint64_t MachineState::read_word(std::uint64_t addr) const {
  const std::uint8_t* p = stack.data() + (addr - stack_floor());
  return get_le<std::uint64_t>(p);
}

void MachineState::write_word(std::uint64_t addr, std::uint64_t value) {
  std::uint8_t* p = stack.data() + (addr - stack_floor());
  put_le(p, value);
}

void MachineState::write_bytes(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return;
  if (addr < stack_floor() || addr + bytes.size() > kStackBase) {
    throw Error(ErrorKind::InvalidAddress, "write of " + std::to_string(bytes.size()) + " bytes at " + hex(addr) +
                                               " outside the stack");
  }
  std::memcpy(stack.data() + (addr - stack_floor()), bytes.data(), bytes.size());
}

StepEvents step(MachineState& s, const Program& program) {
  if (s.halted) throw Error(ErrorKind::MachineHalted, "step on a halted machine");
  const auto& code = program.code();
  const std::uint64_t pc = s.regs.rip;
  if (pc >= code.size()) throw Error(ErrorKind::InvalidAddress, "rip " + hex(pc) + " outside code");
  const Instruction& in = code[pc];
  auto& r = s.regs;
  std::uint64_t next = pc + 1;

  ExecEvent extra;
  bool has_extra = false;

  switch (in.op) {
    case Opcode::PushReg:
      push_word(s, r[in.src]);
      break;
    case Opcode::PopReg: {
      const std::uint64_t v = pop_word(s);
      r[in.dst] = v;
      break;
    }
    case Opcode::MovImmToReg:
      r[in.dst] = static_cast<std::uint64_t>(in.imm);
      break;
    case Opcode::MovRegToReg:
      if (in.dst == Reg::rsp) {
        set_rsp(s, r[in.src]);
      } else {
        r[in.dst] = r[in.src];
      }
      break;
    case Opcode::SubRsp: {
      const auto bytes = static_cast<std::uint64_t>(in.imm);
      if (s.rsp() < s.stack_floor() + bytes) throw Error(ErrorKind::StackOverflow, "sub rsp below the stack floor");
      r[Reg::rsp] -= bytes;
      break;
    }
    case Opcode::AddRsp:
      set_rsp(s, s.rsp() + static_cast<std::uint64_t>(in.imm));
      break;
    case Opcode::StoreLocal: {
      const std::uint64_t addr = r[Reg::rbp] - static_cast<std::uint64_t>(in.imm);
      check_word(s, addr);
      s.write_word(addr, r[in.src]);
      break;
    }
    case Opcode::LoadLocal: {
      const std::uint64_t addr = r[Reg::rbp] - static_cast<std::uint64_t>(in.imm);
      check_word(s, addr);
      r[in.dst] = s.read_word(addr);
      break;
    }
    case Opcode::AluOp: {
      const std::uint64_t a = r[in.dst];
      const std::uint64_t b = in.src_is_imm ? static_cast<std::uint64_t>(in.imm) : r[in.src];
      std::uint64_t v = 0;
      switch (in.alu) {
        case AluKind::Add: v = a + b; break;
        case AluKind::Sub: v = a - b; break;
        case AluKind::Mul: v = a * b; break;
        case AluKind::And: v = a & b; break;
        case AluKind::Or: v = a | b; break;
        case AluKind::Xor: v = a ^ b; break;
        case AluKind::Shl: v = a << (b & 63); break;
        case AluKind::Shr: v = a >> (b & 63); break;
        case AluKind::Cmp: {
          std::uint64_t f = r.flags & ~(kFlagZero | kFlagSign);
          if (a == b) f |= kFlagZero;
          if (static_cast<std::int64_t>(a) < static_cast<std::int64_t>(b)) f |= kFlagSign;
          r.flags = f;
          break;
        }
      }
      if (in.alu != AluKind::Cmp) {
        r[in.dst] = v;
        r.flags = result_flags(r.flags, v);
      }
      break;
    }
    case Opcode::Jmp:
      next = in.target_addr;
      break;
    case Opcode::JmpCond:
      if (holds(in.cond, r.flags)) next = in.target_addr;
      break;
    case Opcode::Call:
    case Opcode::PseudoCall: {
      push_word(s, pc + 1);
      next = in.target_addr;
      ++s.call_site_counters[pc];
      extra.kind = EventKind::CallExecuted;
      extra.site = pc;
      extra.callee = in.target_addr;
      extra.caller_rbp = r[Reg::rbp];
      extra.caller_region = {s.rsp(), r[Reg::rbp] + kWordBytes - 1};
      has_extra = true;
      break;
    }
    case Opcode::Ret:
      next = pop_word(s);
      if (next >= code.size()) throw Error(ErrorKind::InvalidAddress, "return to " + hex(next) + " outside code");
      extra.kind = EventKind::Returned;
      has_extra = true;
      break;
    case Opcode::Out:
      s.output.push_back(static_cast<std::int64_t>(r[in.src]));
      extra.kind = EventKind::OutEmitted;
      extra.value = s.output.back();
      has_extra = true;
      break;
    case Opcode::Halt:
      s.halted = true;
      next = pc;
      extra.kind = EventKind::Halted;
      has_extra = true;
      break;
  }

  r.rip = next;
  ++s.executed;

  StepEvents events;
  ExecEvent tick;
  tick.kind = EventKind::StepTick;
  tick.at_instruction = s.executed;
  tick.site = pc;
  events.push(tick);
  if (has_extra) {
    extra.at_instruction = s.executed;
    events.push(extra);
  }
  return events;
}

std::vector<ExecEvent> run_until(MachineState& state, const Program& program,
                                 const std::function<bool(std::uint64_t)>& stop) {
  std::vector<ExecEvent> events;
  while (!state.halted && !stop(state.executed)) {
    for (const auto& e : step(state, program)) events.push_back(e);
  }
  return events;
}

std::vector<std::uint8_t> snapshot_region(const MachineState& state, std::uint64_t lo, std::uint64_t hi) {
  if (lo > hi || lo < state.stack_floor() || hi >= kStackBase) {
    throw Error(ErrorKind::InvalidAddress, "region [" + hex(lo) + ", " + hex(hi) + "] outside the stack");
  }
  const auto* first = state.stack.data() + (lo - state.stack_floor());
  return {first, first + (hi - lo + 1)};
}

std::vector<std::uint64_t> frame_chain(const MachineState& state) {
  std::vector<std::uint64_t> chain;
  std::uint64_t rbp = state.rbp();
  while (rbp < kStackBase && rbp >= state.stack_floor() && rbp + kWordBytes <= kStackBase) {
    chain.push_back(rbp);
    const std::uint64_t saved = state.read_word(rbp);
    if (saved <= rbp) break;
    rbp = saved;
  }
  std::reverse(chain.begin(), chain.end());
  return chain;
}

std::vector<TraceRow> stack_trace(const Program& program, std::uint64_t cap, const MachineConfig& config) {
  MachineState s = MachineState::boot(program, config);
  std::vector<TraceRow> rows;
  while (!s.halted && (cap == 0 || s.executed < cap)) {
    const std::uint64_t pc = s.regs.rip;
    step(s, program);
    rows.push_back({s.executed, pc, s.stack_bytes()});
  }
  return rows;
}

}  // namespace ckpt
