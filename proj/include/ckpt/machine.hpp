#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ckpt/isa.hpp"

namespace ckpt {

/// One past the highest stack byte.  The stack grows downward from here.
inline constexpr std::uint64_t kStackBase = 0x0010'0000;
inline constexpr std::size_t kDefaultStackCapacity = 64 * 1024;
inline constexpr std::int64_t kWordBytes = 8;

/// Inclusive byte-address range.
struct AddressRange {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;

  std::size_t size() const { return static_cast<std::size_t>(hi - lo + 1); }
  bool operator==(const AddressRange&) const = default;
};

// flags bits, x86 positions
inline constexpr std::uint64_t kFlagZero = 1ull << 6;
inline constexpr std::uint64_t kFlagSign = 1ull << 7;

struct RegisterFile {
  static constexpr std::size_t kSerializedSize = 16 * 8 + 6 * 2 + 8 + 8;
  static_assert(kSerializedSize == 156);

  std::array<std::uint64_t, kGprCount> gpr{};
  std::array<std::uint16_t, 6> seg{};
  std::uint64_t flags = 0;
  std::uint64_t rip = 0;

  std::uint64_t& operator[](Reg r) { return gpr[static_cast<std::size_t>(r)]; }
  std::uint64_t operator[](Reg r) const { return gpr[static_cast<std::size_t>(r)]; }

  using Image = std::array<std::uint8_t, kSerializedSize>;
  /// Little-endian: gpr[0..15], seg[0..5], flags, rip.
  Image serialize() const;
  static RegisterFile deserialize(std::span<const std::uint8_t> image);

  bool operator==(const RegisterFile&) const = default;
};

struct MachineConfig {
  std::size_t stack_capacity = kDefaultStackCapacity;
};

struct MachineState {
  RegisterFile regs;
  /// Volatile SRAM; stack[i] holds address stack_floor() + i.
  std::vector<std::uint8_t> stack;
  std::uint64_t executed = 0;
  /// Invocation count ("num") per call-site address.
  std::vector<std::uint64_t> call_site_counters;
  bool halted = false;
  std::vector<std::int64_t> output;

  /// Power-on state: zeroed registers and stack, rsp = rbp = kStackBase,
  /// rip at the entry function.
  static MachineState boot(const Program& program, const MachineConfig& config = {});

  std::uint64_t stack_floor() const { return kStackBase - stack.size(); }
  std::uint64_t rsp() const { return regs[Reg::rsp]; }
  std::uint64_t rbp() const { return regs[Reg::rbp]; }
  /// Live stack depth in bytes (kStackBase - rsp).
  std::uint64_t stack_bytes() const { return kStackBase - rsp(); }

  std::uint64_t read_word(std::uint64_t addr) const;
  void write_word(std::uint64_t addr, std::uint64_t value);
  void write_bytes(std::uint64_t addr, std::span<const std::uint8_t> bytes);

  bool operator==(const MachineState&) const = default;
};

enum class EventKind : std::uint8_t { StepTick, CallExecuted, Returned, OutEmitted, Halted };

struct ExecEvent {
  EventKind kind = EventKind::StepTick;
  /// Executed-instruction count after the instruction completed.
  std::uint64_t at_instruction = 0;
  /// CallExecuted: address of the call instruction.
  std::uint64_t site = 0;
  /// CallExecuted: callee entry address.
  std::uint64_t callee = 0;
  std::uint64_t caller_rbp = 0;
  /// CallExecuted: [rsp after the return-address push, caller_rbp + 7].
  AddressRange caller_region;
  /// OutEmitted: the value.
  std::int64_t value = 0;

  bool operator==(const ExecEvent&) const = default;
};

/// Events produced by one instruction: always a StepTick, plus at most one
/// of CallExecuted / Returned / OutEmitted / Halted.
class StepEvents {
 public:
  void push(const ExecEvent& e) { items_[n_++] = e; }
  const ExecEvent* begin() const { return items_.data(); }
  const ExecEvent* end() const { return items_.data() + n_; }
  std::size_t size() const { return n_; }
  const ExecEvent& operator[](std::size_t i) const { return items_[i]; }

 private:
  std::array<ExecEvent, 2> items_{};
  std::size_t n_ = 0;
};

/// Executes exactly one instruction.  Throws Error{StackOverflow,
/// StackUnderflow, InvalidAddress, MachineHalted}.
StepEvents step(MachineState& state, const Program& program);

/// Steps until halted or `stop(executed)` is true (checked before each step).
std::vector<ExecEvent> run_until(MachineState& state, const Program& program,
                                 const std::function<bool(std::uint64_t)>& stop);

/// Copies [lo, hi] inclusive out of the stack.
std::vector<std::uint8_t> snapshot_region(const MachineState& state, std::uint64_t lo, std::uint64_t hi);

/// Frame-base chain from the innermost rbp outward, following saved rbp
/// words until kStackBase.  Returned outermost first.
std::vector<std::uint64_t> frame_chain(const MachineState& state);

struct TraceRow {
  std::uint64_t executed = 0;
  std::uint64_t rip = 0;
  std::uint64_t stack_bytes = 0;
};

/// Runs to halt (or `cap` instructions, 0 = unbounded) recording the stack
/// depth after every instruction.
std::vector<TraceRow> stack_trace(const Program& program, std::uint64_t cap = 0, const MachineConfig& config = {});

}  // namespace ckpt
