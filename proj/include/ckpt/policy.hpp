#pragma once

// Count controller + backup controller: decides per execution event whether
// a checkpoint fires and which stack region it covers.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ckpt/machine.hpp"

namespace ckpt {

enum class PolicyKind : std::uint8_t { LogBased, StepBased, CallBased, IncrementalCall };

struct PolicyConfig {
  static constexpr std::size_t register_cost_bytes = RegisterFile::kSerializedSize;
  /// 40-byte tag header plus the 1-byte valid tail.
  static constexpr std::size_t tag_cost_bytes = 41;

  PolicyKind kind = PolicyKind::CallBased;
  /// S for StepBased.
  std::uint64_t step = 20;
  /// Exponent base for IncrementalCall.
  std::uint64_t base = 2;

  static PolicyConfig log() { return {PolicyKind::LogBased}; }
  static PolicyConfig step_based(std::uint64_t s) { return {PolicyKind::StepBased, s}; }
  static PolicyConfig call() { return {PolicyKind::CallBased}; }
  static PolicyConfig incremental(std::uint64_t b = 2) { return {PolicyKind::IncrementalCall, 20, b}; }

  /// Throws InvalidArgument unless S >= 1 and base >= 2.
  void validate() const;
  /// Log/step policies snapshot the whole live stack.
  bool whole_stack() const { return kind == PolicyKind::LogBased || kind == PolicyKind::StepBased; }

  bool operator==(const PolicyConfig&) const = default;
};

std::string to_string(const PolicyConfig& cfg);

enum class TriggerReason : std::uint8_t {
  None,
  EveryInstruction,
  StepBoundary,
  CallSite,
  PowerOfTwoIteration,
  LastIteration,
};

std::string_view to_string(TriggerReason r);

struct TriggerDecision {
  bool fire = false;
  std::optional<AddressRange> region;
  TriggerReason reason = TriggerReason::None;
  /// rbp recorded in the tag: the caller's rbp for call triggers, the current
  /// rbp for whole-stack triggers.
  std::uint64_t rbp = 0;
};

/// Pure trigger rule for one event.
TriggerDecision decide(const PolicyConfig& cfg, const ExecEvent& ev, const MachineState& state, const Program& program);

bool is_power_of(std::uint64_t n, std::uint64_t base);

/// |{base^k <= trips}| plus one when trips itself is not a power of base.
std::uint64_t expected_trigger_count(std::uint64_t trips, std::uint64_t base);

/// Per-run controller state layered over decide().  For call policies it
/// tracks, per outstanding call, whether that call was checkpointed; a call
/// only fires when every outstanding caller call was checkpointed, so the
/// NVM frame chain always describes the live stack.
class BackupController {
 public:
  /// `resumed_depth` is the number of outstanding calls in a recovered state
  /// (all of them checkpointed by construction).
  explicit BackupController(PolicyConfig cfg, std::size_t resumed_depth = 0);

  TriggerDecision on_event(const ExecEvent& ev, const MachineState& state, const Program& program);

  const PolicyConfig& config() const { return cfg_; }
  /// Calls that passed the trigger rule but were held back by an
  /// un-checkpointed ancestor call.
  std::uint64_t suppressed() const { return suppressed_; }

 private:
  PolicyConfig cfg_;
  std::vector<bool> checkpointed_;
  std::uint64_t suppressed_ = 0;
};

}  // namespace ckpt
