#include "ckpt/policy.hpp"

#include "ckpt/error.hpp"

namespace ckpt {

void PolicyConfig::validate() const {
  if (kind == PolicyKind::StepBased && step < 1) throw Error(ErrorKind::InvalidArgument, "step size S must be >= 1");
  if (kind == PolicyKind::IncrementalCall && base < 2) throw Error(ErrorKind::InvalidArgument, "base must be >= 2");
}

std::string to_string(const PolicyConfig& cfg) {
  switch (cfg.kind) {
    case PolicyKind::LogBased: return "log";
    case PolicyKind::StepBased: return "step(" + std::to_string(cfg.step) + ")";
    case PolicyKind::CallBased: return "call";
    case PolicyKind::IncrementalCall: return "incre-call(" + std::to_string(cfg.base) + ")";
  }
  return "?";
}

std::string_view to_string(TriggerReason r) {
  switch (r) {
    case TriggerReason::None: return "none";
    case TriggerReason::EveryInstruction: return "every-instruction";
    case TriggerReason::StepBoundary: return "step-boundary";
    case TriggerReason::CallSite: return "call-site";
    case TriggerReason::PowerOfTwoIteration: return "power-iteration";
    case TriggerReason::LastIteration: return "last-iteration";
  }
  return "?";
}

bool is_power_of(std::uint64_t n, std::uint64_t base) {
  if (n == 0 || base < 2) return false;
  while (n % base == 0) n /= base;
  return n == 1;
}

std::uint64_t expected_trigger_count(std::uint64_t trips, std::uint64_t base) {
  if (trips == 0 || base < 2) throw Error(ErrorKind::InvalidArgument, "trips >= 1 and base >= 2 required");
  std::uint64_t count = 0;
  for (std::uint64_t p = 1; p <= trips; p *= base) {
    ++count;
    if (p > trips / base) break;
  }
  return count + (is_power_of(trips, base) ? 0 : 1);
}

TriggerDecision decide(const PolicyConfig& cfg, const ExecEvent& ev, const MachineState& state, const Program& program) {
  TriggerDecision d;
  auto whole_stack = [&](TriggerReason why) {
    d.fire = true;
    d.reason = why;
    d.region = AddressRange{state.rsp(), kStackBase - 1};
    d.rbp = state.rbp();
  };

  switch (cfg.kind) {
    case PolicyKind::LogBased:
      if (ev.kind == EventKind::StepTick) whole_stack(TriggerReason::EveryInstruction);
      break;
    case PolicyKind::StepBased:
      if (ev.kind == EventKind::StepTick && ev.at_instruction % cfg.step == 0) whole_stack(TriggerReason::StepBoundary);
      break;
    case PolicyKind::CallBased:
      if (ev.kind == EventKind::CallExecuted) {
        d.fire = true;
        d.reason = TriggerReason::CallSite;
        d.region = ev.caller_region;
        d.rbp = ev.caller_rbp;
      }
      break;
    case PolicyKind::IncrementalCall: {
      if (ev.kind != EventKind::CallExecuted) break;
      d.region = ev.caller_region;
      d.rbp = ev.caller_rbp;
      const LoopAnnotation* loop = program.enclosing_loop(ev.site);
      if (!loop) {
        d.fire = true;
        d.reason = TriggerReason::CallSite;
        break;
      }
      const std::uint64_t num = state.call_site_counters.at(ev.site);
      if (is_power_of(num, cfg.base)) {
        d.fire = true;
        d.reason = TriggerReason::PowerOfTwoIteration;
      } else if (loop->static_trip_count && num == *loop->static_trip_count) {
        d.fire = true;
        d.reason = TriggerReason::LastIteration;
      }
      if (!d.fire) d.region.reset();
      break;
    }
  }
  return d;
}

BackupController::BackupController(PolicyConfig cfg, std::size_t resumed_depth)
    : cfg_(cfg), checkpointed_(resumed_depth, true) {
  cfg_.validate();
}

TriggerDecision BackupController::on_event(const ExecEvent& ev, const MachineState& state, const Program& program) {
  TriggerDecision d = decide(cfg_, ev, state, program);
  if (cfg_.whole_stack()) return d;

  if (ev.kind == EventKind::Returned) {
    if (!checkpointed_.empty()) checkpointed_.pop_back();
  } else if (ev.kind == EventKind::CallExecuted) {
    bool chain_clean = true;
    for (bool c : checkpointed_) chain_clean = chain_clean && c;
    if (d.fire && !chain_clean) {
      d = TriggerDecision{};
      ++suppressed_;
    }
    checkpointed_.push_back(d.fire);
  }
  return d;
}

}  // namespace ckpt
