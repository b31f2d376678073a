#include "ckpt/device.hpp"

namespace ckpt {

Device::Device(const Program& program, PolicyConfig policy, const DeviceOptions& options)
    : program_(&program),
      machine_(MachineState::boot(program, options.machine)),
      store_(options.nvm_capacity),
      controller_(policy) {}

Device::Device(const Program& program, PolicyConfig policy, MachineState machine, NvmStore store,
               const std::vector<std::uint64_t>& reclaim)
    : program_(&program),
      machine_(std::move(machine)),
      store_(std::move(store)),
      nvc_(NvController::rebuild(store_)),
      controller_(policy, policy.whole_stack() || machine_.rbp() >= kStackBase ? 0 : frame_chain(machine_).size()) {
  if (machine_.call_site_counters.size() != program.code().size()) {
    machine_.call_site_counters.assign(program.code().size(), 0);
  }
  for (auto e : reclaim) store_.mark_invalid(e);
  cleanup(store_, CleanSignal{reclaim});
  // A cut between a commit's valid tail and its invalidation leaves stale
  // frames marked valid; redo the invalidation for the newest record.
  auto live = live_valid_set(store_);
  if (!live.empty()) {
    const FrameTag tag = live.back()->tag;
    auto signal = policy.whole_stack() ? supersede_all(nvc_.tags, store_, tag) : apply_invalidation(nvc_.tags, store_, tag);
    if (signal) cleanup(store_, *signal);
  }
}

StopReason Device::run(const PowerCut& cut) {
  const Program& program = *program_;
  while (!machine_.halted) {
    if (cut.at_instruction && machine_.executed == *cut.at_instruction) return StopReason::PowerFailure;
    const StepEvents events = step(machine_, program);
    for (const ExecEvent& ev : events) {
      const TriggerDecision d = controller_.on_event(ev, machine_, program);
      if (d.fire && commit(d, ev, cut)) return StopReason::PowerFailure;
    }
  }
  return StopReason::Halted;
}

bool Device::commit(const TriggerDecision& d, const ExecEvent& ev, const PowerCut& cut) {
  ++commit_index_;
  std::optional<std::size_t> interrupt;
  if (cut.during_backup && cut.during_backup->nth == commit_index_) interrupt = cut.during_backup->offset;

  const AddressRange region = *d.region;
  const std::span<const std::uint8_t> bytes(machine_.stack.data() + (region.lo - machine_.stack_floor()), region.size());
  const CommitResult res =
      commit_checkpoint(store_, nvc_, bytes, region, d.rbp, machine_.regs.rip, machine_.regs, interrupt);

  CommitLogEntry entry;
  entry.epoch_id = res.epoch_id;
  entry.executed = machine_.executed;
  entry.outputs = machine_.output.size();
  entry.complete = res.complete;
  entry.reason = d.reason;
  entry.site = ev.site;
  entry.resume_rip = machine_.regs.rip;
  entry.headline_bytes = res.headline_bytes;
  log_.push_back(entry);

  if (interrupt) return true;
  ++stats_.checkpoints;

  FrameTag tag;
  tag.epoch_id = res.epoch_id;
  tag.rbp_value = d.rbp;
  tag.region = region;
  if (invalidate_and_clean(tag, cut)) return true;
  if (observer_) observer_(*this, entry);
  return false;
}

bool Device::invalidate_and_clean(const FrameTag& tag, const PowerCut& cut) {
  auto signal = controller_.config().whole_stack() ? supersede_all(nvc_.tags, store_, tag)
                                                   : apply_invalidation(nvc_.tags, store_, tag);
  if (!signal) return false;
  ++cleanup_index_;
  ++stats_.cleanups;
  stats_.cleanup_sizes.push_back(signal->invalid_epochs.size());
  std::optional<std::size_t> interrupt;
  if (cut.during_cleanup && cut.during_cleanup->nth == cleanup_index_) interrupt = cut.during_cleanup->records;
  stats_.reclaimed_bytes += cleanup(store_, *signal, interrupt);
  return interrupt.has_value();
}

}  // namespace ckpt
