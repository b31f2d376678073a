#include "ckpt/recovery.hpp"

#include "ckpt/error.hpp"

namespace ckpt {

RecoveredState recover(const NvmStore& store, const Program& program, const MachineConfig& config) {
  RecoveredState rec;
  rec.machine = MachineState::boot(program, config);

  for (const auto& r : store.records()) {
    if (!r.complete() || !r.tag.valid) rec.reclaim_epochs.push_back(r.tag.epoch_id);
  }

  const auto live = live_valid_set(store);
  if (live.empty()) return rec;

  for (const CheckpointRecord* r : live) {
    if (r->payload.size() != r->tag.region.size()) {
      throw Error(ErrorKind::CorruptRecord, "epoch " + std::to_string(r->tag.epoch_id) + " payload has " +
                                                std::to_string(r->payload.size()) + " bytes for a " +
                                                std::to_string(r->tag.region.size()) + "-byte region");
    }
    rec.machine.write_bytes(r->tag.region.lo, r->payload);
  }
  const CheckpointRecord& newest = *live.back();
  rec.machine.regs = RegisterFile::deserialize(newest.tag.register_snapshot);
  rec.machine.regs.rip = newest.tag.resume_rip;
  rec.resumed_from_epoch = newest.tag.epoch_id;
  return rec;
}

void attach_rollback(RecoveredState& rec, const std::vector<CommitLogEntry>& log, std::uint64_t executed_at_failure) {
  if (!rec.resumed_from_epoch) {
    rec.rollback_instructions = executed_at_failure;
    return;
  }
  for (const auto& e : log) {
    if (e.epoch_id == *rec.resumed_from_epoch) {
      rec.rollback_instructions = executed_at_failure - e.executed;
      return;
    }
  }
  throw Error(ErrorKind::InvalidArgument, "epoch " + std::to_string(*rec.resumed_from_epoch) + " not in commit log");
}

ResumeResult resume_and_verify(const RecoveredState& rec, const Program& program, const PolicyConfig& policy,
                               NvmStore store) {
  Device device(program, policy, rec.machine, std::move(store), rec.reclaim_epochs);
  device.run();
  ResumeResult out;
  out.output = device.machine().output;
  out.final_state = device.machine();
  out.metrics = metrics_of(device);
  out.store = device.store();
  return out;
}

Observation observe(const MachineState& final_state, std::vector<std::int64_t> output) {
  Observation o;
  o.output = std::move(output);
  o.registers = final_state.regs;
  o.registers.rip = 0;
  return o;
}

std::uint64_t observation_hash(const Observation& obs) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ull;
  };
  for (auto v : obs.output) {
    for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  for (auto b : obs.registers.serialize()) mix(b);
  return h;
}

std::vector<std::int64_t> stitch_output(const std::vector<std::int64_t>& before_failure,
                                        const std::vector<CommitLogEntry>& log,
                                        std::optional<std::uint64_t> resumed_epoch,
                                        const std::vector<std::int64_t>& after_resume) {
  std::size_t keep = 0;
  if (resumed_epoch) {
    for (const auto& e : log) {
      if (e.epoch_id == *resumed_epoch) keep = e.outputs;
    }
  }
  std::vector<std::int64_t> out(before_failure.begin(), before_failure.begin() + static_cast<std::ptrdiff_t>(keep));
  out.insert(out.end(), after_resume.begin(), after_resume.end());
  return out;
}

}  // namespace ckpt
