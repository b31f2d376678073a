#pragma once

// Recovery controller: rebuilds volatile state from NVM after a power cut.

#include <cstdint>
#include <optional>
#include <vector>

#include "ckpt/failure.hpp"
#include "ckpt/nvm.hpp"

namespace ckpt {

struct RecoveredState {
  MachineState machine;
  /// Epoch whose registers were restored; empty on a cold restart.
  std::optional<std::uint64_t> resumed_from_epoch;
  /// executed-at-failure minus executed-at-last-complete-checkpoint.
  std::uint64_t rollback_instructions = 0;
  /// Invalid or incomplete records found on NVM, handed back for cleanup.
  std::vector<std::uint64_t> reclaim_epochs;
};

/// Applies every complete, valid frame in epoch order and restores the
/// registers of the newest one.  An empty valid set yields a fresh boot at
/// the entry.  Throws CorruptRecord when a complete record's payload does
/// not match its region.
RecoveredState recover(const NvmStore& store, const Program& program, const MachineConfig& config = {});

/// Fills rollback_instructions from the observer's commit log.
void attach_rollback(RecoveredState& rec, const std::vector<CommitLogEntry>& log, std::uint64_t executed_at_failure);

struct ResumeResult {
  /// Out values emitted after resuming.
  std::vector<std::int64_t> output;
  MachineState final_state;
  NvmStore store;
  RunMetrics metrics;
};

/// Powers the device back on from `rec` and runs to halt, still
/// checkpointing under `policy` into the surviving store.
ResumeResult resume_and_verify(const RecoveredState& rec, const Program& program, const PolicyConfig& policy,
                               NvmStore store);

/// Observable end state: the emitted output plus the final registers with
/// rip cleared.
struct Observation {
  std::vector<std::int64_t> output;
  RegisterFile registers;

  bool operator==(const Observation&) const = default;
};

Observation observe(const MachineState& final_state, std::vector<std::int64_t> output);
/// FNV-1a over the output values and register image.
std::uint64_t observation_hash(const Observation& obs);

/// Output the external observer keeps across a failure: what was emitted up
/// to the resumed checkpoint, followed by the resumed run's output.
std::vector<std::int64_t> stitch_output(const std::vector<std::int64_t>& before_failure,
                                        const std::vector<CommitLogEntry>& log,
                                        std::optional<std::uint64_t> resumed_epoch,
                                        const std::vector<std::int64_t>& after_resume);

}  // namespace ckpt
