#pragma once

// A simulated NVM-equipped device: the interpreter plus the count/backup,
// NV and cleanup controllers wired together.  Only the NvmStore survives a
// power cut.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "ckpt/machine.hpp"
#include "ckpt/nvm.hpp"
#include "ckpt/policy.hpp"

namespace ckpt {

struct DeviceOptions {
  MachineConfig machine;
  std::size_t nvm_capacity = kDefaultNvmCapacity;
};

/// Where power is lost.  At most one field is normally set; the first point
/// reached wins.
struct PowerCut {
  /// Before the instruction with this executed-count runs.
  std::optional<std::uint64_t> at_instruction;
  /// During the nth (1-based) commit, after `offset` bytes.
  struct Backup {
    std::uint64_t nth = 0;
    std::size_t offset = 0;
  };
  std::optional<Backup> during_backup;
  /// During the nth (1-based) cleanup, after `records` reclaimed records.
  struct Cleanup {
    std::uint64_t nth = 0;
    std::size_t records = 0;
  };
  std::optional<Cleanup> during_cleanup;
};

/// Observer-side bookkeeping for each commit.  Not stored on NVM; the
/// harness uses it to measure rollback and de-duplicate re-emitted output.
struct CommitLogEntry {
  std::uint64_t epoch_id = 0;
  std::uint64_t executed = 0;
  std::size_t outputs = 0;
  bool complete = false;
  TriggerReason reason = TriggerReason::None;
  /// Address of the instruction that completed just before the commit.
  std::uint64_t site = 0;
  std::uint64_t resume_rip = 0;
  std::size_t headline_bytes = 0;
};

struct DeviceStats {
  std::uint64_t checkpoints = 0;
  std::uint64_t cleanups = 0;
  std::uint64_t reclaimed_bytes = 0;
  /// Records listed by each clean signal, in order.
  std::vector<std::size_t> cleanup_sizes;
};

enum class StopReason { Halted, PowerFailure };

class Device {
 public:
  using CommitObserver = std::function<void(const Device&, const CommitLogEntry&)>;

  /// Fresh power-on with an empty NVM.
  Device(const Program& program, PolicyConfig policy, const DeviceOptions& options = {});
  /// Power-on from a recovered machine state and surviving store.  Finishes
  /// any invalidation a cut interrupted and reclaims `reclaim` epochs.
  Device(const Program& program, PolicyConfig policy, MachineState machine, NvmStore store,
         const std::vector<std::uint64_t>& reclaim);

  StopReason run(const PowerCut& cut = {});

  void set_commit_observer(CommitObserver obs) { observer_ = std::move(obs); }

  const MachineState& machine() const { return machine_; }
  const NvmStore& store() const { return store_; }
  NvmStore& store() { return store_; }
  const NvController& nv_controller() const { return nvc_; }
  const std::vector<CommitLogEntry>& commit_log() const { return log_; }
  const DeviceStats& stats() const { return stats_; }
  const PolicyConfig& policy() const { return controller_.config(); }
  const Program& program() const { return *program_; }

 private:
  bool commit(const TriggerDecision& d, const ExecEvent& ev, const PowerCut& cut);
  bool invalidate_and_clean(const FrameTag& tag, const PowerCut& cut);

  const Program* program_;
  MachineState machine_;
  NvmStore store_;
  NvController nvc_;
  BackupController controller_;
  std::vector<CommitLogEntry> log_;
  DeviceStats stats_;
  std::uint64_t commit_index_ = 0;
  std::uint64_t cleanup_index_ = 0;
  CommitObserver observer_;
};

}  // namespace ckpt
