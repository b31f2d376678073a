#pragma once

// Deterministic power-failure injection.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ckpt/device.hpp"

namespace ckpt {

struct FailurePlan {
  enum class Kind : std::uint8_t { AtInstruction, DuringBackup, DuringCleanup };

  Kind kind = Kind::AtInstruction;
  /// AtInstruction: executed-count; DuringBackup: nth checkpoint;
  /// DuringCleanup: nth cleanup.  All 1-based except the executed-count.
  std::uint64_t point = 0;
  /// DuringBackup: byte offset; DuringCleanup: records reclaimed.
  std::uint64_t offset = 0;
  std::uint64_t seed = 0;

  static FailurePlan at(std::uint64_t executed) { return {Kind::AtInstruction, executed, 0, 0}; }
  static FailurePlan backup(std::uint64_t nth, std::uint64_t byte_offset) { return {Kind::DuringBackup, nth, byte_offset, 0}; }
  static FailurePlan cleanup(std::uint64_t nth, std::uint64_t records) { return {Kind::DuringCleanup, nth, records, 0}; }

  /// "at:1234" | "backup:3@16" | "cleanup:2@1"
  static FailurePlan parse(const std::string& text);
  std::string to_string() const;
  PowerCut to_cut() const;

  bool operator==(const FailurePlan&) const = default;
};

/// Identifier of the sampling algorithm, embedded in reports.
inline constexpr const char* kSamplerId = "mt19937_64/rejection/floyd";

/// Uniform integer in [0, bound) from mt19937_64 by rejection sampling.
class PlanRng {
 public:
  explicit PlanRng(std::uint64_t seed);
  std::uint64_t below(std::uint64_t bound);

 private:
  std::mt19937_64 gen_;
};

/// Shape of a failure-free reference run, needed to sample backup/cleanup plans.
struct ReferenceProfile {
  std::uint64_t run_length = 0;
  /// Footprint of each commit, in commit order.
  std::vector<std::size_t> commit_footprints;
  /// Number of records listed by each clean signal, in cleanup order.
  std::vector<std::size_t> cleanup_sizes;
};

/// n AtInstruction plans over distinct indices in [0, run_length), sorted.
std::vector<FailurePlan> sample_plans(std::uint64_t run_length, std::size_t n, std::uint64_t seed);

enum class PlanMix { AtInstructionOnly, AllClasses, BackupOnly, CleanupOnly };

/// Plans of the requested classes.  Backup offsets are uniform over the
/// chosen commit's footprint; cleanup counts over [0, records listed).
std::vector<FailurePlan> sample_plans(const ReferenceProfile& profile, std::size_t n, std::uint64_t seed, PlanMix mix);

struct RunMetrics {
  std::uint64_t executed = 0;
  std::uint64_t checkpoints = 0;
  std::uint64_t headline_bytes = 0;
  std::uint64_t total_bytes = 0;
  std::uint64_t tag_bytes = 0;
  std::uint64_t cleanups = 0;
};

RunMetrics metrics_of(const Device& device);

struct FailureOutcome {
  /// True when power was cut; false when the run halted first.
  bool failed = false;
  NvmStore store;
  std::uint64_t executed_at_failure = 0;
  std::vector<CommitLogEntry> commit_log;
  /// Output the external observer saw before the cut.
  std::vector<std::int64_t> output;
  RunMetrics metrics;
  /// Volatile state at the cut.  Kept for diagnostics only; recovery never reads it.
  MachineState lost_state;
};

FailureOutcome execute_with_failure(const Program& program, const PolicyConfig& policy, const FailurePlan& plan,
                                    const DeviceOptions& options = {});

/// Failure-free run used as the profile for plan sampling.
ReferenceProfile reference_profile(const Program& program, const PolicyConfig& policy, const DeviceOptions& options = {});

}  // namespace ckpt
