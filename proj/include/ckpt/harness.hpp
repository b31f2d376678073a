#pragma once

// Experiment runner: benchmarks x policies x injected failures, with
// oracle comparison and CSV/JSON reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ckpt/failure.hpp"
#include "ckpt/recovery.hpp"
#include "ckpt/transform.hpp"

namespace ckpt {

/// Failure-free run of the untransformed program.
struct Oracle {
  std::vector<std::int64_t> output;
  Observation observation;
  std::uint64_t hash = 0;
  std::uint64_t executed = 0;
};

Oracle capture_oracle(const Program& program, const MachineConfig& config = {});

struct BenchmarkSpec {
  std::string name;
  std::string source;
  std::string description;
  std::string loop_profile;
  Program program;
  Oracle oracle;

  /// Loads, validates and captures the oracle once.  The description is the
  /// first comment line of the file.
  static BenchmarkSpec load(const std::filesystem::path& path, const MachineConfig& config = {});
};

/// "depth1:trips=1000 depth2:trips=?" style summary of annotated loops.
std::string loop_summary(const Program& program);

/// A checkpoint policy, optionally preceded by the pseudo-call transform.
struct PolicySpec {
  PolicyConfig policy;
  bool pseudo = false;
  TransformConfig transform;

  /// "log", "step(20)", "call", "incre-call(2)", "pseudo-incre-call(2)+T20"
  std::string label() const;
  /// Accepts "name" or "name(arg)", optionally prefixed "pseudo-"; bare
  /// names take `step`, `base` and `threshold`.
  static PolicySpec parse(const std::string& text, std::uint64_t step = 20, std::uint64_t base = 2,
                          std::uint64_t threshold = 20);

  bool operator==(const PolicySpec& o) const {
    return policy == o.policy && pseudo == o.pseudo && transform.threshold == o.transform.threshold;
  }
};

/// log, step(20), call, incre-call(2), pseudo-incre-call(2, T=20)
std::vector<PolicySpec> default_policies();

/// The program a policy actually runs.
Program prepare(const Program& program, const PolicySpec& spec);

struct FailureRow {
  FailurePlan plan;
  bool failed = false;
  std::uint64_t executed_at_failure = 0;
  std::optional<std::uint64_t> resumed_from_epoch;
  std::uint64_t resume_rip = 0;
  std::uint64_t rollback_instructions = 0;
  bool recovered_ok = false;
  std::string error;
};

/// Injects `plan`, recovers, resumes to halt and compares with the oracle.
/// Exceptions are caught and reported in the row.
FailureRow run_one_failure(const Program& prepared, const PolicyConfig& policy, const FailurePlan& plan,
                           const Oracle& oracle, const DeviceOptions& options = {});

struct PolicyReport {
  std::string label;
  RunMetrics metrics;
  /// Failure-free run of the prepared program matched the oracle.
  bool failure_free_ok = false;
  /// Headline bytes over the log policy's; empty when log was not run.
  std::optional<double> normalized_vs_log;
  double rollback_avg = 0.0;
  /// rollback_avg over the step policy's; empty when step was not run or is 0.
  std::optional<double> rollback_vs_step;
  std::vector<FailureRow> failures;

  bool all_ok() const;
};

struct RunReport {
  std::string benchmark;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::vector<PolicyReport> policies;

  bool all_ok() const;
  const PolicyReport* find(const std::string& label) const;
};

struct ExperimentConfig {
  std::size_t n = 50;
  std::uint64_t seed = 1;
  PlanMix mix = PlanMix::AtInstructionOnly;
  DeviceOptions device;
};

std::vector<RunReport> run_experiment(const std::vector<BenchmarkSpec>& benchmarks,
                                      const std::vector<PolicySpec>& policies, const ExperimentConfig& cfg);

/// One row per (benchmark, policy) summary and per failure.
std::string report_csv(const std::vector<RunReport>& reports);
nlohmann::json report_json(const std::vector<RunReport>& reports);

struct ReportPaths {
  std::filesystem::path csv;
  std::filesystem::path json;
};

/// Writes report-seed<seed>.csv and .json under `dir`.
ReportPaths write_reports(const std::filesystem::path& dir, const std::vector<RunReport>& reports, std::uint64_t seed);

/// CSV "executed,rip,stack_bytes", one row per executed instruction.
std::string emit_stack_trace(const Program& program, std::optional<std::uint64_t> cap = std::nullopt,
                             const MachineConfig& config = {});

}  // namespace ckpt
