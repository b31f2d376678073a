#include "ckpt/failure.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <set>

#include "ckpt/error.hpp"

namespace ckpt {

namespace {

std::uint64_t parse_u64(std::string_view s, const std::string& whole) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::InvalidArgument, "bad failure plan '" + whole + "'");
  }
  return v;
}

}  // namespace

FailurePlan FailurePlan::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw Error(ErrorKind::InvalidArgument, "bad failure plan '" + text + "'");
  const std::string_view kind = std::string_view(text).substr(0, colon);
  const std::string_view rest = std::string_view(text).substr(colon + 1);
  if (kind == "at") return at(parse_u64(rest, text));
  const auto at_sign = rest.find('@');
  if (at_sign == std::string_view::npos) throw Error(ErrorKind::InvalidArgument, "bad failure plan '" + text + "'");
  const auto a = parse_u64(rest.substr(0, at_sign), text);
  const auto b = parse_u64(rest.substr(at_sign + 1), text);
  if (a == 0) throw Error(ErrorKind::InvalidArgument, "checkpoint/cleanup index is 1-based in '" + text + "'");
  if (kind == "backup") return backup(a, b);
  if (kind == "cleanup") return cleanup(a, b);
  throw Error(ErrorKind::InvalidArgument, "bad failure plan '" + text + "'");
}

std::string FailurePlan::to_string() const {
  switch (kind) {
    case Kind::AtInstruction: return "at:" + std::to_string(point);
    case Kind::DuringBackup: return "backup:" + std::to_string(point) + "@" + std::to_string(offset);
    case Kind::DuringCleanup: return "cleanup:" + std::to_string(point) + "@" + std::to_string(offset);
  }
  return "?";
}

PowerCut FailurePlan::to_cut() const {
  PowerCut cut;
  switch (kind) {
    case Kind::AtInstruction: cut.at_instruction = point; break;
    case Kind::DuringBackup: cut.during_backup = PowerCut::Backup{point, static_cast<std::size_t>(offset)}; break;
    case Kind::DuringCleanup: cut.during_cleanup = PowerCut::Cleanup{point, static_cast<std::size_t>(offset)}; break;
  }
  return cut;
}

PlanRng::PlanRng(std::uint64_t seed) : gen_(seed) {}

std::uint64_t PlanRng::below(std::uint64_t bound) {
  if (bound == 0) throw Error(ErrorKind::InvalidArgument, "empty sampling range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = gen_();
  } while (v >= limit);
  return v % bound;
}

std::vector<FailurePlan> sample_plans(std::uint64_t run_length, std::size_t n, std::uint64_t seed) {
  std::vector<FailurePlan> plans;
  if (n == 0 || run_length == 0) return plans;
  PlanRng rng(seed);
  std::vector<std::uint64_t> picked;
  if (n >= run_length) {
    for (std::uint64_t i = 0; i < run_length; ++i) picked.push_back(i);
  } else {
    // Floyd's algorithm: n distinct values from [0, run_length).
    std::set<std::uint64_t> chosen;
    for (std::uint64_t j = run_length - n; j < run_length; ++j) {
      const std::uint64_t t = rng.below(j + 1);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    picked.assign(chosen.begin(), chosen.end());
  }
  for (auto i : picked) {
    auto p = FailurePlan::at(i);
    p.seed = seed;
    plans.push_back(p);
  }
  return plans;
}

std::vector<FailurePlan> sample_plans(const ReferenceProfile& profile, std::size_t n, std::uint64_t seed, PlanMix mix) {
  if (mix == PlanMix::AtInstructionOnly) return sample_plans(profile.run_length, n, seed);
  PlanRng rng(seed);
  std::vector<FailurePlan> plans;
  std::vector<FailurePlan::Kind> kinds;
  if (mix == PlanMix::AllClasses || mix == PlanMix::BackupOnly) {
    if (!profile.commit_footprints.empty()) kinds.push_back(FailurePlan::Kind::DuringBackup);
  }
  if (mix == PlanMix::AllClasses || mix == PlanMix::CleanupOnly) {
    if (!profile.cleanup_sizes.empty()) kinds.push_back(FailurePlan::Kind::DuringCleanup);
  }
  if (mix == PlanMix::AllClasses && profile.run_length > 0) kinds.push_back(FailurePlan::Kind::AtInstruction);
  if (kinds.empty()) return plans;
  for (std::size_t i = 0; i < n; ++i) {
    FailurePlan p;
    p.kind = kinds[rng.below(kinds.size())];
    switch (p.kind) {
      case FailurePlan::Kind::AtInstruction:
        p.point = rng.below(profile.run_length);
        break;
      case FailurePlan::Kind::DuringBackup: {
        const auto k = rng.below(profile.commit_footprints.size());
        p.point = k + 1;
        p.offset = rng.below(profile.commit_footprints[k]);
        break;
      }
      case FailurePlan::Kind::DuringCleanup: {
        const auto k = rng.below(profile.cleanup_sizes.size());
        p.point = k + 1;
        p.offset = rng.below(profile.cleanup_sizes[k]);
        break;
      }
    }
    p.seed = seed;
    plans.push_back(p);
  }
  return plans;
}

RunMetrics metrics_of(const Device& device) {
  RunMetrics m;
  m.executed = device.machine().executed;
  m.checkpoints = device.stats().checkpoints;
  m.headline_bytes = device.store().bytes_written_headline();
  m.total_bytes = device.store().bytes_written_total();
  m.tag_bytes = m.total_bytes - m.headline_bytes;
  m.cleanups = device.stats().cleanups;
  return m;
}

FailureOutcome execute_with_failure(const Program& program, const PolicyConfig& policy, const FailurePlan& plan,
                                    const DeviceOptions& options) {
  Device device(program, policy, options);
  const StopReason why = device.run(plan.to_cut());
  FailureOutcome out;
  out.failed = why == StopReason::PowerFailure;
  out.executed_at_failure = device.machine().executed;
  out.commit_log = device.commit_log();
  out.output = device.machine().output;
  out.metrics = metrics_of(device);
  out.lost_state = device.machine();
  out.store = device.store();
  return out;
}

ReferenceProfile reference_profile(const Program& program, const PolicyConfig& policy, const DeviceOptions& options) {
  Device device(program, policy, options);
  device.run();
  ReferenceProfile p;
  p.run_length = device.machine().executed;
  for (const auto& e : device.commit_log()) {
    p.commit_footprints.push_back(e.headline_bytes + kTagHeaderBytes + kValidTailBytes);
  }
  p.cleanup_sizes = device.stats().cleanup_sizes;
  return p;
}

}  // namespace ckpt
