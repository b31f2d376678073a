// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "ckpt/harness.hpp"
#include "support.hpp"

using namespace ckpt;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail << "first failure: " << what << "; ";
    pass = false;
  }
};

constexpr std::uint64_t kSeed = 20240917;
constexpr std::uint64_t kStep = 20;

Observation plain_run(const Program& p) {
  MachineState m = MachineState::boot(p);
  run_until(m, p, [](std::uint64_t) { return false; });
  return observe(m, m.output);
}

std::uint64_t address_of(const Program& p, const std::string& fn, const std::string& label) {
  return p.function_entry(fn) + p.function(fn).labels.at(label);
}

bool has_call_in_loop(const Program& p) {
  for (std::uint64_t a = 0; a < p.code().size(); ++a) {
    if (p.code()[a].is_call() && p.enclosing_loop(a) != nullptr) return true;
  }
  return false;
}

double instructions_per_call(const Program& p) {
  MachineState m = MachineState::boot(p);
  std::uint64_t calls = 0;
  while (!m.halted) {
    for (const auto& e : step(m, p)) calls += e.kind == EventKind::CallExecuted ? 1 : 0;
  }
  return calls ? static_cast<double>(m.executed) / static_cast<double>(calls) : 1e300;
}

std::vector<BenchmarkSpec> load_benchmarks(bool with_case_study) {
  std::vector<BenchmarkSpec> out;
  for (const auto& n : testing::synthetic_benchmarks()) out.push_back(BenchmarkSpec::load(testing::bench_path(n + ".asm")));
  if (with_case_study) out.push_back(BenchmarkSpec::load(testing::bench_path("case_study.asm")));
  return out;
}

// Criteria 1, 5 and 6 share one experiment.
const std::vector<RunReport>& experiment() {
  static const std::vector<RunReport> reports = [] {
    ExperimentConfig cfg;
    cfg.n = 200;
    cfg.seed = kSeed;
    cfg.mix = PlanMix::AtInstructionOnly;
    return run_experiment(load_benchmarks(true), default_policies(), cfg);
  }();
  return reports;
}

Verdict oracle_equivalence() {
  Verdict v;
  std::size_t runs = 0, ok = 0;
  for (const auto& r : experiment()) {
    v.require(r.policies.size() == 5, r.benchmark + " ran all five policies");
    for (const auto& p : r.policies) {
      v.require(p.failure_free_ok, r.benchmark + "/" + p.label + " failure-free run");
      v.require(p.failures.size() == 200, r.benchmark + "/" + p.label + " sampled 200 plans");
      for (const auto& f : p.failures) {
        ++runs;
        ok += f.recovered_ok ? 1 : 0;
        v.require(f.recovered_ok, r.benchmark + "/" + p.label + " " + f.plan.to_string() + " " + f.error);
      }
    }
  }
  v.detail << ok << "/" << runs << " recovered runs match the oracle";
  return v;
}

Verdict atomicity_sweep() {
  Verdict v;
  const Program p = load_program_file(testing::bench_path("fixtures/chain.asm"));
  const Oracle oracle = capture_oracle(p);
  const PolicyConfig policy = PolicyConfig::call();
  Device ref(p, policy);
  ref.run();
  const auto& log = ref.commit_log();
  v.require(log.size() == 2, "chain.asm commits twice");
  std::size_t cuts = 0;
  for (std::size_t k = 0; k < log.size(); ++k) {
    const std::size_t footprint = log[k].headline_bytes + kTagHeaderBytes + kValidTailBytes;
    std::optional<MachineState> torn_state;
    for (std::size_t off = 0; off <= footprint; ++off) {
      ++cuts;
      const std::string where = "commit " + std::to_string(k + 1) + " offset " + std::to_string(off);
      const auto cut = execute_with_failure(p, policy, FailurePlan::backup(k + 1, off));
      const auto rec = recover(cut.store, p);
      if (off >= footprint) {
        v.require(rec.resumed_from_epoch == log[k].epoch_id, where + " resumes at this checkpoint");
        v.require(rec.machine.regs.rip == log[k].resume_rip, where + " resumes at the callee entry");
      } else if (k == 0) {
        v.require(!rec.resumed_from_epoch.has_value(), where + " cold restart");
      } else {
        v.require(rec.resumed_from_epoch == log[k - 1].epoch_id, where + " resumes at the previous checkpoint");
        v.require(rec.machine.regs.rip == log[k - 1].resume_rip, where + " previous callee entry");
      }
      if (off < footprint) {
        // a torn record contributes nothing: every offset recovers the same state
        if (!torn_state) torn_state = rec.machine;
        v.require(rec.machine == *torn_state, where + " partially applied frame");
      }
      const auto row = run_one_failure(p, policy, FailurePlan::backup(k + 1, off), oracle);
      v.require(row.recovered_ok, where + " end state " + row.error);
    }
  }
  v.detail << cuts << " byte offsets over " << log.size() << " commits of chain.asm";
  return v;
}

Verdict cleanup_transparency() {
  Verdict v;
  std::size_t plans = 0;
  const std::vector<PolicySpec> policies{PolicySpec::parse("call"), PolicySpec::parse("incre-call(2)"),
                                         PolicySpec::parse("step(20)"), PolicySpec::parse("pseudo-incre-call(2)")};
  for (const auto& b : load_benchmarks(true)) {
    for (const auto& spec : policies) {
      const Program p = prepare(b.program, spec);
      const auto profile = reference_profile(p, spec.policy);
      const auto sampled = sample_plans(profile, 50, kSeed, PlanMix::CleanupOnly);
      v.require(sampled.size() == 50 || profile.cleanup_sizes.empty(), b.name + "/" + spec.label() + " 50 plans");
      for (const auto& plan : sampled) {
        ++plans;
        const std::string where = b.name + "/" + spec.label() + " " + plan.to_string();
        const auto cut = execute_with_failure(p, spec.policy, plan);
        v.require(cut.failed, where + " cut reached");
        NvmStore finished = cut.store;
        CleanSignal rest;
        for (const auto& r : finished.records()) {
          if (!r.tag.valid || !r.complete()) rest.invalid_epochs.push_back(r.tag.epoch_id);
        }
        cleanup(finished, rest);
        const auto a = recover(cut.store, p);
        const auto c = recover(finished, p);
        v.require(a.machine == c.machine && a.resumed_from_epoch == c.resumed_from_epoch, where + " state differs");
        v.require(run_one_failure(p, spec.policy, plan, b.oracle).recovered_ok, where + " end state");
      }
    }
  }
  v.detail << plans << " cleanup cuts recover byte-identically to a finished cleanup";
  return v;
}

Verdict trigger_arithmetic() {
  Verdict v;
  std::ostringstream counts;
  for (std::uint64_t trips : {1, 2, 3, 16, 100, 513, 1000}) {
    const std::string t = std::to_string(trips);
    const Program p = parse_program(
        ".func main frame=16\nmain:\n    push rbp\n    mov rbp, rsp\n    sub rsp, 16\n    mov rax, 0\n"
        "    store [rbp-8], rax\nhead:\n    call g\n    load rax, [rbp-8]\n    add rax, 1\n    store [rbp-8], rax\n"
        "    cmp rax, " + t + "\n    jl head\n.loop head=head trips=" + t +
        "\n    halt\n.endfunc\n.func g\ng:\n    push rbp\n    mov rbp, rsp\n    pop rbp\n    ret\n.endfunc\n");
    // oracle: walk the iterations and mark powers of two and the last one
    std::uint64_t expected = 0;
    for (std::uint64_t i = 1; i <= trips; ++i) {
      std::uint64_t q = i;
      while (q % 2 == 0) q /= 2;
      expected += (q == 1 || i == trips) ? 1 : 0;
    }
    Device d(p, PolicyConfig::incremental(2));
    d.run();
    v.require(d.stats().checkpoints == expected, "trips=" + t);
    v.require(expected_trigger_count(trips, 2) == expected, "expected_trigger_count(" + t + ")");
    counts << t << "->" << d.stats().checkpoints << " ";
  }
  v.detail << counts.str();
  return v;
}

Verdict byte_direction() {
  Verdict v;
  std::ostringstream d;
  const auto names = testing::synthetic_benchmarks();
  for (const auto& r : experiment()) {
    if (std::find(names.begin(), names.end(), r.benchmark) == names.end()) {
      // call-dense scenario program: reported, not held to the ordering
      char buf[96];
      std::snprintf(buf, sizeof buf, "[%s call/step=%.2f, not ordered] ", r.benchmark.c_str(),
                    static_cast<double>(r.find("call")->metrics.headline_bytes) /
                        static_cast<double>(r.find("step(20)")->metrics.headline_bytes));
      d << buf;
      continue;
    }
    const Program p = load_program_file(testing::bench_path(r.benchmark + ".asm"));
    v.require(has_call_in_loop(p), r.benchmark + " has calls in loops");
    const auto bytes = [&](const char* label) { return r.find(label)->metrics.headline_bytes; };
    const auto log = bytes("log"), step = bytes("step(20)"), call = bytes("call"), incre = bytes("incre-call(2)");
    v.require(incre <= call, r.benchmark + " incre <= call");
    v.require(call < step, r.benchmark + " call < step");
    v.require(step < log, r.benchmark + " step < log");
    const double vs_log = *r.find("call")->normalized_vs_log;
    const double reduction = 1.0 - static_cast<double>(call) / static_cast<double>(step);
    v.require(vs_log <= 0.05, r.benchmark + " call normalized_vs_log <= 0.05");
    v.require(reduction >= 0.60, r.benchmark + " call vs step reduction >= 60%");
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s(vs_log=%.4f red=%.0f%%) ", r.benchmark.c_str(), vs_log, reduction * 100.0);
    d << buf;
  }
  const Program loop_call = load_program_file(testing::bench_path("fixtures/loop_call.asm"));
  Device call(loop_call, PolicyConfig::call());
  call.run();
  Device incre(loop_call, PolicyConfig::incremental(2));
  incre.run();
  const double ratio =
      static_cast<double>(call.store().bytes_written_headline()) / static_cast<double>(incre.store().bytes_written_headline());
  v.require(ratio >= 100.0, "loop_call incre-call reduction >= 100x");
  char buf[64];
  std::snprintf(buf, sizeof buf, "loop_call incre/call=%.0fx", ratio);
  d << buf;
  v.detail << d.str();
  return v;
}

Verdict rollback_direction() {
  Verdict v;
  std::ostringstream d;
  std::size_t sparse = 0;
  for (const auto& r : experiment()) {
    const auto* log = r.find("log");
    v.require(log->rollback_avg <= 1.0, r.benchmark + " log rollback <= 1");
    const Program p = load_program_file(testing::bench_path(r.benchmark + ".asm"));
    const bool call_sparse = instructions_per_call(p) > static_cast<double>(kStep);
    const auto names = testing::synthetic_benchmarks();
    if (std::find(names.begin(), names.end(), r.benchmark) != names.end()) {
      v.require(call_sparse, r.benchmark + " is call-sparse");
    }
    if (!call_sparse) continue;
    ++sparse;
    const double step = r.find("step(20)")->rollback_avg;
    for (const char* label : {"call", "incre-call(2)"}) {
      const double x = r.find(label)->rollback_avg;
      v.require(x > step, r.benchmark + " " + label + " rollback > step");
      v.require(x <= 20.0 * step, r.benchmark + " " + label + " rollback <= 20x step");
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s(call=%.1fx incre=%.1fx) ", r.benchmark.c_str(), *r.find("call")->rollback_vs_step,
                  *r.find("incre-call(2)")->rollback_vs_step);
    d << buf;
  }
  v.detail << sparse << " call-sparse: " << d.str();
  return v;
}

Verdict chain_property() {
  Verdict v;
  std::size_t checked = 0;
  for (const auto& path : testing::all_program_files()) {
    const Program original = load_program_file(path);
    for (const Program& p : {original, insert_pseudo_calls(original).first}) {
      Device d(p, PolicyConfig::call());
      d.set_commit_observer([&](const Device& dev, const CommitLogEntry& e) {
        if (!e.complete) return;
        ++checked;
        std::vector<std::uint64_t> rbps;
        for (const auto* r : live_valid_set(dev.store())) rbps.push_back(r->tag.rbp_value);
        const std::set<std::uint64_t> distinct(rbps.begin(), rbps.end());
        v.require(distinct.size() == rbps.size(), path + " duplicate rbp after epoch " + std::to_string(e.epoch_id));
        v.require(rbps == frame_chain(dev.machine()), path + " chain mismatch after epoch " + std::to_string(e.epoch_id));
      });
      d.run();
    }
  }
  v.detail << checked << " complete checkpoints checked";
  return v;
}

Verdict transform_transparency() {
  Verdict v;
  std::size_t programs = 0;
  for (const auto& path : testing::all_program_files()) {
    const Program p = load_program_file(path);
    const Program q = insert_pseudo_calls(p).first;
    v.require(plain_run(q) == plain_run(p), path + " output changed");
    ++programs;
  }
  const Program s = insert_pseudo_calls(load_program_file(testing::bench_path("fixtures/straight_line.asm"))).first;
  MachineState m = MachineState::boot(s);
  std::size_t gap = 0, longest = 0;
  while (!m.halted) {
    bool call = false;
    for (const auto& e : step(m, s)) call = call || e.kind == EventKind::CallExecuted;
    gap = call ? 0 : gap + 1;
    longest = std::max(longest, gap);
  }
  // a window of 24 misses every call only if 24 call-free instructions run back to back
  v.require(longest < 24, "straight_line has a call-free window of 24");
  v.detail << programs << " programs preserved; longest call-free stretch " << longest << " of " << m.executed;
  return v;
}

Verdict case_study() {
  Verdict v;
  TransformConfig cfg;
  cfg.threshold = 40;
  const Program original = load_program_file(testing::bench_path("case_study.asm"));
  const auto [p, report] = insert_pseudo_calls(original, cfg);
  v.require(report.insertions.size() == 2, "two inserted calls");
  const Oracle oracle = capture_oracle(original);

  // executed count at the j-th arrival at each label, and after each call of each site
  std::map<std::uint64_t, std::vector<std::uint64_t>> arrivals, calls_done;
  MachineState m = MachineState::boot(p);
  while (!m.halted) {
    arrivals[m.regs.rip].push_back(m.executed);
    for (const auto& e : step(m, p)) {
      if (e.kind == EventKind::CallExecuted) calls_done[e.site].push_back(m.executed);
    }
  }
  std::uint64_t preamble_site = 0, sum_site = 0;
  for (const auto& ins : report.insertions) {
    (ins.function == "main" ? preamble_site : sum_site) = p.function_entry(ins.function) + ins.index;
  }
  // first matching call at or after `label`
  auto site_in = [&](const std::string& label, Opcode op, const std::string& target) {
    for (std::uint64_t a = address_of(p, "main", label); a < p.code().size(); ++a) {
      if (p.code()[a].op == op && p.code()[a].target == target) return a;
    }
    return std::uint64_t{0};
  };
  const std::uint64_t loop_a_site = site_in("loop_a", Opcode::PseudoCall, "pseudo");
  const std::uint64_t loop_b_site = site_in("loop_b", Opcode::PseudoCall, "pseudog");
  const std::uint64_t sum_call = site_in("loop_b", Opcode::Call, "sum");

  struct Case {
    int number;
    std::string fn, label;
    std::size_t arrival;
    std::uint64_t site;
    std::size_t call_nth, incre_nth;
  };
  const std::vector<Case> cases{
      {1, "main", "loc_i", 1, preamble_site, 1, 1}, {2, "main", "loc_b", 500, loop_a_site, 499, 256},
      {3, "main", "loc_c", 128, loop_b_site, 128, 128}, {4, "main", "loc_d", 513, loop_a_site, 512, 512},
      {5, "sum", "loc_e", 1, sum_call, 1, 1},           {6, "sum", "loc_f", 5, sum_call, 1, 1},
      {7, "sum", "loc_h", 1, sum_site, 1, 1},           {8, "sum", "loc_g", 1, sum_site, 1, 1},
  };
  std::size_t checked = 0;
  for (const auto& c : cases) {
    for (const auto& policy : {PolicyConfig::call(), PolicyConfig::incremental(2)}) {
      const std::string where = "case " + std::to_string(c.number) + " " + to_string(policy);
      const auto& hits = arrivals[address_of(p, c.fn, c.label)];
      if (hits.size() < c.arrival) {
        v.require(false, where + " label reached too few times");
        continue;
      }
      const FailurePlan plan = FailurePlan::at(hits[c.arrival - 1]);
      const std::size_t nth = policy.kind == PolicyKind::CallBased ? c.call_nth : c.incre_nth;
      const auto cut = execute_with_failure(p, policy, plan);
      const auto rec = recover(cut.store, p);
      const auto callee = p.code()[c.site].target_addr;
      v.require(rec.resumed_from_epoch.has_value(), where + " resumed from a checkpoint");
      v.require(rec.machine.regs.rip == callee, where + " resumes at the callee's push rbp");
      const CommitLogEntry* entry = nullptr;
      for (const auto& e : cut.commit_log) {
        if (rec.resumed_from_epoch && e.epoch_id == *rec.resumed_from_epoch) entry = &e;
      }
      v.require(entry != nullptr && entry->site == c.site,
                where + " resumed from site " + (entry ? std::to_string(entry->site) : "?") + " not " + std::to_string(c.site));
      v.require(entry != nullptr && calls_done[c.site].size() >= nth && entry->executed == calls_done[c.site][nth - 1],
                where + " resumed from call #" + std::to_string(nth));
      v.require(run_one_failure(p, policy, plan, oracle).recovered_ok, where + " end state");
      ++checked;
    }
  }
  v.detail << checked << " case/policy resume points";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"oracle equivalence", oracle_equivalence},       {"atomicity sweep", atomicity_sweep},
      {"cleanup transparency", cleanup_transparency},   {"trigger arithmetic", trigger_arithmetic},
      {"byte-metric direction", byte_direction},        {"rollback direction", rollback_direction},
      {"invalidation chain property", chain_property}, {"transform transparency and coverage", transform_transparency},
      {"case-study scenarios", case_study},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "threw: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %zu %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                v.detail.str().c_str(), secs);
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
