// ckpt: command-line front end for the checkpoint simulator.

#include <filesystem>
#include <iomanip>
#include <optional>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ckpt/error.hpp"
#include "ckpt/harness.hpp"

using nlohmann::json;

namespace {

struct PolicyFlags {
  std::string policy = "call";
  std::uint64_t step = 20;
  std::uint64_t base = 2;
  std::uint64_t threshold = 20;

  void add(CLI::App* app) {
    app->add_option("--policy", policy, "log | step | call | incre-call | pseudo-incre-call (any may take (arg))")
        ->capture_default_str();
    app->add_option("--step", step, "S for step-based checkpointing")->capture_default_str();
    app->add_option("--base", base, "exponent base for incremental call checkpointing")->capture_default_str();
    app->add_option("--T", threshold, "straight-line threshold for pseudo policies")->capture_default_str();
  }
  ckpt::PolicySpec spec() const { return ckpt::PolicySpec::parse(policy, step, base, threshold); }
};

json metrics_json(const ckpt::RunMetrics& m) {
  return {{"executed", m.executed},         {"checkpoints", m.checkpoints}, {"headline_bytes", m.headline_bytes},
          {"total_bytes", m.total_bytes},   {"tag_bytes", m.tag_bytes},     {"cleanups", m.cleanups}};
}

json machine_json(const ckpt::MachineState& m) {
  json regs = json::object();
  for (int i = 0; i < ckpt::kGprCount; ++i) {
    const auto r = static_cast<ckpt::Reg>(i);
    regs[std::string(ckpt::to_string(r))] = m.regs[r];
  }
  regs["rip"] = m.regs.rip;
  regs["flags"] = m.regs.flags;
  return {{"registers", regs}, {"executed", m.executed}, {"halted", m.halted}, {"output", m.output}};
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw ckpt::Error(ckpt::ErrorKind::InvalidArgument, "cannot write " + path);
  out << text;
}

ckpt::PlanMix parse_mix(const std::string& s) {
  if (s == "at") return ckpt::PlanMix::AtInstructionOnly;
  if (s == "all") return ckpt::PlanMix::AllClasses;
  if (s == "backup") return ckpt::PlanMix::BackupOnly;
  if (s == "cleanup") return ckpt::PlanMix::CleanupOnly;
  throw ckpt::Error(ckpt::ErrorKind::InvalidArgument, "unknown plan mix '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stack-frame checkpointing simulator"};
  app.set_config("--config", "", "key = value file mirroring the command-line flags");
  app.require_subcommand(1);

  // run
  std::string run_program;
  PolicyFlags run_policy;
  bool run_json = false;
  auto* run = app.add_subcommand("run", "Run a program under a policy without failures");
  run->add_option("program", run_program, "assembly file")->required()->check(CLI::ExistingFile);
  run_policy.add(run);
  run->add_flag("--json", run_json, "print metrics as JSON");

  // transform
  std::string tr_in, tr_out = "-", tr_report;
  ckpt::TransformConfig tr_cfg;
  bool tr_outside = false;
  auto* transform = app.add_subcommand("transform", "Insert pseudo function calls");
  transform->add_option("input", tr_in, "assembly file")->required()->check(CLI::ExistingFile);
  transform->add_option("-o,--output", tr_out, "output assembly ('-' for stdout)");
  transform->add_option("--T", tr_cfg.threshold, "straight-line threshold")->capture_default_str();
  transform->add_option("--small-loop-max", tr_cfg.small_loop_max, "largest 'small' loop trip count")
      ->capture_default_str();
  transform->add_flag("--large-loop-outside", tr_outside, "place large-loop calls after the loop");
  transform->add_option("--pseudo-name", tr_cfg.pseudo_name, "name of the inserted function")->capture_default_str();
  transform->add_option("--report", tr_report, "placement report JSON");

  // inject
  std::string inj_program, inj_plan, inj_dump, inj_mix = "at";
  PolicyFlags inj_policy;
  std::uint64_t inj_seed = 1;
  std::size_t inj_n = 0;
  auto* inject = app.add_subcommand("inject", "Inject power failures, recover and compare with the oracle");
  inject->add_option("program", inj_program, "assembly file")->required()->check(CLI::ExistingFile);
  inj_policy.add(inject);
  inject->add_option("--plan", inj_plan, "at:N | backup:K@B | cleanup:K@R");
  inject->add_option("--seed", inj_seed, "sampling seed")->capture_default_str();
  inject->add_option("--n", inj_n, "number of sampled plans");
  inject->add_option("--mix", inj_mix, "at | all | backup | cleanup")->capture_default_str();
  inject->add_option("--dump", inj_dump, "write the NVM image left by --plan as JSON lines");

  // recover
  std::string rec_store, rec_program, rec_emit = "-";
  PolicyFlags rec_policy;
  bool rec_resume = false;
  auto* recover = app.add_subcommand("recover", "Rebuild machine state from an NVM image");
  recover->add_option("--store", rec_store, "NVM image (JSON lines)")->required()->check(CLI::ExistingFile);
  recover->add_option("--program", rec_program, "assembly file")->required()->check(CLI::ExistingFile);
  recover->add_option("--emit", rec_emit, "recovered state JSON ('-' for stdout)");
  recover->add_flag("--resume", rec_resume, "continue to halt and include the final state");
  rec_policy.add(recover);

  // bench
  std::vector<std::string> bench_programs;
  std::vector<std::string> bench_policies;
  std::string bench_out = "runs";
  ckpt::ExperimentConfig bench_cfg;
  std::string bench_mix = "at";
  auto* bench = app.add_subcommand("bench", "Run the policy comparison over a set of programs");
  bench->add_option("programs", bench_programs, "assembly files")->required()->check(CLI::ExistingFile);
  bench->add_option("--policies", bench_policies, "policy labels (default: all five)");
  bench->add_option("--n", bench_cfg.n, "failures per (program, policy)")->capture_default_str();
  bench->add_option("--seed", bench_cfg.seed, "sampling seed")->capture_default_str();
  bench->add_option("--mix", bench_mix, "at | all | backup | cleanup")->capture_default_str();
  bench->add_option("--out", bench_out, "run directory")->capture_default_str();

  // inspect
  std::string insp_program, insp_store;
  auto* inspect = app.add_subcommand("inspect", "Describe a program or an NVM image");
  inspect->add_option("--program", insp_program, "assembly file")->check(CLI::ExistingFile);
  inspect->add_option("--store", insp_store, "NVM image (JSON lines)")->check(CLI::ExistingFile);

  // trace
  std::string trace_program, trace_out = "-";
  std::uint64_t trace_cap = 0;
  auto* trace = app.add_subcommand("trace", "Per-instruction stack depth CSV");
  trace->add_option("program", trace_program, "assembly file")->required()->check(CLI::ExistingFile);
  trace->add_option("--cap", trace_cap, "stop after this many instructions (0 = run to halt)");
  trace->add_option("-o,--output", trace_out, "CSV path ('-' for stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto program = ckpt::load_program_file(run_program);
      const auto spec = run_policy.spec();
      const auto prepared = ckpt::prepare(program, spec);
      ckpt::Device device(prepared, spec.policy);
      device.run();
      const auto m = ckpt::metrics_of(device);
      if (run_json) {
        json j = metrics_json(m);
        j["policy"] = spec.label();
        j["output"] = device.machine().output;
        std::cout << j.dump(2) << '\n';
      } else {
        std::cout << "policy       " << spec.label() << '\n'
                  << "executed     " << m.executed << '\n'
                  << "checkpoints  " << m.checkpoints << '\n'
                  << "headline     " << m.headline_bytes << " B\n"
                  << "total        " << m.total_bytes << " B\n"
                  << "cleanups     " << m.cleanups << '\n'
                  << "output      ";
        for (auto v : device.machine().output) std::cout << ' ' << v;
        std::cout << '\n';
      }
    } else if (*transform) {
      tr_cfg.large_loop_inside = !tr_outside;
      const auto program = ckpt::load_program_file(tr_in);
      auto [out, report] = ckpt::insert_pseudo_calls(program, tr_cfg);
      write_text(tr_out, ckpt::print_program(out));
      if (!tr_report.empty()) {
        json j = json::array();
        for (const auto& ins : report.insertions) {
          j.push_back({{"function", ins.function}, {"index", ins.index}, {"rule", ckpt::to_string(ins.rule)}});
        }
        write_text(tr_report, j.dump(2) + "\n");
      }
    } else if (*inject) {
      const auto program = ckpt::load_program_file(inj_program);
      const auto spec = inj_policy.spec();
      const auto prepared = ckpt::prepare(program, spec);
      const auto oracle = ckpt::capture_oracle(program);
      std::vector<ckpt::FailurePlan> plans;
      if (!inj_plan.empty()) {
        plans.push_back(ckpt::FailurePlan::parse(inj_plan));
        if (!inj_dump.empty()) {
          auto fo = ckpt::execute_with_failure(prepared, spec.policy, plans.front());
          write_text(inj_dump, ckpt::dump_store(fo.store));
        }
      } else {
        if (inj_n == 0) throw ckpt::Error(ckpt::ErrorKind::InvalidArgument, "give --plan or --n");
        plans = ckpt::sample_plans(ckpt::reference_profile(prepared, spec.policy), inj_n, inj_seed, parse_mix(inj_mix));
      }
      bool ok = true;
      std::cout << "plan,failed,executed_at_failure,resumed_from_epoch,resume_rip,rollback,recovered_ok\n";
      for (const auto& p : plans) {
        const auto row = ckpt::run_one_failure(prepared, spec.policy, p, oracle);
        ok = ok && row.recovered_ok;
        std::cout << p.to_string() << ',' << row.failed << ',' << row.executed_at_failure << ','
                  << (row.resumed_from_epoch ? std::to_string(*row.resumed_from_epoch) : "cold") << ','
                  << row.resume_rip << ',' << row.rollback_instructions << ',' << (row.recovered_ok ? "ok" : "FAIL");
        if (!row.error.empty()) std::cout << ",\"" << row.error << '"';
        std::cout << '\n';
      }
      return ok ? 0 : 1;
    } else if (*recover) {
      const auto program = ckpt::load_program_file(rec_program);
      const auto spec = rec_policy.spec();
      const auto prepared = ckpt::prepare(program, spec);
      std::ifstream in(rec_store);
      std::stringstream buf;
      buf << in.rdbuf();
      auto store = ckpt::load_store(buf.str());
      auto rec = ckpt::recover(store, prepared);
      json j = machine_json(rec.machine);
      j["resumed_from_epoch"] = rec.resumed_from_epoch ? json(*rec.resumed_from_epoch) : json();
      j["reclaim_epochs"] = rec.reclaim_epochs;
      if (rec_resume) {
        auto res = ckpt::resume_and_verify(rec, prepared, spec.policy, std::move(store));
        j["final"] = machine_json(res.final_state);
        j["resumed_output"] = res.output;
      }
      write_text(rec_emit, j.dump(2) + "\n");
    } else if (*bench) {
      bench_cfg.mix = parse_mix(bench_mix);
      std::vector<ckpt::BenchmarkSpec> specs;
      for (const auto& p : bench_programs) specs.push_back(ckpt::BenchmarkSpec::load(p));
      std::vector<ckpt::PolicySpec> policies;
      for (const auto& p : bench_policies) policies.push_back(ckpt::PolicySpec::parse(p));
      if (policies.empty()) policies = ckpt::default_policies();
      const auto reports = ckpt::run_experiment(specs, policies, bench_cfg);
      const auto paths = ckpt::write_reports(bench_out, reports, bench_cfg.seed);
      bool ok = true;
      std::cout << "benchmark      policy                       ckpts    headline   vs-log  rollback  vs-step  ok\n";
      const auto ratio = [](const std::optional<double>& v, int precision) {
        if (!v) return std::string("-");
        std::ostringstream os;
        os << std::fixed << std::setprecision(precision) << *v;
        return os.str();
      };
      for (const auto& r : reports) {
        for (const auto& p : r.policies) {
          ok = ok && p.all_ok();
          std::cout << std::left << std::setw(15) << r.benchmark << std::setw(27) << p.label << std::right
                    << std::setw(7) << p.metrics.checkpoints << std::setw(12) << p.metrics.headline_bytes
                    << std::setw(9) << ratio(p.normalized_vs_log, 4) << std::setw(10) << std::fixed
                    << std::setprecision(1) << p.rollback_avg << std::setw(9) << ratio(p.rollback_vs_step, 2) << "  " << (p.all_ok() ? "yes" : "NO")
                    << '\n';
        }
      }
      std::cout << "wrote " << paths.csv.string() << " and " << paths.json.string() << '\n';
      return ok ? 0 : 1;
    } else if (*inspect) {
      if (!insp_program.empty()) {
        const auto p = ckpt::load_program_file(insp_program);
        json j;
        j["entry"] = p.entry();
        j["static_instructions"] = ckpt::static_instruction_count(p);
        json fns = json::array();
        for (std::size_t i = 0; i < p.functions().size(); ++i) {
          const auto& f = p.functions()[i];
          fns.push_back({{"name", f.name},
                         {"entry", p.layout(i).entry},
                         {"end", p.layout(i).end},
                         {"frame_bytes", f.frame_bytes},
                         {"pseudo", f.is_pseudo}});
        }
        j["functions"] = fns;
        j["loops"] = ckpt::loop_summary(p);
        const auto oracle = ckpt::capture_oracle(p);
        j["dynamic_instructions"] = oracle.executed;
        j["output"] = oracle.output;
        j["observation_hash"] = oracle.hash;
        std::cout << j.dump(2) << '\n';
      }
      if (!insp_store.empty()) {
        std::ifstream in(insp_store);
        std::stringstream buf;
        buf << in.rdbuf();
        const auto store = ckpt::load_store(buf.str());
        std::cout << "capacity " << store.capacity_bytes() << "  used " << store.used_bytes() << "  commits " << store.commits()
                  << "\n";
        for (const auto& r : store.records()) {
          std::cout << "epoch " << r.tag.epoch_id << "  rbp 0x" << std::hex << r.tag.rbp_value << "  [0x" << r.tag.region.lo
                    << ", 0x" << r.tag.region.hi << "]  resume " << std::dec << r.tag.resume_rip << "  "
                    << (r.complete() ? "complete" : "torn") << (r.tag.valid ? "" : " invalid") << '\n';
        }
      }
      if (insp_program.empty() && insp_store.empty()) {
        throw ckpt::Error(ckpt::ErrorKind::InvalidArgument, "give --program and/or --store");
      }
    } else if (*trace) {
      const auto p = ckpt::load_program_file(trace_program);
      write_text(trace_out, ckpt::emit_stack_trace(p, trace_cap ? std::optional(trace_cap) : std::nullopt));
    }
  } catch (const ckpt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
