#include "ckpt/harness.hpp"

#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ckpt/error.hpp"

namespace ckpt {

Oracle capture_oracle(const Program& program, const MachineConfig& config) {
  MachineState m = MachineState::boot(program, config);
  run_until(m, program, [](std::uint64_t) { return false; });
  Oracle o;
  o.output = m.output;
  o.observation = observe(m, m.output);
  o.hash = observation_hash(o.observation);
  o.executed = m.executed;
  return o;
}

std::string loop_summary(const Program& program) {
  std::ostringstream os;
  bool first = true;
  for (const auto& l : program.loops()) {
    if (!first) os << ' ';
    first = false;
    os << l.function << '.' << l.head_label << ":depth" << l.nesting_depth << ":trips=";
    if (l.static_trip_count) {
      os << *l.static_trip_count;
    } else {
      os << '?';
    }
  }
  return os.str();
}

BenchmarkSpec BenchmarkSpec::load(const std::filesystem::path& path, const MachineConfig& config) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  BenchmarkSpec b;
  b.name = path.stem().string();
  b.source = path.string();
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    const auto p = line.find_first_not_of(" \t");
    if (p == std::string::npos) continue;
    if (line[p] != '#') break;
    const auto q = line.find_first_not_of("# \t", p);
    if (q != std::string::npos) b.description = line.substr(q);
    break;
  }
  b.program = parse_program(text);
  b.loop_profile = loop_summary(b.program);
  b.oracle = capture_oracle(b.program, config);
  return b;
}

std::string PolicySpec::label() const {
  if (!pseudo) return to_string(policy);
  return "pseudo-" + to_string(policy) + "+T" + std::to_string(transform.threshold);
}

PolicySpec PolicySpec::parse(const std::string& text, std::uint64_t step, std::uint64_t base, std::uint64_t threshold) {
  PolicySpec s;
  std::string body = text;
  if (const auto plus = text.find("+T"); plus != std::string::npos) {
    try {
      std::size_t used = 0;
      threshold = std::stoull(text.substr(plus + 2), &used);
      if (used == 0 || plus + 2 + used != text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, "bad threshold suffix in '" + text + "'");
    }
    body = text.substr(0, plus);
  }
  std::string name = body;
  std::optional<std::uint64_t> arg;
  if (const auto open = body.find('('); open != std::string::npos) {
    const auto close = body.find(')', open);
    if (close == std::string::npos || close + 1 != body.size()) {
      throw Error(ErrorKind::InvalidArgument, "bad policy '" + text + "'");
    }
    name = body.substr(0, open);
    try {
      arg = std::stoull(body.substr(open + 1, close - open - 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, "bad policy argument in '" + text + "'");
    }
  }
  if (name.starts_with("pseudo-")) {
    s.pseudo = true;
    s.transform.threshold = threshold;
    s.transform.validate();
    name = name.substr(7);
  } else if (body.size() != text.size()) {
    throw Error(ErrorKind::InvalidArgument, "threshold suffix needs a pseudo- policy in '" + text + "'");
  }
  if (name == "log") {
    s.policy = PolicyConfig::log();
  } else if (name == "step") {
    s.policy = PolicyConfig::step_based(arg.value_or(step));
  } else if (name == "call") {
    s.policy = PolicyConfig::call();
  } else if (name == "incre-call") {
    s.policy = PolicyConfig::incremental(arg.value_or(base));
  } else {
    throw Error(ErrorKind::InvalidArgument, "unknown policy '" + text + "'");
  }
  s.policy.validate();
  return s;
}

std::vector<PolicySpec> default_policies() {
  std::vector<PolicySpec> out;
  for (const char* name : {"log", "step", "call", "incre-call", "pseudo-incre-call"}) out.push_back(PolicySpec::parse(name));
  return out;
}

Program prepare(const Program& program, const PolicySpec& spec) {
  if (!spec.pseudo) return program;
  return insert_pseudo_calls(program, spec.transform).first;
}

FailureRow run_one_failure(const Program& prepared, const PolicyConfig& policy, const FailurePlan& plan,
                           const Oracle& oracle, const DeviceOptions& options) {
  FailureRow row;
  row.plan = plan;
  try {
    FailureOutcome fo = execute_with_failure(prepared, policy, plan, options);
    row.failed = fo.failed;
    row.executed_at_failure = fo.executed_at_failure;
    if (!fo.failed) {
      row.recovered_ok = observe(fo.lost_state, fo.output) == oracle.observation;
      if (!row.recovered_ok) row.error = "failure-free run diverged from oracle";
      return row;
    }
    RecoveredState rec = recover(fo.store, prepared, options.machine);
    attach_rollback(rec, fo.commit_log, fo.executed_at_failure);
    row.resumed_from_epoch = rec.resumed_from_epoch;
    row.resume_rip = rec.machine.regs.rip;
    row.rollback_instructions = rec.rollback_instructions;
    ResumeResult res = resume_and_verify(rec, prepared, policy, std::move(fo.store));
    auto stitched = stitch_output(fo.output, fo.commit_log, rec.resumed_from_epoch, res.output);
    row.recovered_ok = observe(res.final_state, std::move(stitched)) == oracle.observation;
    if (!row.recovered_ok) row.error = "recovered state diverged from oracle";
  } catch (const std::exception& e) {
    row.recovered_ok = false;
    row.error = e.what();
  }
  return row;
}

bool PolicyReport::all_ok() const {
  if (!failure_free_ok) return false;
  for (const auto& f : failures) {
    if (!f.recovered_ok) return false;
  }
  return true;
}

bool RunReport::all_ok() const {
  for (const auto& p : policies) {
    if (!p.all_ok()) return false;
  }
  return true;
}

const PolicyReport* RunReport::find(const std::string& label) const {
  for (const auto& p : policies) {
    if (p.label == label) return &p;
  }
  return nullptr;
}

std::vector<RunReport> run_experiment(const std::vector<BenchmarkSpec>& benchmarks,
                                      const std::vector<PolicySpec>& policies, const ExperimentConfig& cfg) {
  std::vector<RunReport> reports;
  for (const auto& b : benchmarks) {
    RunReport rr;
    rr.benchmark = b.name;
    rr.seed = cfg.seed;
    rr.n = cfg.n;
    std::optional<std::uint64_t> log_bytes;
    std::optional<double> step_rollback;
    for (const auto& spec : policies) {
      PolicyReport pr;
      pr.label = spec.label();
      Program prepared;
      try {
        prepared = prepare(b.program, spec);
        Device device(prepared, spec.policy, cfg.device);
        device.run();
        pr.metrics = metrics_of(device);
        pr.failure_free_ok = observe(device.machine(), device.machine().output) == b.oracle.observation;

        ReferenceProfile profile;
        profile.run_length = device.machine().executed;
        for (const auto& e : device.commit_log()) {
          profile.commit_footprints.push_back(e.headline_bytes + kTagHeaderBytes + kValidTailBytes);
        }
        profile.cleanup_sizes = device.stats().cleanup_sizes;
        for (const auto& plan : sample_plans(profile, cfg.n, cfg.seed, cfg.mix)) {
          pr.failures.push_back(run_one_failure(prepared, spec.policy, plan, b.oracle, cfg.device));
        }
      } catch (const std::exception& e) {
        pr.failure_free_ok = false;
        FailureRow row;
        row.error = e.what();
        pr.failures.push_back(row);
      }
      std::uint64_t sum = 0;
      std::size_t count = 0;
      for (const auto& f : pr.failures) {
        if (!f.failed) continue;
        sum += f.rollback_instructions;
        ++count;
      }
      pr.rollback_avg = count ? static_cast<double>(sum) / static_cast<double>(count) : 0.0;
      if (spec.policy.kind == PolicyKind::LogBased && !spec.pseudo) log_bytes = pr.metrics.headline_bytes;
      if (spec.policy.kind == PolicyKind::StepBased && !spec.pseudo) step_rollback = pr.rollback_avg;
      rr.policies.push_back(std::move(pr));
    }
    for (auto& pr : rr.policies) {
      if (log_bytes && *log_bytes > 0) {
        pr.normalized_vs_log = static_cast<double>(pr.metrics.headline_bytes) / static_cast<double>(*log_bytes);
      }
      if (step_rollback && *step_rollback > 0) pr.rollback_vs_step = pr.rollback_avg / *step_rollback;
    }
    reports.push_back(std::move(rr));
  }
  return reports;
}

namespace {

std::string fmt_ratio(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(6) << *v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string report_csv(const std::vector<RunReport>& reports) {
  std::ostringstream os;
  os << "benchmark,policy,row,plan,executed,checkpoints,headline_bytes,total_bytes,normalized_vs_log,"
        "rollback_instructions,rollback_vs_step,recovered_ok,error\n";
  for (const auto& r : reports) {
    for (const auto& p : r.policies) {
      os << r.benchmark << ',' << p.label << ",summary,," << p.metrics.executed << ',' << p.metrics.checkpoints << ','
         << p.metrics.headline_bytes << ',' << p.metrics.total_bytes << ',' << fmt_ratio(p.normalized_vs_log) << ','
         << fmt_ratio(p.rollback_avg) << ',' << fmt_ratio(p.rollback_vs_step) << ','
         << (p.all_ok() ? "true" : "false") << ",\n";
      for (const auto& f : p.failures) {
        os << r.benchmark << ',' << p.label << ",failure," << f.plan.to_string() << ',' << f.executed_at_failure
           << ",,,,," << f.rollback_instructions << ",," << (f.recovered_ok ? "true" : "false") << ','
           << csv_field(f.error) << '\n';
      }
    }
  }
  return os.str();
}

nlohmann::json report_json(const std::vector<RunReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json jr{{"benchmark", r.benchmark}, {"seed", r.seed}, {"n", r.n}, {"sampler", kSamplerId}};
    nlohmann::json pols = nlohmann::json::array();
    for (const auto& p : r.policies) {
      nlohmann::json jp{{"policy", p.label},
                        {"executed", p.metrics.executed},
                        {"checkpoints", p.metrics.checkpoints},
                        {"headline_bytes", p.metrics.headline_bytes},
                        {"total_bytes", p.metrics.total_bytes},
                        {"tag_bytes", p.metrics.tag_bytes},
                        {"cleanups", p.metrics.cleanups},
                        {"failure_free_ok", p.failure_free_ok},
                        {"rollback_avg", p.rollback_avg}};
      jp["normalized_vs_log"] = p.normalized_vs_log ? nlohmann::json(*p.normalized_vs_log) : nlohmann::json();
      jp["rollback_vs_step"] = p.rollback_vs_step ? nlohmann::json(*p.rollback_vs_step) : nlohmann::json();
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& f : p.failures) {
        nlohmann::json jf{{"plan", f.plan.to_string()},
                          {"failed", f.failed},
                          {"executed_at_failure", f.executed_at_failure},
                          {"resume_rip", f.resume_rip},
                          {"rollback_instructions", f.rollback_instructions},
                          {"recovered_ok", f.recovered_ok}};
        jf["resumed_from_epoch"] = f.resumed_from_epoch ? nlohmann::json(*f.resumed_from_epoch) : nlohmann::json();
        if (!f.error.empty()) jf["error"] = f.error;
        rows.push_back(std::move(jf));
      }
      jp["failures"] = std::move(rows);
      pols.push_back(std::move(jp));
    }
    jr["policies"] = std::move(pols);
    jr["all_ok"] = r.all_ok();
    out.push_back(std::move(jr));
  }
  return out;
}

ReportPaths write_reports(const std::filesystem::path& dir, const std::vector<RunReport>& reports, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  ReportPaths paths{dir / ("report-seed" + std::to_string(seed) + ".csv"),
                    dir / ("report-seed" + std::to_string(seed) + ".json")};
  std::ofstream(paths.csv) << report_csv(reports);
  std::ofstream(paths.json) << report_json(reports).dump(2) << '\n';
  return paths;
}

std::string emit_stack_trace(const Program& program, std::optional<std::uint64_t> cap, const MachineConfig& config) {
  std::ostringstream os;
  os << "executed,rip,stack_bytes\n";
  for (const auto& row : stack_trace(program, cap.value_or(0), config)) {
    os << row.executed << ',' << row.rip << ',' << row.stack_bytes << '\n';
  }
  return os.str();
}

}  // namespace ckpt
