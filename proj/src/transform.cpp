#include "ckpt/transform.hpp"

#include <algorithm>
#include <optional>

#include "ckpt/error.hpp"

namespace ckpt {

std::string_view to_string(PlacementRule r) {
  switch (r) {
    case PlacementRule::StraightLineThreshold: return "straight-line-threshold";
    case PlacementRule::OutsideSmallLoop: return "outside-small-loop";
    case PlacementRule::InsideLargeLoop: return "inside-large-loop";
    case PlacementRule::InsideOutermostLoop: return "inside-outermost-loop";
    case PlacementRule::OutsideLargeLoop: return "outside-large-loop";
  }
  return "?";
}

void TransformConfig::validate() const {
  if (threshold < 2) throw Error(ErrorKind::InvalidArgument, "threshold T must be >= 2");
  if (small_loop_max < 1) throw Error(ErrorKind::InvalidArgument, "small_loop_max must be >= 1");
  if (pseudo_name.empty()) throw Error(ErrorKind::InvalidArgument, "pseudo function needs a name");
}

FunctionDef TransformConfig::pseudo_body() const {
  FunctionDef f;
  f.name = pseudo_name;
  f.is_pseudo = true;
  f.body = {ins::push(Reg::rbp), ins::mov(Reg::rbp, Reg::rsp), ins::pop(Reg::rbp), ins::ret()};
  return f;
}

namespace {

// A function body under edit, with the rule that produced each inserted call.
struct Editable {
  FunctionDef* fn;
  std::vector<std::optional<PlacementRule>> origin;

  // Inserts before `at`; labels at `at` now name the inserted call.
  void insert(std::size_t at, Instruction in, PlacementRule rule) {
    fn->body.insert(fn->body.begin() + static_cast<std::ptrdiff_t>(at), std::move(in));
    origin.insert(origin.begin() + static_cast<std::ptrdiff_t>(at), rule);
    for (auto& [label, idx] : fn->labels) {
      if (idx > at) ++idx;
    }
  }
};

bool has_call(const FunctionDef& f, std::size_t lo, std::size_t hi) {
  for (std::size_t i = lo; i <= hi && i < f.body.size(); ++i) {
    if (f.body[i].is_call()) return true;
  }
  return false;
}

}  // namespace

std::pair<Program, PlacementReport> insert_pseudo_calls(const Program& program, const TransformConfig& cfg) {
  cfg.validate();
  std::vector<FunctionDef> functions = program.functions();
  std::vector<LoopAnnotation> loops = program.loops();

  if (const auto* existing = program.find(cfg.pseudo_name); existing && !existing->is_pseudo) {
    throw Error(ErrorKind::DuplicateLabel, "'" + cfg.pseudo_name + "' already names a non-pseudo function");
  }
  const Instruction pcall = ins::pseudo_call(cfg.pseudo_name);
  PlacementReport report;

  for (auto& f : functions) {
    if (f.is_pseudo) continue;
    Editable ed{&f, std::vector<std::optional<PlacementRule>>(f.body.size())};

    // Loop rules, on the original indices; applied back to front.
    std::vector<std::pair<std::size_t, PlacementRule>> loop_points;
    for (const auto& l : loops) {
      if (l.function != f.name || l.nesting_depth != 1) continue;
      const std::size_t head = f.labels.at(l.head_label);
      const std::size_t back = l.back_edge_index;
      if (has_call(f, head, back)) continue;
      bool nested = false;
      for (const auto& inner : loops) {
        if (&inner == &l || inner.function != f.name) continue;
        const std::size_t ih = f.labels.at(inner.head_label);
        if (ih >= head && inner.back_edge_index <= back) nested = true;
      }
      if (nested) {
        loop_points.emplace_back(head, PlacementRule::InsideOutermostLoop);
        continue;
      }
      if (!l.static_trip_count) {
        throw Error(ErrorKind::AnnotationMissing,
                    "call-free loop '" + l.head_label + "' in '" + f.name + "' needs a trips= annotation");
      }
      const bool small = *l.static_trip_count <= cfg.small_loop_max;
      if (!small && cfg.large_loop_inside) {
        loop_points.emplace_back(head, PlacementRule::InsideLargeLoop);
        continue;
      }
      // After the loop: skip when the back edge ends the function or the
      // call is already there.
      if (back + 1 >= f.body.size() || f.body[back + 1].op == Opcode::PseudoCall) continue;
      loop_points.emplace_back(back + 1, small ? PlacementRule::OutsideSmallLoop : PlacementRule::OutsideLargeLoop);
    }
    std::sort(loop_points.begin(), loop_points.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [at, rule] : loop_points) ed.insert(at, pcall, rule);

    // Straight-line rule: every call-free run gets a call as its T-th
    // instruction, provided the run continues past it. Never inside the prologue.
    const std::size_t prologue = f.frame_bytes > 0 ? 3 : 2;
    std::uint64_t run = 0;
    for (std::size_t i = 0; i < f.body.size(); ++i) {
      if (f.body[i].is_call()) {
        run = 0;
        continue;
      }
      ++run;
      if (run >= cfg.threshold - 1 && i + 1 >= prologue && i + 1 < f.body.size() && !f.body[i + 1].is_call()) {
        ed.insert(i + 1, pcall, PlacementRule::StraightLineThreshold);
        run = 0;
        ++i;
      }
    }
    for (std::size_t i = 0; i < ed.origin.size(); ++i) {
      if (ed.origin[i]) report.insertions.push_back({f.name, i, *ed.origin[i]});
    }
  }

  bool any = false;
  for (const auto& f : functions) {
    if (f.is_pseudo) continue;
    for (const auto& in : f.body) any = any || (in.op == Opcode::PseudoCall && in.target == cfg.pseudo_name);
  }
  if (any && !program.find(cfg.pseudo_name)) functions.push_back(cfg.pseudo_body());

  Program out = Program::build(std::move(functions), program.entry(), std::move(loops));
  return {std::move(out), std::move(report)};
}

}  // namespace ckpt
