#pragma once

// Static pass inserting pseudo function calls as extra checkpoint positions.

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ckpt/isa.hpp"

namespace ckpt {

enum class PlacementRule : std::uint8_t {
  StraightLineThreshold,
  OutsideSmallLoop,
  InsideLargeLoop,
  InsideOutermostLoop,
  /// Large loop placed after the loop instead of inside (large_loop_inside = false).
  OutsideLargeLoop,
};

std::string_view to_string(PlacementRule r);

struct TransformConfig {
  /// A pseudo call is the T-th instruction of any call-free straight-line run.
  std::uint64_t threshold = 20;
  /// Single-level loops with at most this many trips get the call after the loop.
  std::uint64_t small_loop_max = 10;
  /// Placement for single-level loops above small_loop_max.
  bool large_loop_inside = true;
  std::string pseudo_name = "pseudo";

  void validate() const;
  /// push rbp; mov rbp, rsp; pop rbp; ret
  FunctionDef pseudo_body() const;
};

struct Insertion {
  std::string function;
  /// Index of the inserted pcall in the transformed function body.
  std::size_t index = 0;
  PlacementRule rule = PlacementRule::StraightLineThreshold;

  bool operator==(const Insertion&) const = default;
};

struct PlacementReport {
  std::vector<Insertion> insertions;
};

/// Throws AnnotationMissing when a call-free single-level loop has no trip
/// count.  The result is revalidated.
std::pair<Program, PlacementReport> insert_pseudo_calls(const Program& program, const TransformConfig& cfg = {});

/// Instructions a pseudo call adds to the dynamic stream besides the call
/// itself (the callee body).
inline constexpr std::uint64_t kPseudoOverhead = 4;

}  // namespace ckpt
