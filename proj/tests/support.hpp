#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ckpt/isa.hpp"

namespace ckpt::testing {

inline std::string bench_path(const std::string& name) { return std::string(CKPT_SOURCE_DIR) + "/benchmarks/" + name; }

inline const std::vector<std::string>& synthetic_benchmarks() {
  static const std::vector<std::string> names{"adpcm", "blit", "bcnt", "qurt", "crc"};
  return names;
}

/// Every program shipped under benchmarks/, fixtures included.
inline std::vector<std::string> all_program_files() {
  std::vector<std::string> out;
  for (const auto& n : synthetic_benchmarks()) out.push_back(bench_path(n + ".asm"));
  out.push_back(bench_path("case_study.asm"));
  for (const char* f : {"one_call", "loop_call", "chain", "straight_line"}) out.push_back(bench_path(std::string("fixtures/") + f + ".asm"));
  return out;
}

/// Random well-formed program text.  Functions only call later functions,
/// loops keep their counter in the frame, and every loop is annotated.
inline std::string random_program_text(std::mt19937_64& rng, int max_functions = 4) {
  auto pick = [&](std::uint64_t n) { return static_cast<std::int64_t>(rng() % n); };
  static const char* regs[] = {"rax", "rbx", "rcx", "rdx", "rsi", "rdi", "r8", "r9", "r10", "r11"};
  static const char* alu[] = {"add", "sub", "mul", "xor", "and", "or", "shl", "shr"};
  const int nfun = 1 + static_cast<int>(pick(static_cast<std::uint64_t>(max_functions)));
  std::ostringstream os;
  int label = 0;

  auto straight = [&](int words, int n) {
    for (int i = 0; i < n; ++i) {
      const auto kind = pick(10);
      const char* d = regs[pick(10)];
      if (kind < 2 && words > 0) {
        os << "    store [rbp-" << 8 * (1 + pick(static_cast<std::uint64_t>(words))) << "], " << d << "\n";
      } else if (kind < 4 && words > 0) {
        os << "    load " << d << ", [rbp-" << 8 * (1 + pick(static_cast<std::uint64_t>(words))) << "]\n";
      } else if (kind < 5) {
        os << "    mov " << d << ", " << pick(1000) << "\n";
      } else {
        const char* op = alu[pick(8)];
        if (op[0] == 's' && op[1] == 'h') {
          os << "    " << op << " " << d << ", " << pick(5) << "\n";
        } else if (pick(2) == 0) {
          os << "    " << op << " " << d << ", " << regs[pick(10)] << "\n";
        } else {
          os << "    " << op << " " << d << ", " << pick(300) << "\n";
        }
        if (op[0] == 'm') os << "    and " << d << ", 1048575\n";
      }
    }
  };

  os << ".entry f0\n";
  for (int f = 0; f < nfun; ++f) {
    const int words = 1 + static_cast<int>(pick(4));
    os << ".func f" << f << " frame=" << words * 8 << "\n";
    os << "f" << f << ":\n    push rbp\n    mov rbp, rsp\n    sub rsp, " << words * 8 << "\n";
    // locals start zeroed; reading stale stack bytes is outside what the transform preserves
    os << "    mov r13, 0\n";
    for (int w = 1; w <= words; ++w) os << "    store [rbp-" << 8 * w << "], r13\n";
    const int blocks = 1 + static_cast<int>(pick(4));
    for (int b = 0; b < blocks; ++b) {
      straight(words, static_cast<int>(pick(12)));
      const auto kind = pick(3);
      const bool can_call = f + 1 < nfun;
      if (kind == 0 && can_call) {
        os << "    call f" << (f + 1 + pick(static_cast<std::uint64_t>(nfun - f - 1))) << "\n";
      } else if (kind >= 1) {
        const int trips = 1 + static_cast<int>(pick(kind == 1 ? 6 : 40));
        const int l = label++;
        os << "    mov r12, 0\n    store [rbp-" << words * 8 << "], r12\n";
        os << "L" << l << ":\n";
        straight(words - 1, 1 + static_cast<int>(pick(8)));
        if (can_call && pick(2) == 0) {
          os << "    call f" << (f + 1 + pick(static_cast<std::uint64_t>(nfun - f - 1))) << "\n";
          straight(words - 1, static_cast<int>(pick(4)));
        }
        os << "    load r12, [rbp-" << words * 8 << "]\n    add r12, 1\n    store [rbp-" << words * 8
           << "], r12\n    cmp r12, " << trips << "\n    jl L" << l << "\n";
        os << ".loop head=L" << l << " trips=" << trips << "\n";
      }
    }
    if (f == 0) {
      os << "    out rax\n    out rbx\n    halt\n";
    } else {
      os << "    add rsp, " << words * 8 << "\n    pop rbp\n    ret\n";
    }
    os << ".endfunc\n";
  }
  return os.str();
}

inline Program random_program(std::mt19937_64& rng, int max_functions = 4) {
  return parse_program(random_program_text(rng, max_functions));
}

}  // namespace ckpt::testing
