#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "ckpt/device.hpp"
#include "ckpt/error.hpp"
#include "ckpt/nvm.hpp"
#include "support.hpp"

using namespace ckpt;

namespace {

RegisterFile regs_with(std::uint64_t v) {
  RegisterFile r;
  r.gpr[0] = v;
  r.rip = v;
  return r;
}

CommitResult put(NvmStore& s, NvController& nvc, std::uint64_t rbp, std::size_t payload,
                 std::optional<std::size_t> interrupt = std::nullopt) {
  std::vector<std::uint8_t> bytes(payload, static_cast<std::uint8_t>(rbp));
  const AddressRange region{rbp - payload + 8, rbp + 7};
  return commit_checkpoint(s, nvc, bytes, region, rbp, 3, regs_with(rbp), interrupt);
}

FrameTag tag_of(const NvmStore& s, std::uint64_t epoch) { return s.find(epoch)->tag; }

std::set<std::uint64_t> valid_epochs(const NvmStore& s) {
  std::set<std::uint64_t> out;
  for (const auto* r : live_valid_set(s)) out.insert(r->tag.epoch_id);
  return out;
}

}  // namespace

TEST_CASE("one call checkpoint of the one_call program writes 188 headline bytes") {
  const Program p = load_program_file(testing::bench_path("fixtures/one_call.asm"));
  Device d(p, PolicyConfig::call());
  d.run();
  REQUIRE(d.store().commits() == 1);
  CHECK(d.store().bytes_written_headline() == 188);
  CHECK(d.store().bytes_written_total() == 40 + 188 + 1);
  CHECK(d.commit_log().at(0).headline_bytes == 188);
}

TEST_CASE("record footprint and byte accounting") {
  NvmStore s;
  NvController nvc;
  const auto r = put(s, nvc, 0xff00, 48);
  CHECK(r.complete);
  CHECK(r.epoch_id == 1);
  CHECK(r.bytes_written == 40 + 156 + 48 + 1);
  CHECK(r.headline_bytes == 156 + 48);
  CHECK(s.used_bytes() == r.bytes_written);
  CHECK(s.live_footprint() == r.bytes_written);
  CHECK(s.dead_footprint() == 0);
  CHECK(nvc.tags.entries() == std::vector<TagEntry>{{1, 0xff00}});
  CHECK(nvc.next_epoch == 2);
  const auto& tag = s.records()[0].tag;
  CHECK(RegisterFile::deserialize(tag.register_snapshot) == regs_with(0xff00));
  CHECK(tag.resume_rip == 3);
  CHECK_THROWS_AS(commit_checkpoint(s, nvc, std::vector<std::uint8_t>(3), AddressRange{0, 7}, 0, 0, RegisterFile{}),
                  Error);
}

TEST_CASE("interrupt at every byte offset: complete only with the valid tail") {
  const std::size_t payload = 32;
  const std::size_t footprint = 40 + 156 + payload + 1;
  for (std::size_t off = 0; off <= footprint + 2; ++off) {
    CAPTURE(off);
    NvmStore s;
    NvController nvc;
    put(s, nvc, 0xff00, payload);
    const auto r = put(s, nvc, 0xfe00, payload, off);
    const bool complete = off >= footprint;
    CHECK(r.complete == complete);
    CHECK(r.bytes_written == std::min(off, footprint));
    CHECK(s.records().back().durable_bytes == std::min(off, footprint));
    // header bytes are not headline; registers and payload are
    const std::size_t headline = off <= 40 ? 0 : std::min(off, footprint - 1) - 40;
    CHECK(r.headline_bytes == headline);
    CHECK(nvc.tags.entries().size() == (complete ? 2u : 1u));
    CHECK(valid_epochs(s) == (complete ? std::set<std::uint64_t>{1, 2} : std::set<std::uint64_t>{1}));
    CHECK(nvc.next_epoch == 3);
  }
}

TEST_CASE("rbp-match invalidates the matching frame and everything after it") {
  NvmStore s;
  NvController nvc;
  put(s, nvc, 0xa000, 16);  // 1: main
  put(s, nvc, 0x9000, 16);  // 2: g
  put(s, nvc, 0x8000, 16);  // 3: h
  CHECK_FALSE(apply_invalidation(nvc.tags, s, tag_of(s, 3)).has_value());
  put(s, nvc, 0x9000, 16);  // 4: g again, after h returned
  const auto sig = apply_invalidation(nvc.tags, s, tag_of(s, 4));
  REQUIRE(sig.has_value());
  CHECK(sig->invalid_epochs == std::vector<std::uint64_t>{2, 3});
  CHECK(valid_epochs(s) == std::set<std::uint64_t>{1, 4});
  CHECK(nvc.tags.entries() == std::vector<TagEntry>{{1, 0xa000}, {4, 0x9000}});
  CHECK(s.dead_footprint() == 2 * (40 + 156 + 16 + 1));

  const std::size_t before = s.used_bytes();
  const std::size_t freed = cleanup(s, *sig);
  CHECK(freed == 2 * (40 + 156 + 16 + 1));
  CHECK(s.used_bytes() == before - freed);
  CHECK(s.dead_footprint() == 0);
  CHECK(s.find(2) == nullptr);
}

TEST_CASE("rbp-match also drops incomplete records in range") {
  NvmStore s;
  NvController nvc;
  put(s, nvc, 0xa000, 16);       // 1
  put(s, nvc, 0x9000, 16, 100);  // 2: torn
  put(s, nvc, 0xa000, 16);       // 3
  const auto sig = apply_invalidation(nvc.tags, s, tag_of(s, 3));
  REQUIRE(sig.has_value());
  CHECK(sig->invalid_epochs == std::vector<std::uint64_t>{1, 2});
  CHECK(valid_epochs(s) == std::set<std::uint64_t>{3});
}

TEST_CASE("property: rbp-match agrees with a direct model of the rule") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    NvmStore s;
    NvController nvc;
    // model: epoch -> (rbp, complete, valid); retained = complete and valid, in epoch order
    struct Rec {
      std::uint64_t rbp;
      bool complete;
      bool valid;
    };
    std::map<std::uint64_t, Rec> model;
    for (int i = 0; i < 30; ++i) {
      const std::uint64_t rbp = 0x10000 - 0x100 * (rng() % 5);
      const bool torn = rng() % 6 == 0;
      const auto r = put(s, nvc, rbp, 8, torn ? std::optional<std::size_t>(rng() % 200) : std::nullopt);
      model[r.epoch_id] = {rbp, r.complete, true};
      if (!r.complete) continue;
      apply_invalidation(nvc.tags, s, tag_of(s, r.epoch_id));
      std::optional<std::uint64_t> match;
      for (const auto& [e, m] : model) {
        if (e < r.epoch_id && m.complete && m.valid && m.rbp == rbp) {
          match = e;
          break;
        }
      }
      if (match) {
        for (auto& [e, m] : model) {
          if (e >= *match && e < r.epoch_id) m.valid = false;
        }
      }
      std::set<std::uint64_t> expect;
      std::vector<TagEntry> expect_tags;
      for (const auto& [e, m] : model) {
        if (m.complete && m.valid) {
          expect.insert(e);
          expect_tags.push_back({e, m.rbp});
        }
      }
      REQUIRE(valid_epochs(s) == expect);
      REQUIRE(nvc.tags.entries() == expect_tags);
      // retained tags carry distinct rbps
      std::set<std::uint64_t> rbps;
      for (const auto& t : expect_tags) rbps.insert(t.rbp_value);
      REQUIRE(rbps.size() == expect_tags.size());
    }
  }
}

TEST_CASE("supersede_all keeps only the newest snapshot") {
  NvmStore s;
  NvController nvc;
  for (int i = 0; i < 4; ++i) put(s, nvc, 0xa000, 64);
  const auto sig = supersede_all(nvc.tags, s, tag_of(s, 4));
  REQUIRE(sig.has_value());
  CHECK(sig->invalid_epochs == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(valid_epochs(s) == std::set<std::uint64_t>{4});
  NvmStore one;
  NvController n1;
  put(one, n1, 0xa000, 8);
  CHECK_FALSE(supersede_all(n1.tags, one, tag_of(one, 1)).has_value());
}

TEST_CASE("interrupted cleanup reclaims a prefix and leaves the rest dead") {
  NvmStore s;
  NvController nvc;
  for (int i = 0; i < 6; ++i) put(s, nvc, 0xa000, 8);
  const auto sig = supersede_all(nvc.tags, s, tag_of(s, 6));
  REQUIRE(sig.has_value());
  const std::size_t each = 40 + 156 + 8 + 1;
  for (std::size_t k = 0; k <= 6; ++k) {
    NvmStore c = s;
    CHECK(cleanup(c, *sig, k) == std::min<std::size_t>(k, 5) * each);
    CHECK(c.records().size() == 6 - std::min<std::size_t>(k, 5));
    CHECK(valid_epochs(c) == std::set<std::uint64_t>{6});
    // finishing the cleanup later gives the same store as one full pass
    cleanup(c, *sig);
    NvmStore full = s;
    cleanup(full, *sig);
    CHECK(c == full);
  }
  // a clean signal naming a live record is a programming error
  CHECK_THROWS_AS(cleanup(s, CleanSignal{{6}}), Error);
}

TEST_CASE("NvmOverflow when a record does not fit") {
  NvmStore s(40 + 156 + 16 + 1);
  NvController nvc;
  put(s, nvc, 0xa000, 16);
  try {
    put(s, nvc, 0x9000, 16);
    FAIL("fit");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NvmOverflow);
  }
}

TEST_CASE("tag table rebuild from a store") {
  NvmStore s;
  NvController nvc;
  put(s, nvc, 0xa000, 8);
  put(s, nvc, 0x9000, 8);
  put(s, nvc, 0x8000, 8, 10);
  const NvController r = NvController::rebuild(s);
  CHECK(r.tags.entries() == nvc.tags.entries());
  CHECK(r.next_epoch == 4);
}

TEST_CASE("dump/load round trip") {
  const Program p = load_program_file(testing::bench_path("crc.asm"));
  Device d(p, PolicyConfig::incremental(2));
  PowerCut cut;
  cut.during_backup = PowerCut::Backup{5, 120};
  d.run(cut);
  const std::string text = dump_store(d.store());
  const NvmStore back = load_store(text);
  CHECK(back == d.store());
  CHECK(dump_store(back) == text);
  CHECK_THROWS_AS(load_store(std::string("{not json")), Error);
}
