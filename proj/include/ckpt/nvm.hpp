#pragma once

// Non-volatile checkpoint store, the NV controller's tag table, valid-tail
// commit, rbp-match invalidation and the cleanup controller.
//
// Record layout (bytes, in write order):
//   tag header   40  epoch, rbp, region lo, region hi, resume rip (u64 each)
//   registers   156  RegisterFile::serialize()
//   payload       n  stack bytes [lo, hi]
//   valid tail    1
// A record is complete iff its valid tail was written.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ckpt/machine.hpp"

namespace ckpt {

inline constexpr std::size_t kTagHeaderBytes = 40;
inline constexpr std::size_t kValidTailBytes = 1;
inline constexpr std::size_t kRegisterImageBytes = RegisterFile::kSerializedSize;
inline constexpr std::size_t kDefaultNvmCapacity = 1 << 20;

struct FrameTag {
  std::uint64_t epoch_id = 0;
  bool valid = true;
  std::uint64_t rbp_value = 0;
  AddressRange region;
  std::uint64_t resume_rip = 0;
  RegisterFile::Image register_snapshot{};

  bool operator==(const FrameTag&) const = default;
};

struct CheckpointRecord {
  FrameTag tag;
  std::vector<std::uint8_t> payload;
  /// Bytes of this record that reached NVM before power was lost.
  std::size_t durable_bytes = 0;

  std::size_t footprint() const { return kTagHeaderBytes + kRegisterImageBytes + payload.size() + kValidTailBytes; }
  bool valid_tail() const { return durable_bytes == footprint(); }
  bool complete() const { return valid_tail(); }

  bool operator==(const CheckpointRecord&) const = default;
};

class NvmStore {
 public:
  explicit NvmStore(std::size_t capacity_bytes = kDefaultNvmCapacity);

  std::size_t capacity_bytes() const { return capacity_; }
  std::size_t used_bytes() const { return used_; }
  std::size_t free_bytes() const { return capacity_ - used_; }
  std::uint64_t bytes_written_total() const { return written_total_; }
  /// Register image + payload bytes only (no tag header / tail).
  std::uint64_t bytes_written_headline() const { return written_headline_; }
  std::uint64_t commits() const { return commits_; }

  /// Records in append (= epoch) order, including invalid and incomplete ones.
  const std::vector<CheckpointRecord>& records() const { return records_; }
  const CheckpointRecord* find(std::uint64_t epoch) const;
  std::uint64_t max_epoch() const { return records_.empty() ? 0 : records_.back().tag.epoch_id; }

  /// Footprint of complete, valid records.
  std::size_t live_footprint() const;
  /// Footprint of records that are invalid or incomplete but not reclaimed.
  std::size_t dead_footprint() const;

  /// Clears the valid flag of a stored record (no-op if already reclaimed).
  void mark_invalid(std::uint64_t epoch);

  bool operator==(const NvmStore&) const = default;

  // Used by the commit / cleanup / load paths below.
  void append(CheckpointRecord record, std::size_t headline_bytes);
  std::size_t reclaim(std::uint64_t epoch);
  void restore_counters(std::uint64_t total, std::uint64_t headline, std::uint64_t commits);

 private:
  std::size_t capacity_;
  std::size_t used_ = 0;
  std::uint64_t written_total_ = 0;
  std::uint64_t written_headline_ = 0;
  std::uint64_t commits_ = 0;
  std::vector<CheckpointRecord> records_;
};

struct TagEntry {
  std::uint64_t epoch_id = 0;
  std::uint64_t rbp_value = 0;
  bool operator==(const TagEntry&) const = default;
};

/// Tags retained by the NV controller: one per complete, valid record.
class TagTable {
 public:
  const std::vector<TagEntry>& entries() const { return entries_; }
  void add(TagEntry e) { entries_.push_back(e); }
  void remove(std::uint64_t epoch);
  std::optional<TagEntry> find_rbp(std::uint64_t rbp) const;
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<TagEntry> entries_;
};

struct NvController {
  TagTable tags;
  std::uint64_t next_epoch = 1;

  /// Rebuilds the tag table and epoch counter from a store after power-up.
  static NvController rebuild(const NvmStore& store);
};

struct CommitResult {
  std::uint64_t epoch_id = 0;
  bool complete = false;
  std::size_t bytes_written = 0;
  std::size_t headline_bytes = 0;
};

/// Writes header, registers, payload, then the valid tail.  With
/// `interrupt` set, writing stops after that many bytes; offsets at or past
/// the footprint leave a complete record.  Throws NvmOverflow when the
/// record does not fit.
CommitResult commit_checkpoint(NvmStore& store, NvController& nvc, std::span<const std::uint8_t> region_bytes,
                               AddressRange region, std::uint64_t rbp, std::uint64_t resume_rip,
                               const RegisterFile& registers, std::optional<std::size_t> interrupt = std::nullopt);

struct CleanSignal {
  std::vector<std::uint64_t> invalid_epochs;
  bool empty() const { return invalid_epochs.empty(); }
};

/// rbp-match rule: if a retained tag s has the new tag's rbp, every record
/// with s.epoch <= epoch < new.epoch becomes invalid and leaves the table.
std::optional<CleanSignal> apply_invalidation(TagTable& tags, NvmStore& store, const FrameTag& new_tag);

/// Whole-stack snapshots make every earlier record redundant.
std::optional<CleanSignal> supersede_all(TagTable& tags, NvmStore& store, const FrameTag& new_tag);

/// Reclaims the listed records (at most `interrupt` of them).  Returns the
/// footprint released.  Cleanup writes are not counted.
std::size_t cleanup(NvmStore& store, const CleanSignal& signal, std::optional<std::size_t> interrupt = std::nullopt);

/// Complete, valid records in epoch order.
std::vector<const CheckpointRecord*> live_valid_set(const NvmStore& store);

/// JSON-lines dump: a store header line followed by one line per record.
void dump_store(const NvmStore& store, std::ostream& out);
std::string dump_store(const NvmStore& store);
NvmStore load_store(std::istream& in);
NvmStore load_store(const std::string& text);

}  // namespace ckpt
