#include "ckpt/nvm.hpp"

#include <algorithm>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "ckpt/error.hpp"

namespace ckpt {

namespace {

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

std::vector<std::uint8_t> from_hex(const std::string& s) {
  if (s.size() % 2) throw Error(ErrorKind::CorruptRecord, "odd-length hex string");
  auto nibble = [](char c) -> std::uint8_t {
    if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
    throw Error(ErrorKind::CorruptRecord, std::string("bad hex digit '") + c + "'");
  };
  std::vector<std::uint8_t> out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(s[2 * i]) << 4 | nibble(s[2 * i + 1]));
  }
  return out;
}

}  // namespace

NvmStore::NvmStore(std::size_t capacity_bytes) : capacity_(capacity_bytes) {
  if (capacity_bytes == 0) throw Error(ErrorKind::InvalidArgument, "NVM capacity must be positive");
}

const CheckpointRecord* NvmStore::find(std::uint64_t epoch) const {
  auto it = std::lower_bound(records_.begin(), records_.end(), epoch,
                             [](const CheckpointRecord& r, std::uint64_t e) { return r.tag.epoch_id < e; });
  if (it == records_.end() || it->tag.epoch_id != epoch) return nullptr;
  return &*it;
}

std::size_t NvmStore::live_footprint() const {
  std::size_t n = 0;
  for (const auto& r : records_) {
    if (r.complete() && r.tag.valid) n += r.footprint();
  }
  return n;
}

std::size_t NvmStore::dead_footprint() const { return used_ - live_footprint(); }

void NvmStore::mark_invalid(std::uint64_t epoch) {
  auto* r = const_cast<CheckpointRecord*>(find(epoch));
  if (r) r->tag.valid = false;
}

void NvmStore::append(CheckpointRecord record, std::size_t headline_bytes) {
  if (!records_.empty() && record.tag.epoch_id <= records_.back().tag.epoch_id) {
    throw Error(ErrorKind::CorruptRecord, "epochs must increase in append order");
  }
  if (record.footprint() > free_bytes()) {
    throw Error(ErrorKind::NvmOverflow, "record of " + std::to_string(record.footprint()) + " bytes does not fit in " +
                                            std::to_string(free_bytes()) + " free bytes of NVM");
  }
  used_ += record.footprint();
  written_total_ += record.durable_bytes;
  written_headline_ += headline_bytes;
  ++commits_;
  records_.push_back(std::move(record));
}

std::size_t NvmStore::reclaim(std::uint64_t epoch) {
  auto it = std::lower_bound(records_.begin(), records_.end(), epoch,
                             [](const CheckpointRecord& r, std::uint64_t e) { return r.tag.epoch_id < e; });
  if (it == records_.end() || it->tag.epoch_id != epoch) return 0;
  const std::size_t fp = it->footprint();
  used_ -= fp;
  records_.erase(it);
  return fp;
}

void NvmStore::restore_counters(std::uint64_t total, std::uint64_t headline, std::uint64_t commits) {
  written_total_ = total;
  written_headline_ = headline;
  commits_ = commits;
}

void TagTable::remove(std::uint64_t epoch) {
  std::erase_if(entries_, [&](const TagEntry& e) { return e.epoch_id == epoch; });
}

std::optional<TagEntry> TagTable::find_rbp(std::uint64_t rbp) const {
  for (const auto& e : entries_) {
    if (e.rbp_value == rbp) return e;
  }
  return std::nullopt;
}

NvController NvController::rebuild(const NvmStore& store) {
  NvController nvc;
  for (const auto* r : live_valid_set(store)) nvc.tags.add({r->tag.epoch_id, r->tag.rbp_value});
  nvc.next_epoch = store.max_epoch() + 1;
  return nvc;
}

CommitResult commit_checkpoint(NvmStore& store, NvController& nvc, std::span<const std::uint8_t> region_bytes,
                               AddressRange region, std::uint64_t rbp, std::uint64_t resume_rip,
                               const RegisterFile& registers, std::optional<std::size_t> interrupt) {
  if (region.hi < region.lo || region.size() != region_bytes.size()) {
    throw Error(ErrorKind::InvalidArgument, "region bytes do not match the region bounds");
  }
  CheckpointRecord rec;
  rec.tag.epoch_id = std::max(nvc.next_epoch, store.max_epoch() + 1);
  rec.tag.valid = true;
  rec.tag.rbp_value = rbp;
  rec.tag.region = region;
  rec.tag.resume_rip = resume_rip;
  rec.tag.register_snapshot = registers.serialize();
  rec.payload.assign(region_bytes.begin(), region_bytes.end());

  const std::size_t footprint = rec.footprint();
  const std::size_t written = interrupt ? std::min(*interrupt, footprint) : footprint;
  rec.durable_bytes = written;

  const std::size_t body_end = kTagHeaderBytes + kRegisterImageBytes + rec.payload.size();
  const std::size_t headline = written <= kTagHeaderBytes ? 0 : std::min(written, body_end) - kTagHeaderBytes;

  CommitResult result;
  result.epoch_id = rec.tag.epoch_id;
  result.complete = rec.complete();
  result.bytes_written = written;
  result.headline_bytes = headline;

  store.append(std::move(rec), headline);
  nvc.next_epoch = result.epoch_id + 1;
  if (result.complete) nvc.tags.add({result.epoch_id, rbp});
  return result;
}

namespace {
CleanSignal invalidate_range(TagTable& tags, NvmStore& store, std::uint64_t from, std::uint64_t to_exclusive) {
  CleanSignal signal;
  for (const auto& r : store.records()) {
    const auto e = r.tag.epoch_id;
    if (e >= from && e < to_exclusive) signal.invalid_epochs.push_back(e);
  }
  for (auto e : signal.invalid_epochs) {
    store.mark_invalid(e);
    tags.remove(e);
  }
  return signal;
}
}  // namespace

std::optional<CleanSignal> apply_invalidation(TagTable& tags, NvmStore& store, const FrameTag& new_tag) {
  std::optional<TagEntry> match;
  for (const auto& e : tags.entries()) {
    if (e.rbp_value == new_tag.rbp_value && e.epoch_id < new_tag.epoch_id) {
      match = e;
      break;
    }
  }
  if (!match) return std::nullopt;
  return invalidate_range(tags, store, match->epoch_id, new_tag.epoch_id);
}

std::optional<CleanSignal> supersede_all(TagTable& tags, NvmStore& store, const FrameTag& new_tag) {
  CleanSignal s = invalidate_range(tags, store, 0, new_tag.epoch_id);
  if (s.empty()) return std::nullopt;
  return s;
}

std::size_t cleanup(NvmStore& store, const CleanSignal& signal, std::optional<std::size_t> interrupt) {
  std::size_t reclaimed = 0;
  std::size_t count = 0;
  for (auto e : signal.invalid_epochs) {
    if (interrupt && count >= *interrupt) break;
    const auto* r = store.find(e);
    if (!r) continue;
    if (r->tag.valid && r->complete()) {
      throw Error(ErrorKind::InvalidArgument, "clean signal lists valid epoch " + std::to_string(e));
    }
    reclaimed += store.reclaim(e);
    ++count;
  }
  return reclaimed;
}

std::vector<const CheckpointRecord*> live_valid_set(const NvmStore& store) {
  std::vector<const CheckpointRecord*> out;
  for (const auto& r : store.records()) {
    if (r.complete() && r.tag.valid) out.push_back(&r);
  }
  return out;
}

void dump_store(const NvmStore& store, std::ostream& out) {
  nlohmann::json header = {
      {"type", "store"},
      {"capacity", store.capacity_bytes()},
      {"bytes_written_total", store.bytes_written_total()},
      {"bytes_written_headline", store.bytes_written_headline()},
      {"commits", store.commits()},
  };
  out << header.dump() << "\n";
  for (const auto& r : store.records()) {
    nlohmann::json j = {
        {"type", "record"},
        {"epoch", r.tag.epoch_id},
        {"valid", r.tag.valid},
        {"complete", r.complete()},
        {"rbp", r.tag.rbp_value},
        {"lo", r.tag.region.lo},
        {"hi", r.tag.region.hi},
        {"resume_rip", r.tag.resume_rip},
        {"durable_bytes", r.durable_bytes},
        {"registers", to_hex(r.tag.register_snapshot)},
        {"payload", to_hex(r.payload)},
    };
    out << j.dump() << "\n";
  }
}

std::string dump_store(const NvmStore& store) {
  std::ostringstream os;
  dump_store(store, os);
  return os.str();
}

NvmStore load_store(std::istream& in) {
  std::string line;
  std::optional<NvmStore> store;
  std::uint64_t total = 0, headline = 0, commits = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::CorruptRecord, "line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto type = j.value("type", "");
    if (type == "store") {
      store.emplace(j.at("capacity").get<std::size_t>());
      total = j.at("bytes_written_total").get<std::uint64_t>();
      headline = j.at("bytes_written_headline").get<std::uint64_t>();
      commits = j.at("commits").get<std::uint64_t>();
    } else if (type == "record") {
      if (!store) throw Error(ErrorKind::CorruptRecord, "record before store header");
      CheckpointRecord r;
      r.tag.epoch_id = j.at("epoch").get<std::uint64_t>();
      r.tag.valid = j.at("valid").get<bool>();
      r.tag.rbp_value = j.at("rbp").get<std::uint64_t>();
      r.tag.region = {j.at("lo").get<std::uint64_t>(), j.at("hi").get<std::uint64_t>()};
      r.tag.resume_rip = j.at("resume_rip").get<std::uint64_t>();
      auto regs = from_hex(j.at("registers").get<std::string>());
      if (regs.size() != kRegisterImageBytes) throw Error(ErrorKind::CorruptRecord, "bad register image size");
      std::copy(regs.begin(), regs.end(), r.tag.register_snapshot.begin());
      r.payload = from_hex(j.at("payload").get<std::string>());
      r.durable_bytes = j.at("durable_bytes").get<std::size_t>();
      if (r.durable_bytes > r.footprint()) throw Error(ErrorKind::CorruptRecord, "durable bytes exceed footprint");
      store->append(std::move(r), 0);
    } else {
      throw Error(ErrorKind::CorruptRecord, "line " + std::to_string(line_no) + ": unknown type '" + type + "'");
    }
  }
  if (!store) throw Error(ErrorKind::CorruptRecord, "missing store header");
  store->restore_counters(total, headline, commits);
  return std::move(*store);
}

NvmStore load_store(const std::string& text) {
  std::istringstream is(text);
  return load_store(is);
}

}  // namespace ckpt
