#include "streamkd/signal_store.hpp"

#include <algorithm>
#include <cstdio>

#include "streamkd/errors.hpp"
#include "streamkd/text_io.hpp"

namespace streamkd {

MissingPolicy parse_missing_policy(const std::string& name) {
  if (name == "skip_distill") return MissingPolicy::skip_distill;
  if (name == "drop_sample") return MissingPolicy::drop_sample;
  throw config_error("unknown missing policy '" + name +
                     "' (want skip_distill or drop_sample)");
}

std::string format_missing_policy(MissingPolicy p) {
  return p == MissingPolicy::skip_distill ? "skip_distill" : "drop_sample";
}

SignalStore::SignalStore(std::uint64_t availability_lag)
    : lag_(availability_lag) {}

void SignalStore::append(const SignalRecord& rec) {
  auto key = std::make_pair(rec.sample_id, rec.teacher_version);
  if (by_key_.count(key))
    throw store_error("duplicate signal for sample " +
                      std::to_string(rec.sample_id) + " version " +
                      std::to_string(rec.teacher_version));
  by_key_[key] = log_.size();
  by_sample_[rec.sample_id].push_back(log_.size());
  high_water_ = std::max(high_water_, rec.emit_step);
  log_.push_back(rec);
}

const SignalRecord* SignalStore::lookup(std::uint64_t sample_id,
                                        std::uint64_t at_step) const {
  auto it = by_sample_.find(sample_id);
  if (it == by_sample_.end()) return nullptr;
  const SignalRecord* best = nullptr;
  for (std::size_t idx : it->second) {
    const SignalRecord& rec = log_[idx];
    if (!visible_at(rec, at_step)) continue;
    if (!best || rec.emit_step > best->emit_step ||
        (rec.emit_step == best->emit_step &&
         rec.teacher_version > best->teacher_version))
      best = &rec;
  }
  return best;
}

JoinedSignal SignalStore::join_one(std::uint64_t sample_id,
                                   std::uint64_t start_step,
                                   const JoinConfig& cfg) const {
  if (cfg.max_retries < 0) throw config_error("join: max_retries < 0");
  if (cfg.retry_delay == 0 && cfg.max_retries > 0)
    throw config_error("join: retry_delay must be positive when retrying");
  JoinedSignal out;
  for (int k = 0; k <= cfg.max_retries; ++k) {
    std::uint64_t probe = start_step + static_cast<std::uint64_t>(k) * cfg.retry_delay;
    if (const SignalRecord* rec = lookup(sample_id, probe)) {
      out.found = true;
      out.record = *rec;
      out.retries_used = k;
      return out;
    }
  }
  out.retries_used = cfg.max_retries;
  return out;
}

std::vector<JoinedSignal> SignalStore::join_batch(
    const std::vector<std::uint64_t>& ids, std::uint64_t start_step,
    const JoinConfig& cfg, JoinStats* stats) const {
  std::vector<JoinedSignal> out;
  out.reserve(ids.size());
  for (std::uint64_t id : ids) {
    out.push_back(join_one(id, start_step, cfg));
    if (stats) {
      ++stats->requested;
      if (out.back().found) {
        ++stats->matched;
        stats->total_retries += static_cast<std::size_t>(out.back().retries_used);
      } else {
        ++stats->missing;
      }
    }
  }
  return out;
}

std::vector<SignalRecord> SignalStore::drain(const std::string& consumer,
                                             std::uint64_t at_step) {
  std::size_t& cursor = cursors_[consumer];
  std::vector<SignalRecord> out;
  while (cursor < log_.size() && visible_at(log_[cursor], at_step)) {
    out.push_back(log_[cursor]);
    ++cursor;
  }
  return out;
}

namespace {
const char kStoreHeader[] = "sample_id,teacher_version,t1_logit,emit_step";
}

void SignalStore::materialize(const std::string& path) const {
  std::string out(kStoreHeader);
  out.push_back('\n');
  for (const auto& rec : log_) {
    out += std::to_string(rec.sample_id);
    out.push_back(',');
    out += std::to_string(rec.teacher_version);
    out.push_back(',');
    // full precision: a replayed store must carry bit-identical logits, since
    // downstream training consumes them verbatim
    char logit[40];
    std::snprintf(logit, sizeof(logit), "%.17g", rec.t1_logit);
    out += logit;
    out.push_back(',');
    out += std::to_string(rec.emit_step);
    out.push_back('\n');
  }
  atomic_write_file(path, out);
}

SignalStore SignalStore::replay(const std::string& path,
                                std::uint64_t availability_lag) {
  std::string content = read_file(path);
  auto lines = split(content, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines[0] != kStoreHeader)
    throw parse_error(path + ":1: expected header '" +
                      std::string(kStoreHeader) + "'");

  SignalStore store(availability_lag);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto fields = split(lines[i], ',');
    if (fields.size() != 4)
      throw parse_error(path + ":" + std::to_string(i + 1) +
                        ": expected 4 fields, got " +
                        std::to_string(fields.size()));
    SignalRecord rec;
    try {
      long long id = parse_int(fields[0]);
      long long version = parse_int(fields[1]);
      long long emit = parse_int(fields[3]);
      if (id < 0 || version < 0 || emit < 0)
        throw parse_error("fields must be non-negative");
      rec.sample_id = static_cast<std::uint64_t>(id);
      rec.teacher_version = static_cast<std::uint32_t>(version);
      rec.emit_step = static_cast<std::uint64_t>(emit);
      rec.t1_logit = parse_real(fields[2]);
    } catch (const parse_error& e) {
      throw parse_error(path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    store.append(rec);
  }
  return store;
}

}  // namespace streamkd
