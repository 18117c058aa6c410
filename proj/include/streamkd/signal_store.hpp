#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace streamkd {

/// One teacher emission: the raw logit the teacher produced for a sample
/// before updating on it, tagged with the emitting model version and the
/// stream step at which it was written.
struct SignalRecord {
  std::uint64_t sample_id = 0;
  std::uint32_t teacher_version = 0;
  double t1_logit = 0.0;
  std::uint64_t emit_step = 0;
};

/// Retry schedule for a join: probe at start, then up to max_retries more
/// probes spaced retry_delay steps apart.
struct JoinConfig {
  int max_retries = 3;
  std::uint64_t retry_delay = 1;
};

/// What the trainer does with a sample whose signal never arrives.
enum class MissingPolicy { skip_distill, drop_sample };

MissingPolicy parse_missing_policy(const std::string& name);
std::string format_missing_policy(MissingPolicy p);

struct JoinedSignal {
  bool found = false;
  SignalRecord record{};
  int retries_used = 0;  ///< 0 when the first probe already sees the record
};

struct JoinStats {
  std::size_t requested = 0;
  std::size_t matched = 0;
  std::size_t missing = 0;
  std::size_t total_retries = 0;
};

/// Append-only store for teacher signals. (sample_id, teacher_version) is
/// unique; a record becomes visible to readers once emit_step plus the
/// store's availability lag has passed. Consumers can either look up single
/// samples (with simulated retry timing) or drain the log through a named
/// cursor, which never skips a record.
class SignalStore {
 public:
  explicit SignalStore(std::uint64_t availability_lag = 2);

  std::uint64_t availability_lag() const { return lag_; }
  std::size_t size() const { return log_.size(); }
  /// Largest emit_step appended so far (0 when empty).
  std::uint64_t high_water_step() const { return high_water_; }

  /// Throws store_error if the (sample_id, teacher_version) key exists.
  void append(const SignalRecord& rec);

  /// Latest visible record for the sample at the given step: highest
  /// emit_step wins, then highest teacher_version. Null when nothing for the
  /// sample is visible yet.
  const SignalRecord* lookup(std::uint64_t sample_id,
                             std::uint64_t at_step) const;

  /// Probes lookup at start_step, start_step + retry_delay, ... until a
  /// record shows up or max_retries extra probes are spent.
  JoinedSignal join_one(std::uint64_t sample_id, std::uint64_t start_step,
                        const JoinConfig& cfg) const;

  std::vector<JoinedSignal> join_batch(const std::vector<std::uint64_t>& ids,
                                       std::uint64_t start_step,
                                       const JoinConfig& cfg,
                                       JoinStats* stats = nullptr) const;

  /// Returns the records the named consumer has not seen yet, in append
  /// order, stopping at the first record not yet visible at `at_step` so the
  /// cursor never jumps over a pending emission.
  std::vector<SignalRecord> drain(const std::string& consumer,
                                  std::uint64_t at_step);

  /// Writes "sample_id,teacher_version,t1_logit,emit_step" lines in append
  /// order, atomically. Logits carry full precision: replaying the file
  /// reproduces every stored record bit for bit.
  void materialize(const std::string& path) const;

  /// Rebuilds a store from a materialized file. Parse failures carry the
  /// 1-based line number; duplicate keys throw store_error.
  static SignalStore replay(const std::string& path,
                            std::uint64_t availability_lag = 2);

 private:
  bool visible_at(const SignalRecord& rec, std::uint64_t at_step) const {
    return rec.emit_step + lag_ <= at_step;
  }

  std::uint64_t lag_;
  std::uint64_t high_water_ = 0;
  std::vector<SignalRecord> log_;
  std::map<std::pair<std::uint64_t, std::uint32_t>, std::size_t> by_key_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> by_sample_;
  std::unordered_map<std::string, std::size_t> cursors_;
};

}  // namespace streamkd
