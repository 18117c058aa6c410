#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "streamkd/errors.hpp"
#include "streamkd/signal_store.hpp"
#include "streamkd/text_io.hpp"

using namespace streamkd;

TEST_CASE("append enforces the unique key and tracks the high-water step") {
  SignalStore store(2);
  store.append({100, 1, 0.5, 10});
  CHECK(store.size() == 1);
  CHECK(store.high_water_step() == 10);
  CHECK_THROWS_AS(store.append({100, 1, 0.7, 11}), store_error);
  store.append({100, 2, 0.7, 11});  // same sample, new model version is fine
  store.append({101, 1, -0.3, 8});  // lower emit step leaves high water alone
  CHECK(store.size() == 3);
  CHECK(store.high_water_step() == 11);
}

TEST_CASE("records become visible exactly lag steps after emission") {
  SignalStore store(2);
  store.append({7, 1, 1.25, 10});
  CHECK(store.lookup(7, 10) == nullptr);
  CHECK(store.lookup(7, 11) == nullptr);
  const SignalRecord* rec = store.lookup(7, 12);
  REQUIRE(rec != nullptr);
  CHECK(rec->t1_logit == 1.25);
  CHECK(store.lookup(8, 100) == nullptr);  // unknown sample
}

TEST_CASE("lookup prefers the freshest visible record") {
  SignalStore store(1);
  store.append({7, 1, 0.1, 10});
  store.append({7, 2, 0.2, 20});
  CHECK(store.lookup(7, 15)->t1_logit == 0.1);  // only the old one is visible
  CHECK(store.lookup(7, 21)->t1_logit == 0.2);  // now the re-score wins
  // same emit step: higher version breaks the tie
  store.append({9, 3, 0.3, 5});
  store.append({9, 4, 0.4, 5});
  CHECK(store.lookup(9, 6)->teacher_version == 4);
}

TEST_CASE("join succeeds exactly when the lag fits inside the retry budget") {
  JoinConfig cfg;
  cfg.max_retries = 3;
  cfg.retry_delay = 2;
  // signal emitted at the same step the join starts; budget covers 3*2 = 6
  for (std::uint64_t lag = 0; lag <= 7; ++lag) {
    SignalStore store(lag);
    store.append({42, 1, 0.9, 100});
    JoinedSignal j = store.join_one(42, 100, cfg);
    if (lag <= 6) {
      CHECK(j.found);
      // first probe k with 100 + 2k >= 100 + lag
      CHECK(j.retries_used == static_cast<int>((lag + 1) / 2));
      CHECK(j.record.t1_logit == 0.9);
    } else {
      CHECK_FALSE(j.found);
    }
  }
}

TEST_CASE("join with no retries is a single immediate probe") {
  SignalStore store(0);
  store.append({1, 1, 0.5, 10});
  JoinConfig cfg;
  cfg.max_retries = 0;
  CHECK(store.join_one(1, 10, cfg).found);
  CHECK(store.join_one(1, 9, cfg).found == false);
  cfg.max_retries = -1;
  CHECK_THROWS_AS(store.join_one(1, 10, cfg), config_error);
  cfg.max_retries = 2;
  cfg.retry_delay = 0;
  CHECK_THROWS_AS(store.join_one(1, 10, cfg), config_error);
}

TEST_CASE("batch join tallies matches, misses, and retries") {
  SignalStore store(3);
  store.append({1, 1, 0.1, 50});
  store.append({2, 1, 0.2, 50});
  JoinConfig cfg;
  cfg.max_retries = 4;
  cfg.retry_delay = 1;
  JoinStats stats;
  auto joined = store.join_batch({1, 2, 3}, 50, cfg, &stats);
  REQUIRE(joined.size() == 3);
  CHECK(joined[0].found);
  CHECK(joined[0].retries_used == 3);
  CHECK(joined[1].found);
  CHECK_FALSE(joined[2].found);
  CHECK(stats.requested == 3);
  CHECK(stats.matched == 2);
  CHECK(stats.missing == 1);
  CHECK(stats.total_retries == 6);
}

TEST_CASE("named cursors drain independently and never skip") {
  SignalStore store(1);
  for (std::uint64_t s = 0; s < 5; ++s)
    store.append({200 + s, 1, 0.1 * static_cast<double>(s), s});

  auto first = store.drain("student_a", 3);  // emit <= 2 is visible
  REQUIRE(first.size() == 3);
  CHECK(first[0].sample_id == 200);
  CHECK(first[2].sample_id == 202);
  CHECK(store.drain("student_a", 3).empty());  // nothing new
  auto rest = store.drain("student_a", 10);
  REQUIRE(rest.size() == 2);
  CHECK(rest[0].sample_id == 203);

  // an independent consumer starts from the beginning
  CHECK(store.drain("student_b", 10).size() == 5);
}

TEST_CASE("a pending record stalls the cursor instead of being skipped") {
  SignalStore store(1);
  store.append({1, 1, 0.5, 50});  // far in the future
  store.append({2, 1, 0.6, 1});   // already visible
  // the head of the log is not visible yet, so nothing drains
  CHECK(store.drain("c", 10).empty());
  auto all = store.drain("c", 51);
  REQUIRE(all.size() == 2);
  CHECK(all[0].sample_id == 1);
}

TEST_CASE("materialize and replay reproduce the store byte for byte") {
  SignalStore store(2);
  store.append({123456789, 3, 0.123456789123, 7});
  store.append({42, 1, -1.5e-7, 9});
  store.append({43, 2, 3.0, 12});
  std::string path = "signal_store_test.csv";
  store.materialize(path);
  std::string once = read_file(path);
  CHECK(once.substr(0, 44) == "sample_id,teacher_version,t1_logit,emit_step");

  SignalStore back = SignalStore::replay(path, 2);
  CHECK(back.size() == 3);
  CHECK(back.high_water_step() == 12);
  CHECK(back.lookup(42, 100)->t1_logit == -1.5e-7);
  // logit precision: replayed store prints the identical file
  std::string path2 = "signal_store_test2.csv";
  back.materialize(path2);
  CHECK(read_file(path2) == once);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("replay rejects corrupt input with the offending line") {
  std::string path = "signal_store_bad_test.csv";
  atomic_write_file(path,
                    "sample_id,teacher_version,t1_logit,emit_step\n"
                    "1,1,0.5,10\n"
                    "2,1,zzz,11\n");
  try {
    SignalStore::replay(path);
    FAIL("expected parse_error");
  } catch (const parse_error& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }

  atomic_write_file(path, "bogus header\n");
  CHECK_THROWS_AS(SignalStore::replay(path), parse_error);

  atomic_write_file(path,
                    "sample_id,teacher_version,t1_logit,emit_step\n"
                    "1,1,0.5\n");
  CHECK_THROWS_AS(SignalStore::replay(path), parse_error);

  // duplicate key in the file surfaces as a store error
  atomic_write_file(path,
                    "sample_id,teacher_version,t1_logit,emit_step\n"
                    "1,1,0.5,10\n"
                    "1,1,0.6,11\n");
  CHECK_THROWS_AS(SignalStore::replay(path), store_error);
  std::remove(path.c_str());
}

TEST_CASE("missing policy names round-trip and reject junk") {
  CHECK(parse_missing_policy("skip_distill") == MissingPolicy::skip_distill);
  CHECK(parse_missing_policy("drop_sample") == MissingPolicy::drop_sample);
  CHECK(format_missing_policy(MissingPolicy::skip_distill) == "skip_distill");
  CHECK(format_missing_policy(MissingPolicy::drop_sample) == "drop_sample");
  CHECK_THROWS_AS(parse_missing_policy("keep"), config_error);
}
