#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "streamkd/datagen.hpp"
#include "streamkd/errors.hpp"
#include "streamkd/text_io.hpp"

using namespace streamkd;

namespace {

GeneratorConfig basic_config() {
  GeneratorConfig cfg;
  cfg.feature_dim = 8;
  cfg.base_weights = {1.2, -0.8, 0.5, 0.9, -1.1, 0.3, -0.4, 0.7};
  cfg.positive_rate_target = 0.3;
  cfg.seed = 42;
  return cfg;
}

double mean_label(const std::vector<InteractionEvent>& events) {
  double s = 0.0;
  for (const auto& e : events) s += e.label;
  return s / static_cast<double>(events.size());
}

}  // namespace

TEST_CASE("same config, step, and count reproduce the batch bit for bit") {
  GeneratorConfig cfg = basic_config();
  auto a = generate_events(cfg, 17, 500);
  auto b = generate_events(cfg, 17, 500);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].sample_id == b[i].sample_id);
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].true_posterior == b[i].true_posterior);
    for (std::size_t d = 0; d < a[i].features.size(); ++d)
      CHECK(a[i].features[d] == b[i].features[d]);
  }
  // different steps draw different features
  auto c = generate_events(cfg, 18, 500);
  CHECK(a[0].features[0] != c[0].features[0]);
}

TEST_CASE("degenerate config hits its positive rate within binomial noise") {
  GeneratorConfig cfg;
  cfg.feature_dim = 1;
  cfg.base_weights = {0.0};
  cfg.positive_rate_target = 0.5;
  cfg.seed = 7;
  auto events = generate_events(cfg, 0, 100000);
  double rate = mean_label(events);
  CHECK(std::abs(rate - 0.5) <= 3.0 * std::sqrt(0.25 / 100000.0));
}

TEST_CASE("intercept solving tracks the target for a loaded config") {
  GeneratorConfig cfg = basic_config();
  cfg.interaction_strength = 0.8;
  cfg.interaction_pairs = 6;
  auto events = generate_events(cfg, 3, 100000);
  // probe-sample intercept tolerance plus binomial noise
  CHECK(std::abs(mean_label(events) - 0.3) <= 0.015);

  double mean_posterior = 0.0;
  for (const auto& e : events) mean_posterior += e.true_posterior;
  mean_posterior /= static_cast<double>(events.size());
  CHECK(std::abs(mean_posterior - 0.3) <= 0.012);
}

TEST_CASE("zero drift keeps weights constant over a long horizon") {
  GeneratorConfig cfg = basic_config();
  Generator gen(cfg);
  auto w0 = gen.weights_at(0);
  auto w1m = gen.weights_at(1000000);
  for (std::size_t i = 0; i < w0.size(); ++i) CHECK(w0[i] == w1m[i]);

  // distributions agree across steps: two-sample mean test on the posterior
  auto a = gen.events(0, 20000);
  auto b = gen.events(1000000, 20000);
  double ma = 0.0, mb = 0.0, va = 0.0, vb = 0.0;
  for (const auto& e : a) ma += e.true_posterior;
  for (const auto& e : b) mb += e.true_posterior;
  ma /= 20000.0;
  mb /= 20000.0;
  for (const auto& e : a) va += (e.true_posterior - ma) * (e.true_posterior - ma);
  for (const auto& e : b) vb += (e.true_posterior - mb) * (e.true_posterior - mb);
  va /= 19999.0;
  vb /= 19999.0;
  CHECK(std::abs(ma - mb) <= 3.0 * std::sqrt(va / 20000.0 + vb / 20000.0));
}

TEST_CASE("drift rotates without changing the weight norm when unperturbed") {
  GeneratorConfig cfg = basic_config();
  cfg.drift_rate = 0.001;
  cfg.drift_start_step = 100;
  Generator gen(cfg);

  auto base = gen.weights_at(100);  // at drift start nothing has moved yet
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == cfg.base_weights[i]);

  auto moved = gen.weights_at(1500);
  double n0 = 0.0, n1 = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    n0 += base[i] * base[i];
    n1 += moved[i] * moved[i];
    diff += std::abs(moved[i] - base[i]);
  }
  CHECK(diff > 0.1);
  CHECK(std::abs(std::sqrt(n0) - std::sqrt(n1)) <= 1e-12);
}

TEST_CASE("stored posterior matches an independent recomputation") {
  GeneratorConfig cfg = basic_config();
  cfg.interaction_strength = 0.7;
  cfg.interaction_pairs = 5;
  Generator gen(cfg);
  auto events = gen.events(9, 200);
  auto w = gen.weights_at(9);
  double c = gen.intercept_at(9);
  const auto& pairs = gen.interaction_index_pairs();
  const auto& coeffs = gen.interaction_coefficients();
  REQUIRE(pairs.size() == 5);
  for (const auto& e : events) {
    double z = c;
    for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * e.features[i];
    for (std::size_t k = 0; k < pairs.size(); ++k)
      z += coeffs[k] * e.features[pairs[k].first] * e.features[pairs[k].second];
    CHECK(oracle_posterior(e) == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
  }
}

TEST_CASE("labels are Bernoulli draws of the stored posterior") {
  GeneratorConfig cfg = basic_config();
  auto events = generate_events(cfg, 2, 200000);
  // bucket by posterior and compare empirical rates
  for (double lo = 0.0; lo < 1.0; lo += 0.2) {
    double hi = lo + 0.2;
    double sum_p = 0.0, sum_y = 0.0;
    std::size_t n = 0;
    for (const auto& e : events) {
      if (e.true_posterior >= lo && e.true_posterior < hi) {
        sum_p += e.true_posterior;
        sum_y += e.label;
        ++n;
      }
    }
    if (n < 500) continue;
    double expect = sum_p / static_cast<double>(n);
    double got = sum_y / static_cast<double>(n);
    CHECK(std::abs(got - expect) <= 4.0 * std::sqrt(0.25 / static_cast<double>(n)));
  }
}

TEST_CASE("traffic sources follow their configured shares") {
  GeneratorConfig cfg = basic_config();
  cfg.traffic_sources = {{"organic", 0.7}, {"paid", 0.3}};
  auto events = generate_events(cfg, 0, 50000);
  std::size_t paid = 0;
  for (const auto& e : events) paid += e.source == "paid";
  double share = static_cast<double>(paid) / 50000.0;
  CHECK(std::abs(share - 0.3) <= 3.0 * std::sqrt(0.3 * 0.7 / 50000.0));
}

TEST_CASE("sampling keeps one negative in r_s and weights it back") {
  GeneratorConfig cfg = basic_config();
  auto events = generate_events(cfg, 1, 80000);
  std::size_t negatives = 0;
  for (const auto& e : events) negatives += e.label == 0;

  SamplingConfig s;
  s.r_s = 4.0;
  SampledBatch batch = apply_sampling(events, s, 123);

  std::size_t kept_neg = 0, kept_pos = 0;
  for (std::size_t i = 0; i < batch.kept.size(); ++i) {
    if (batch.kept[i].label == 0) {
      ++kept_neg;
      CHECK(batch.weights[i] == 4.0);
    } else {
      ++kept_pos;
      CHECK(batch.weights[i] == 1.0);
    }
  }
  CHECK(batch.dropped_positives == 0);
  CHECK(kept_pos + kept_neg == batch.kept.size());
  double expect = static_cast<double>(negatives) / 4.0;
  CHECK(std::abs(static_cast<double>(kept_neg) - expect) <=
        3.0 * std::sqrt(static_cast<double>(negatives) * 0.25 * 0.75));
}

TEST_CASE("per-source positive retention and missing-source errors") {
  GeneratorConfig cfg = basic_config();
  cfg.traffic_sources = {{"organic", 0.5}, {"paid", 0.5}};
  cfg.positive_rate_target = 0.5;
  auto events = generate_events(cfg, 4, 60000);

  SamplingConfig s;
  s.p_x_by_source = {{"organic", 1.0}, {"paid", 0.6}};
  SampledBatch batch = apply_sampling(events, s, 9);

  std::size_t paid_pos_all = 0, paid_pos_kept = 0;
  for (const auto& e : events) paid_pos_all += e.label == 1 && e.source == "paid";
  for (std::size_t i = 0; i < batch.kept.size(); ++i) {
    const auto& e = batch.kept[i];
    if (e.label == 1 && e.source == "paid") {
      ++paid_pos_kept;
      CHECK(batch.weights[i] == doctest::Approx(1.0 / 0.6).epsilon(1e-12));
    }
  }
  double expect = 0.6 * static_cast<double>(paid_pos_all);
  CHECK(std::abs(static_cast<double>(paid_pos_kept) - expect) <=
        3.0 * std::sqrt(static_cast<double>(paid_pos_all) * 0.6 * 0.4));

  SamplingConfig incomplete;
  incomplete.p_x_by_source = {{"organic", 1.0}};  // paid missing
  CHECK_THROWS_AS(apply_sampling(events, incomplete, 9), config_error);
}

TEST_CASE("thinning does not distort features given the label") {
  GeneratorConfig cfg = basic_config();
  auto events = generate_events(cfg, 6, 120000);
  SamplingConfig s;
  s.r_s = 5.0;
  SampledBatch batch = apply_sampling(events, s, 77);

  // compare per-coordinate feature means of kept negatives vs all negatives
  std::vector<double> mean_all(cfg.feature_dim, 0.0), mean_kept(cfg.feature_dim, 0.0);
  std::size_t n_all = 0, n_kept = 0;
  for (const auto& e : events)
    if (e.label == 0) {
      ++n_all;
      for (std::size_t d = 0; d < cfg.feature_dim; ++d) mean_all[d] += e.features[d];
    }
  for (const auto& e : batch.kept)
    if (e.label == 0) {
      ++n_kept;
      for (std::size_t d = 0; d < cfg.feature_dim; ++d) mean_kept[d] += e.features[d];
    }
  REQUIRE(n_kept > 1000);
  for (std::size_t d = 0; d < cfg.feature_dim; ++d) {
    double diff = mean_kept[d] / n_kept - mean_all[d] / n_all;
    double se = std::sqrt(1.0 / n_kept + 1.0 / n_all);  // unit feature variance
    CHECK(std::abs(diff) <= 3.0 * se);
  }
}

TEST_CASE("sample ids are unique and encode the step") {
  GeneratorConfig cfg = basic_config();
  std::set<std::uint64_t> ids;
  for (std::uint64_t step : {0ull, 1ull, 2ull}) {
    for (const auto& e : generate_events(cfg, step, 1000)) {
      CHECK(ids.insert(e.sample_id).second);
      CHECK((e.sample_id >> 20) == step);
    }
  }
  CHECK_THROWS_AS(generate_events(cfg, 0, 1 << 20), config_error);
}

TEST_CASE("config validation rejects bad shares and ranges") {
  GeneratorConfig cfg = basic_config();
  cfg.positive_rate_target = 0.0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = basic_config();
  cfg.traffic_sources = {{"a", 0.6}, {"b", 0.6}};
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = basic_config();
  cfg.base_weights = {1.0};
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = basic_config();
  cfg.interaction_strength = 0.5;
  cfg.feature_dim = 1;
  cfg.base_weights = {1.0};
  CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("event dump round-trips through the 9-digit decimal form") {
  GeneratorConfig cfg = basic_config();
  auto events = generate_events(cfg, 11, 50);
  std::string path = "datagen_dump_test.csv";
  write_events(path, events);
  std::string content = read_file(path);
  auto lines = split(content, '\n');
  REQUIRE(lines.size() == 51);  // trailing newline
  auto fields = split(lines[0], ',');
  REQUIRE(fields.size() == 5 + cfg.feature_dim);
  CHECK(parse_int(fields[0]) == static_cast<long long>(events[0].sample_id));
  CHECK(parse_int(fields[1]) == 11);
  CHECK(fields[2] == "organic");
  CHECK(parse_int(fields[3]) == events[0].label);
  // 9-significant-digit stability: parse and re-print identically
  for (std::size_t f = 4; f < fields.size(); ++f) {
    double v = parse_real(fields[f]);
    CHECK(fmt_real9(v) == std::string(fields[f]));
  }
  std::remove(path.c_str());
}
