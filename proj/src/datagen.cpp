#include "streamkd/datagen.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <string>

#include "streamkd/errors.hpp"
#include "streamkd/rng.hpp"
#include "streamkd/text_io.hpp"

namespace streamkd {

namespace {

constexpr std::uint64_t kMaxBatch = 1ull << 20;  // sample_id packs (step, index)

constexpr std::uint64_t kInterceptTag = 0x696e7463'6b640000ULL;
constexpr std::uint64_t kPairsTag = 0x70616972'736b6400ULL;
constexpr std::uint64_t kPerturbTag = 0x70657274'6b640000ULL;

std::vector<TrafficSource> default_sources() { return {{"organic", 1.0}}; }

}  // namespace

void GeneratorConfig::validate() const {
  if (feature_dim == 0) throw config_error("generator: feature_dim must be positive");
  if (!base_weights.empty() && base_weights.size() != feature_dim)
    throw config_error("generator: base_weights length != feature_dim");
  if (!(positive_rate_target > 0.0 && positive_rate_target < 1.0))
    throw config_error("generator: positive_rate_target must be inside (0, 1)");
  if (drift_rate < 0.0) throw config_error("generator: drift_rate must be >= 0");
  if (noise_std < 0.0) throw config_error("generator: noise_std must be >= 0");
  if (interaction_strength < 0.0)
    throw config_error("generator: interaction_strength must be >= 0");
  if (interaction_strength > 0.0 && feature_dim < 2)
    throw config_error("generator: interactions need feature_dim >= 2");
  if (!traffic_sources.empty()) {
    double total = 0.0;
    for (const TrafficSource& s : traffic_sources) {
      if (s.tag.empty()) throw config_error("generator: traffic source tag is empty");
      if (!(s.probability > 0.0)) throw config_error("generator: traffic share must be > 0");
      total += s.probability;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw config_error("generator: traffic shares must sum to 1");
  }
}

double SamplingConfig::p_x_for(const std::string& source) const {
  if (p_x_by_source.empty()) return 1.0;
  auto it = p_x_by_source.find(source);
  if (it == p_x_by_source.end()) it = p_x_by_source.find("*");
  if (it == p_x_by_source.end())
    throw config_error("sampling: no positive retention for task '" + task + "' source '" +
                       source + "'");
  return it->second;
}

DebiasParams SamplingConfig::debias_for(const std::string& source) const {
  DebiasParams d;
  d.r_s = r_s;
  d.r_plus = r_plus;
  d.p_x = p_x_for(source);
  d.b_s = b_s;
  return d;
}

double SamplingConfig::keep_weight(int label, const std::string& source) const {
  return label == 0 ? r_s : 1.0 / p_x_for(source);
}

bool SamplingConfig::is_identity() const {
  if (r_s != 1.0 || r_plus != 1.0 || b_s != 0.0) return false;
  for (const auto& [tag, px] : p_x_by_source)
    if (px != 1.0) return false;
  return true;
}

void SamplingConfig::validate() const {
  if (!(r_s >= 1.0)) throw config_error("sampling: r_s must be >= 1");
  if (!(r_plus > 0.0 && r_plus <= 1.0)) throw config_error("sampling: r_plus must be in (0, 1]");
  if (b_s < 0.0) throw config_error("sampling: b_s must be >= 0");
  if (task.empty()) throw config_error("sampling: task tag is empty");
  for (const auto& [tag, px] : p_x_by_source)
    if (!(px > 0.0 && px <= 1.0))
      throw config_error("sampling: retention for source '" + tag + "' must be in (0, 1]");
}

Generator::Generator(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.base_weights.empty()) cfg_.base_weights.assign(cfg_.feature_dim, 0.0);
  if (cfg_.traffic_sources.empty()) cfg_.traffic_sources = default_sources();

  if (cfg_.interaction_strength > 0.0 && cfg_.interaction_pairs > 0) {
    Rng rng(mix_seed(kPairsTag, cfg_.seed));
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (pairs_.size() < cfg_.interaction_pairs) {
      std::size_t i = rng.index(cfg_.feature_dim);
      std::size_t j = rng.index(cfg_.feature_dim);
      if (i == j) continue;
      auto key = std::minmax(i, j);
      std::pair<std::size_t, std::size_t> p{key.first, key.second};
      if (!seen.insert(p).second) continue;
      pairs_.push_back(p);
      double sign = rng.chance(0.5) ? 1.0 : -1.0;
      pair_coeffs_.push_back(sign * cfg_.interaction_strength * rng.uniform(0.6, 1.0));
      // cap at the number of distinct pairs available
      if (seen.size() >= cfg_.feature_dim * (cfg_.feature_dim - 1) / 2) break;
    }
  }

  if (cfg_.noise_std > 0.0) {
    Rng rng(mix_seed(kPerturbTag, cfg_.seed));
    perturb_dir_.resize(cfg_.feature_dim);
    double norm = 0.0;
    for (double& v : perturb_dir_) {
      v = rng.gaussian();
      norm += v * v;
    }
    norm = std::sqrt(std::max(norm, 1e-30));
    for (double& v : perturb_dir_) v /= norm;
  }
}

std::vector<double> Generator::weights_at(std::uint64_t step) const {
  std::vector<double> w = cfg_.base_weights;
  if (cfg_.drift_rate <= 0.0 || step <= cfg_.drift_start_step) return w;
  double theta = cfg_.drift_rate * static_cast<double>(step - cfg_.drift_start_step);
  // plane rotations across successive coordinate pairs; preserves the norm
  double c = std::cos(theta), s = std::sin(theta);
  for (std::size_t i = 0; i + 1 < w.size(); i += 2) {
    double a = w[i], b = w[i + 1];
    w[i] = c * a - s * b;
    w[i + 1] = s * a + c * b;
  }
  if (!perturb_dir_.empty()) {
    double wobble = cfg_.noise_std * std::sin(theta * 0.5);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += wobble * perturb_dir_[i];
  }
  return w;
}

void Generator::refresh(std::uint64_t step) const {
  // Weights are constant before the drift start (and with drift disabled), so
  // every such step shares one intercept solve.
  if (cfg_.drift_rate <= 0.0 || step <= cfg_.drift_start_step) step = cfg_.drift_start_step;
  if (cache_valid_ && cached_step_ == step) return;
  cached_weights_ = weights_at(step);

  // Solve the intercept so the mean posterior over a fixed probe sample hits
  // the target; bisection on a monotone function of the intercept. With
  // sigmoid(z + c) = 1 / (1 + e^-z * e^-c) the per-probe exp is hoisted out
  // of the bisection loop.
  Rng probe_rng(mix_seed(kInterceptTag, cfg_.seed));
  const std::size_t probes = 8192;
  std::vector<double> expneg(probes);
  std::vector<double> x(cfg_.feature_dim);
  for (std::size_t p = 0; p < probes; ++p) {
    for (double& v : x) v = probe_rng.gaussian();
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) z += cached_weights_[i] * x[i];
    for (std::size_t k = 0; k < pairs_.size(); ++k)
      z += pair_coeffs_[k] * x[pairs_[k].first] * x[pairs_[k].second];
    expneg[p] = std::exp(-z);
  }
  auto mean_posterior = [&](double c) {
    double ec = std::exp(-c);
    double acc = 0.0;
    for (double e : expneg) acc += 1.0 / (1.0 + e * ec);
    return acc / static_cast<double>(probes);
  };
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 80; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mean_posterior(mid) < cfg_.positive_rate_target)
      lo = mid;
    else
      hi = mid;
  }
  cached_intercept_ = 0.5 * (lo + hi);
  cached_step_ = step;
  cache_valid_ = true;
}

double Generator::intercept_at(std::uint64_t step) const {
  refresh(step);
  return cached_intercept_;
}

double Generator::posterior_at(std::uint64_t step, const std::vector<double>& features) const {
  if (features.size() != cfg_.feature_dim)
    throw shape_error("posterior_at: feature width mismatch");
  refresh(step);
  double z = cached_intercept_;
  for (std::size_t i = 0; i < features.size(); ++i) z += cached_weights_[i] * features[i];
  for (std::size_t k = 0; k < pairs_.size(); ++k)
    z += pair_coeffs_[k] * features[pairs_[k].first] * features[pairs_[k].second];
  return sigmoid(z);
}

std::vector<InteractionEvent> Generator::events(std::uint64_t step, std::size_t n,
                                                std::uint64_t channel,
                                                std::size_t id_base) const {
  if (id_base + n >= kMaxBatch)
    throw config_error("generate_events: batch too large for id packing");
  if (step >= (1ull << 43)) throw config_error("generate_events: step too large for id packing");
  refresh(step);

  Rng rng(mix_seed(channel == 0 ? seed_tag::events : channel, cfg_.seed, step));
  std::vector<InteractionEvent> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    InteractionEvent e;
    e.sample_id = (step << 20) | static_cast<std::uint64_t>(id_base + i);
    e.step = step;
    e.features.resize(cfg_.feature_dim);
    for (double& v : e.features) v = rng.gaussian();
    e.true_posterior = posterior_at(step, e.features);
    e.label = rng.chance(e.true_posterior) ? 1 : 0;
    double u = rng.uniform();
    double acc = 0.0;
    e.source = cfg_.traffic_sources.back().tag;
    for (const TrafficSource& s : cfg_.traffic_sources) {
      acc += s.probability;
      if (u < acc) {
        e.source = s.tag;
        break;
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<InteractionEvent> generate_events(const GeneratorConfig& cfg, std::uint64_t step,
                                              std::size_t n) {
  return Generator(cfg).events(step, n);
}

SampledBatch apply_sampling(const std::vector<InteractionEvent>& events,
                            const SamplingConfig& sampling, std::uint64_t seed) {
  sampling.validate();
  Rng rng(mix_seed(seed_tag::sampling, seed));
  SampledBatch out;
  for (const InteractionEvent& e : events) {
    if (e.label == 0) {
      if (rng.chance(1.0 / sampling.r_s)) {
        out.kept.push_back(e);
        out.weights.push_back(sampling.r_s);
      } else {
        ++out.dropped_negatives;
      }
    } else {
      double px = sampling.p_x_for(e.source);
      if (rng.chance(px)) {
        out.kept.push_back(e);
        out.weights.push_back(1.0 / px);
      } else {
        ++out.dropped_positives;
      }
    }
  }
  return out;
}

double oracle_posterior(const InteractionEvent& event) { return event.true_posterior; }

void write_events(const std::string& path, const std::vector<InteractionEvent>& events) {
  std::ostringstream ss;
  for (const InteractionEvent& e : events) {
    ss << e.sample_id << ',' << e.step << ',' << e.source << ',' << e.label << ','
       << fmt_real9(e.true_posterior);
    for (double f : e.features) ss << ',' << fmt_real9(f);
    ss << '\n';
  }
  atomic_write_file(path, ss.str());
}

}  // namespace streamkd
