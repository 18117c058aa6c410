#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "streamkd/losses.hpp"

namespace streamkd {

struct TrafficSource {
  std::string tag;
  double probability = 1.0;
};

/// Synthetic event process with an exact, closed-form posterior:
///
///   logit(x, step) = w(step) . x  +  sum_k c_k * x_i(k) * x_j(k)  +  intercept(step)
///
/// Features are i.i.d. standard normal. w(step) is the base weight vector
/// rotated (and optionally perturbed) once drift starts; the intercept is
/// re-solved every step so the mean posterior tracks positive_rate_target.
/// The pairwise terms (off by default) give the posterior genuine interaction
/// structure so model capacity matters; c_k is seeded from interaction_seed.
struct GeneratorConfig {
  std::size_t feature_dim = 16;
  std::vector<double> base_weights;
  double drift_rate = 0.0;           // radians of rotation per step past drift_start_step
  std::uint64_t drift_start_step = 0;
  double noise_std = 0.0;            // scale of the smooth weight perturbation under drift
  double positive_rate_target = 0.5;
  std::vector<TrafficSource> traffic_sources;  // default: single "organic" source
  double interaction_strength = 0.0;
  std::size_t interaction_pairs = 8;
  std::uint64_t seed = 1;

  void validate() const;
};

struct InteractionEvent {
  std::uint64_t sample_id = 0;
  std::uint64_t step = 0;
  std::vector<double> features;
  int label = 0;
  double true_posterior = 0.0;
  std::string source;
};

/// Label-dependent thinning applied to a side's input stream: negatives keep
/// one in r_s, positives keep with the per-source retention. r_plus/b_s feed
/// the correction function; task names the prediction target the retentions
/// are keyed under.
struct SamplingConfig {
  double r_s = 1.0;
  double r_plus = 1.0;
  double b_s = 0.0;
  std::string task = "main";
  /// per-source positive retention; empty means full retention everywhere,
  /// and the key "*" is a fallback for sources not listed explicitly
  std::map<std::string, double> p_x_by_source;

  double p_x_for(const std::string& source) const;
  DebiasParams debias_for(const std::string& source) const;
  /// inverse keep probability: r_s for a kept negative, 1/p_x for a kept positive
  double keep_weight(int label, const std::string& source) const;
  bool is_identity() const;
  void validate() const;
};

struct SampledBatch {
  std::vector<InteractionEvent> kept;
  std::vector<double> weights;  // aligned with kept; inverse keep probability
  std::size_t dropped_negatives = 0;
  std::size_t dropped_positives = 0;
};

/// Deterministic generator: (config, step, n) fully determines the batch.
/// Instances only add an intercept cache; results match the free function.
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg);

  /// `channel` selects an independent draw stream at the same step (0 is the
  /// training stream); `id_base` offsets the per-step index packed into
  /// sample_id so disjoint channels can coexist without id collisions.
  std::vector<InteractionEvent> events(std::uint64_t step, std::size_t n,
                                       std::uint64_t channel = 0, std::size_t id_base = 0) const;
  std::vector<double> weights_at(std::uint64_t step) const;
  double intercept_at(std::uint64_t step) const;
  double posterior_at(std::uint64_t step, const std::vector<double>& features) const;
  const std::vector<std::pair<std::size_t, std::size_t>>& interaction_index_pairs() const {
    return pairs_;
  }
  const std::vector<double>& interaction_coefficients() const { return pair_coeffs_; }
  const GeneratorConfig& config() const { return cfg_; }

 private:
  void refresh(std::uint64_t step) const;

  GeneratorConfig cfg_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::vector<double> pair_coeffs_;
  std::vector<double> perturb_dir_;
  mutable bool cache_valid_ = false;
  mutable std::uint64_t cached_step_ = 0;
  mutable std::vector<double> cached_weights_;
  mutable double cached_intercept_ = 0.0;
};

std::vector<InteractionEvent> generate_events(const GeneratorConfig& cfg, std::uint64_t step,
                                              std::size_t n);

SampledBatch apply_sampling(const std::vector<InteractionEvent>& events,
                            const SamplingConfig& sampling, std::uint64_t seed);

/// exact posterior the generator assigned to this event
double oracle_posterior(const InteractionEvent& event);

/// one line per event: sample_id,step,source,label,posterior,f0,...,f{d-1}
void write_events(const std::string& path, const std::vector<InteractionEvent>& events);

}  // namespace streamkd
