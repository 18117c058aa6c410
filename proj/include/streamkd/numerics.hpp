#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "streamkd/rng.hpp"

namespace streamkd {

enum class Activation { relu, identity };

/// row-major dense matrix of 64-bit reals
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// one affine layer: out = activation(weight * in + bias); weight is out x in
struct Layer {
  DenseMatrix weight;
  std::vector<double> bias;
  Activation activation = Activation::identity;
};

/// Fully connected net. Flat parameter order (used by the optimizer, the
/// gradient checker, tower partitioning, and checkpoints): layer 0 weights
/// row-major, layer 0 biases, layer 1 weights, ... strictly in that order.
struct MlpParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows; }
  std::size_t param_count() const;

  double flat_get(std::size_t i) const;
  void flat_set(std::size_t i, double v);

  /// throws shape_error unless layer dims chain and biases match row counts
  void validate() const;
};

/// throws shape_error unless the net ends in a width-1 identity layer,
/// i.e. produces a raw pre-sigmoid logit
void validate_logit_net(const MlpParams& net);

/// per-layer inputs and pre-activations captured during forward, consumed by backward
struct ForwardCache {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> preacts;
  std::vector<double> output;
};

struct GradientTape {
  std::vector<DenseMatrix> dweight;
  std::vector<std::vector<double>> dbias;

  static GradientTape zeros_like(const MlpParams& params);
  void add(const GradientTape& other);
  void scale(double s);
  std::size_t param_count() const;
  double flat_get(std::size_t i) const;
  bool all_finite() const;
};

std::vector<double> mlp_forward(const MlpParams& params, const std::vector<double>& x,
                                ForwardCache* cache = nullptr);

/// convenience for width-1 nets; returns the scalar logit
double mlp_forward_logit(const MlpParams& params, const std::vector<double>& x,
                         ForwardCache* cache = nullptr);

/// Reverse pass. upstream is dL/d(output); accumulates dL/dparam into tape
/// (callers zero or reuse the tape across a batch) and returns dL/dx.
std::vector<double> mlp_backward(const MlpParams& params, const ForwardCache& cache,
                                 const std::vector<double>& upstream, GradientTape& tape);

std::vector<double> mlp_backward_logit(const MlpParams& params, const ForwardCache& cache,
                                       double upstream, GradientTape& tape);

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases. Hidden
/// layers use `hidden_activation`; the final layer uses `final_activation`.
MlpParams build_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden_widths,
                    std::size_t output_dim, Activation hidden_activation,
                    Activation final_activation, Rng& rng);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// first/second moment buffers in flat parameter order
struct OptimizerState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<double> m;
  std::vector<double> v;

  OptimizerState() = default;
  explicit OptimizerState(const MlpParams& params, AdamConfig cfg = {});
};

/// one Adam update; throws numeric_error if any gradient entry is non-finite
void optimizer_step(MlpParams& params, const GradientTape& tape, OptimizerState& state);

/// Independent gradient audit: compares the analytic tape of loss_fn against
/// central finite differences (step h) at `probe_count` randomly chosen
/// parameters. Returns the max relative error over probes; probes where both
/// gradients are below 1e-10 in magnitude are skipped as numerically empty.
double grad_check(const std::function<std::pair<double, GradientTape>(const MlpParams&)>& loss_fn,
                  const MlpParams& params, int probe_count, double h, std::uint64_t seed);

}  // namespace streamkd
