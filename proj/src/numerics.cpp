#include "streamkd/numerics.hpp"

#include <cmath>
#include <string>

#include "streamkd/errors.hpp"

namespace streamkd {

std::size_t MlpParams::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weight.values.size() + l.bias.size();
  return n;
}

double MlpParams::flat_get(std::size_t i) const {
  for (const Layer& l : layers) {
    if (i < l.weight.values.size()) return l.weight.values[i];
    i -= l.weight.values.size();
    if (i < l.bias.size()) return l.bias[i];
    i -= l.bias.size();
  }
  throw shape_error("flat_get index out of range");
}

void MlpParams::flat_set(std::size_t i, double v) {
  for (Layer& l : layers) {
    if (i < l.weight.values.size()) {
      l.weight.values[i] = v;
      return;
    }
    i -= l.weight.values.size();
    if (i < l.bias.size()) {
      l.bias[i] = v;
      return;
    }
    i -= l.bias.size();
  }
  throw shape_error("flat_set index out of range");
}

void MlpParams::validate() const {
  if (layers.empty()) throw shape_error("net has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.weight.rows == 0 || l.weight.cols == 0)
      throw shape_error("layer " + std::to_string(i) + " has an empty weight matrix");
    if (l.weight.values.size() != l.weight.rows * l.weight.cols)
      throw shape_error("layer " + std::to_string(i) + " weight storage mismatch");
    if (l.bias.size() != l.weight.rows)
      throw shape_error("layer " + std::to_string(i) + " bias length != rows");
    if (i > 0 && l.weight.cols != layers[i - 1].weight.rows)
      throw shape_error("layer " + std::to_string(i) + " input width " +
                        std::to_string(l.weight.cols) + " != previous output width " +
                        std::to_string(layers[i - 1].weight.rows));
  }
}

void validate_logit_net(const MlpParams& net) {
  net.validate();
  if (net.output_dim() != 1)
    throw shape_error("logit net must end in a width-1 layer, got width " +
                      std::to_string(net.output_dim()));
  if (net.layers.back().activation != Activation::identity)
    throw shape_error("logit net must end in an identity layer");
}

GradientTape GradientTape::zeros_like(const MlpParams& params) {
  GradientTape t;
  t.dweight.reserve(params.layers.size());
  t.dbias.reserve(params.layers.size());
  for (const Layer& l : params.layers) {
    t.dweight.emplace_back(l.weight.rows, l.weight.cols);
    t.dbias.emplace_back(l.bias.size(), 0.0);
  }
  return t;
}

void GradientTape::add(const GradientTape& other) {
  if (dweight.size() != other.dweight.size()) throw shape_error("tape add: layer count mismatch");
  for (std::size_t l = 0; l < dweight.size(); ++l) {
    if (dweight[l].values.size() != other.dweight[l].values.size() ||
        dbias[l].size() != other.dbias[l].size())
      throw shape_error("tape add: shape mismatch at layer " + std::to_string(l));
    for (std::size_t i = 0; i < dweight[l].values.size(); ++i)
      dweight[l].values[i] += other.dweight[l].values[i];
    for (std::size_t i = 0; i < dbias[l].size(); ++i) dbias[l][i] += other.dbias[l][i];
  }
}

void GradientTape::scale(double s) {
  for (auto& m : dweight)
    for (double& v : m.values) v *= s;
  for (auto& b : dbias)
    for (double& v : b) v *= s;
}

std::size_t GradientTape::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < dweight.size(); ++l) n += dweight[l].values.size() + dbias[l].size();
  return n;
}

double GradientTape::flat_get(std::size_t i) const {
  for (std::size_t l = 0; l < dweight.size(); ++l) {
    if (i < dweight[l].values.size()) return dweight[l].values[i];
    i -= dweight[l].values.size();
    if (i < dbias[l].size()) return dbias[l][i];
    i -= dbias[l].size();
  }
  throw shape_error("tape flat_get index out of range");
}

bool GradientTape::all_finite() const {
  for (const auto& m : dweight)
    for (double v : m.values)
      if (!std::isfinite(v)) return false;
  for (const auto& b : dbias)
    for (double v : b)
      if (!std::isfinite(v)) return false;
  return true;
}

std::vector<double> mlp_forward(const MlpParams& params, const std::vector<double>& x,
                                ForwardCache* cache) {
  if (params.layers.empty()) throw shape_error("forward through empty net");
  if (x.size() != params.input_dim())
    throw shape_error("input width " + std::to_string(x.size()) + " != net input dim " +
                      std::to_string(params.input_dim()));
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
  }
  std::vector<double> cur = x;
  for (const Layer& l : params.layers) {
    if (cache) cache->inputs.push_back(cur);
    std::vector<double> pre(l.weight.rows);
    for (std::size_t r = 0; r < l.weight.rows; ++r) {
      const double* w = &l.weight.values[r * l.weight.cols];
      double acc = l.bias[r];
      for (std::size_t c = 0; c < l.weight.cols; ++c) acc += w[c] * cur[c];
      pre[r] = acc;
    }
    if (cache) cache->preacts.push_back(pre);
    if (l.activation == Activation::relu)
      for (double& v : pre)
        if (v < 0.0) v = 0.0;
    cur = std::move(pre);
  }
  if (cache) cache->output = cur;
  return cur;
}

double mlp_forward_logit(const MlpParams& params, const std::vector<double>& x,
                         ForwardCache* cache) {
  if (params.output_dim() != 1) throw shape_error("forward_logit on net with output width != 1");
  return mlp_forward(params, x, cache)[0];
}

std::vector<double> mlp_backward(const MlpParams& params, const ForwardCache& cache,
                                 const std::vector<double>& upstream, GradientTape& tape) {
  std::size_t n_layers = params.layers.size();
  if (cache.inputs.size() != n_layers || cache.preacts.size() != n_layers)
    throw shape_error("backward: cache does not match net depth");
  if (tape.dweight.size() != n_layers) throw shape_error("backward: tape does not match net depth");
  if (upstream.size() != params.output_dim())
    throw shape_error("backward: upstream width mismatch");

  std::vector<double> grad = upstream;
  for (std::size_t li = n_layers; li-- > 0;) {
    const Layer& l = params.layers[li];
    const std::vector<double>& pre = cache.preacts[li];
    const std::vector<double>& in = cache.inputs[li];
    // fold the activation derivative into the layer-output gradient;
    // relu uses subgradient 0 at exactly 0
    if (l.activation == Activation::relu)
      for (std::size_t r = 0; r < grad.size(); ++r)
        if (pre[r] <= 0.0) grad[r] = 0.0;
    DenseMatrix& dw = tape.dweight[li];
    std::vector<double>& db = tape.dbias[li];
    for (std::size_t r = 0; r < l.weight.rows; ++r) {
      double g = grad[r];
      db[r] += g;
      double* dwr = &dw.values[r * l.weight.cols];
      for (std::size_t c = 0; c < l.weight.cols; ++c) dwr[c] += g * in[c];
    }
    std::vector<double> down(l.weight.cols, 0.0);
    for (std::size_t r = 0; r < l.weight.rows; ++r) {
      double g = grad[r];
      const double* w = &l.weight.values[r * l.weight.cols];
      for (std::size_t c = 0; c < l.weight.cols; ++c) down[c] += g * w[c];
    }
    grad = std::move(down);
  }
  return grad;
}

std::vector<double> mlp_backward_logit(const MlpParams& params, const ForwardCache& cache,
                                       double upstream, GradientTape& tape) {
  return mlp_backward(params, cache, std::vector<double>{upstream}, tape);
}

MlpParams build_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden_widths,
                    std::size_t output_dim, Activation hidden_activation,
                    Activation final_activation, Rng& rng) {
  if (input_dim == 0 || output_dim == 0) throw shape_error("build_mlp: zero-width net");
  MlpParams net;
  std::size_t in = input_dim;
  auto push = [&](std::size_t out, Activation act) {
    Layer l;
    l.weight = DenseMatrix(out, in);
    double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& v : l.weight.values) v = rng.uniform(-bound, bound);
    l.bias.assign(out, 0.0);
    l.activation = act;
    net.layers.push_back(std::move(l));
    in = out;
  };
  for (std::size_t w : hidden_widths) push(w, hidden_activation);
  push(output_dim, final_activation);
  net.validate();
  return net;
}

OptimizerState::OptimizerState(const MlpParams& params, AdamConfig cfg)
    : config(cfg), m(params.param_count(), 0.0), v(params.param_count(), 0.0) {}

void optimizer_step(MlpParams& params, const GradientTape& tape, OptimizerState& state) {
  std::size_t n = params.param_count();
  if (tape.param_count() != n) throw shape_error("optimizer_step: tape/param size mismatch");
  if (state.m.size() != n) throw shape_error("optimizer_step: state size mismatch");
  if (!tape.all_finite()) throw numeric_error("optimizer_step: non-finite gradient");

  state.step_count += 1;
  double t = static_cast<double>(state.step_count);
  double c1 = 1.0 - std::pow(state.config.beta1, t);
  double c2 = 1.0 - std::pow(state.config.beta2, t);

  // walk layers in flat order so moment buffers stay aligned with flat_get
  std::size_t k = 0;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    Layer& l = params.layers[li];
    auto update = [&](double& p, double g) {
      double& m = state.m[k];
      double& v = state.v[k];
      m = state.config.beta1 * m + (1.0 - state.config.beta1) * g;
      v = state.config.beta2 * v + (1.0 - state.config.beta2) * g * g;
      double mh = m / c1;
      double vh = v / c2;
      p -= state.config.learning_rate * mh / (std::sqrt(vh) + state.config.epsilon);
      ++k;
    };
    for (std::size_t i = 0; i < l.weight.values.size(); ++i)
      update(l.weight.values[i], tape.dweight[li].values[i]);
    for (std::size_t i = 0; i < l.bias.size(); ++i) update(l.bias[i], tape.dbias[li][i]);
  }
}

double grad_check(const std::function<std::pair<double, GradientTape>(const MlpParams&)>& loss_fn,
                  const MlpParams& params, int probe_count, double h, std::uint64_t seed) {
  if (probe_count <= 0) throw config_error("grad_check: probe_count must be positive");
  if (h <= 0.0) throw config_error("grad_check: step h must be positive");

  auto [value, tape] = loss_fn(params);
  (void)value;
  if (tape.param_count() != params.param_count())
    throw shape_error("grad_check: analytic tape size mismatch");

  Rng rng(seed);
  MlpParams probe = params;
  double worst = 0.0;
  std::size_t n = params.param_count();
  for (int p = 0; p < probe_count; ++p) {
    std::size_t i = rng.index(n);
    double orig = params.flat_get(i);
    probe.flat_set(i, orig + h);
    double up = loss_fn(probe).first;
    probe.flat_set(i, orig - h);
    double down = loss_fn(probe).first;
    probe.flat_set(i, orig);
    double numeric = (up - down) / (2.0 * h);
    double analytic = tape.flat_get(i);
    if (std::abs(numeric) < 1e-10 && std::abs(analytic) < 1e-10) continue;
    double rel = std::abs(numeric - analytic) / std::max(std::abs(numeric), std::abs(analytic));
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace streamkd
