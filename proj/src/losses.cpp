#include "streamkd/losses.hpp"

#include <cmath>
#include <string>

#include "streamkd/errors.hpp"

namespace streamkd {

namespace {
constexpr double kProbFloor = 1e-7;

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }
}  // namespace

void DebiasParams::validate() const {
  if (!(r_s >= 1.0)) throw config_error("debias: r_s must be >= 1, got " + std::to_string(r_s));
  if (!(p_x > 0.0 && p_x <= 1.0))
    throw config_error("debias: p_x must be in (0, 1], got " + std::to_string(p_x));
  if (!(r_plus > 0.0 && r_plus <= 1.0))
    throw config_error("debias: r_plus must be in (0, 1], got " + std::to_string(r_plus));
  if (!(b_s >= 0.0)) throw config_error("debias: b_s must be >= 0, got " + std::to_string(b_s));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double clamp_prob(double p) {
  if (p < kProbFloor) return kProbFloor;
  if (p > 1.0 - kProbFloor) return 1.0 - kProbFloor;
  return p;
}

LossValue task_loss(double z, double y) {
  if (y != 0.0 && y != 1.0) throw config_error("task_loss: label must be 0 or 1");
  double p = clamp_prob(sigmoid(z));
  return {-(y * std::log(p) + (1.0 - y) * std::log(1.0 - p)), sigmoid(z) - y};
}

LossValue distill_ce(double p_teacher, double z_student) {
  double pt = clamp_prob(p_teacher);
  double ps = clamp_prob(sigmoid(z_student));
  return {-(pt * std::log(ps) + (1.0 - pt) * std::log(1.0 - ps)), sigmoid(z_student) - pt};
}

LossValue distill_kl(double z_teacher, double z_student, double tau) {
  if (!(tau > 0.0)) throw config_error("distill_kl: tau must be positive");
  double pt = clamp_prob(sigmoid(z_teacher / tau));
  double ps = clamp_prob(sigmoid(z_student / tau));
  double kl = xlogy(pt, pt / ps) + xlogy(1.0 - pt, (1.0 - pt) / (1.0 - ps));
  return {tau * tau * kl, tau * (sigmoid(z_student / tau) - sigmoid(z_teacher / tau))};
}

LossValue distill_mse(double p_teacher, double z_student) {
  double ps = sigmoid(z_student);
  double diff = ps - p_teacher;
  return {0.5 * diff * diff, diff * ps * (1.0 - ps)};
}

double debias(double z, const DebiasParams& d) {
  double slack = 1.0 - d.r_plus + d.b_s;
  return 1.0 / (1.0 + (d.r_s / d.p_x) * (std::exp(-z) + slack));
}

double debias_dprob_dz(double z, const DebiasParams& d) {
  double y = debias(z, d);
  double slack = 1.0 - d.r_plus + d.b_s;
  // d(y)/dz = K e^{-z} y^2 = y (1-y) / (1 + slack e^{z}); the right-hand form
  // stays finite for any z the left-hand form can overflow on
  double factor = slack == 0.0 ? 1.0 : 1.0 / (1.0 + slack * std::exp(z));
  return y * (1.0 - y) * factor;
}

double teacher_rebias(double t1_logit, const DebiasParams& student_side) {
  return debias(t1_logit, student_side);
}

LossValue kd_debias_loss_target(double target_prob, double s1_logit, const DebiasParams& d,
                                DistillMetric metric) {
  double s2 = debias(s1_logit, d);
  double t = clamp_prob(target_prob);
  double slack = 1.0 - d.r_plus + d.b_s;
  double factor = slack == 0.0 ? 1.0 : 1.0 / (1.0 + slack * std::exp(s1_logit));
  if (metric == DistillMetric::ce) {
    double s2c = clamp_prob(s2);
    double value = -(t * std::log(s2c) + (1.0 - t) * std::log(1.0 - s2c));
    // (s2 - t)/(s2 (1-s2)) * ds2/dz collapses to (s2 - t) * factor
    return {value, (s2 - t) * factor};
  }
  double diff = s2 - t;
  return {0.5 * diff * diff, diff * s2 * (1.0 - s2) * factor};
}

LossValue kd_debias_loss(double t1_logit, double s1_logit, const DebiasParams& d,
                         DistillMetric metric) {
  return kd_debias_loss_target(debias(t1_logit, d), s1_logit, d, metric);
}

double align_alpha(const std::vector<double>& task_grad_mags,
                   const std::vector<double>& distill_grad_mags) {
  if (task_grad_mags.empty() || distill_grad_mags.empty())
    throw config_error("align_alpha: gradient windows must be non-empty");
  double ts = 0.0, ds = 0.0;
  for (double g : task_grad_mags) ts += std::abs(g);
  for (double g : distill_grad_mags) ds += std::abs(g);
  double task_mean = ts / static_cast<double>(task_grad_mags.size());
  double distill_mean = ds / static_cast<double>(distill_grad_mags.size());
  double alpha = task_mean / std::max(distill_mean, 1e-12);
  if (alpha < 1.0) return 1.0;
  if (alpha > 1000.0) return 1000.0;
  return alpha;
}

LossValue combined_loss(const LossValue& task, const LossValue& distill, double alpha) {
  if (!(alpha >= 0.0)) throw config_error("combined_loss: alpha must be non-negative");
  return {task.value + alpha * distill.value, task.dL_dz + alpha * distill.dL_dz};
}

}  // namespace streamkd
