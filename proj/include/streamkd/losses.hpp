#pragma once

#include <vector>

namespace streamkd {

/// scalar loss with its derivative w.r.t. the (student) logit it was built from
struct LossValue {
  double value = 0.0;
  double dL_dz = 0.0;
};

/// Sampling-correction parameters. The corrected probability for a raw logit z is
///
///   y_hat = 1 / (1 + (r_s / p_x) * (exp(-z) + 1 - r_plus + b_s))
///
/// which collapses to sigmoid(z) at the identity configuration.
struct DebiasParams {
  double r_s = 1.0;     // negative downsampling ratio: one kept negative stands for r_s
  double r_plus = 1.0;  // nominal positive retention assumed by the correction
  double p_x = 1.0;     // effective positive retention
  double b_s = 0.0;     // additive slack term, non-negative

  static DebiasParams identity() { return {}; }
  bool is_identity() const {
    return r_s == 1.0 && r_plus == 1.0 && p_x == 1.0 && b_s == 0.0;
  }
  /// throws config_error unless r_s >= 1, p_x/r_plus in (0, 1], b_s >= 0
  void validate() const;
};

enum class DistillMetric { ce, mse };

double sigmoid(double z);

/// probabilities entering logs are kept inside [1e-7, 1 - 1e-7]
double clamp_prob(double p);

/// binary cross entropy against a ground-truth label in {0, 1}
LossValue task_loss(double z, double y);

/// cross entropy against a teacher probability target
LossValue distill_ce(double p_teacher, double z_student);

/// tau^2-scaled KL between teacher and student Bernoulli heads at temperature
/// tau; at tau = 1 the gradient coincides exactly with distill_ce's
LossValue distill_kl(double z_teacher, double z_student, double tau);

/// squared error in probability space; gradient carries the p(1-p) factor that
/// vanishes at saturated student outputs
LossValue distill_mse(double p_teacher, double z_student);

/// corrected probability for a raw logit under sampling config d
double debias(double z, const DebiasParams& d);

/// derivative of debias(z, d) in z
double debias_dprob_dz(double z, const DebiasParams& d);

/// teacher raw logit re-expressed through the *student-side* correction, so the
/// target lives in the same corrected space as the student's corrected output
double teacher_rebias(double t1_logit, const DebiasParams& student_side);

/// Distillation between corrected outputs: target debias(t1, d) vs output
/// debias(s1, d); the gradient flows through the student-side correction.
LossValue kd_debias_loss(double t1_logit, double s1_logit, const DebiasParams& d,
                         DistillMetric metric);

/// same, but with an externally supplied probability target (lets callers pick
/// which side's correction produced the target; used by the correction ablation)
LossValue kd_debias_loss_target(double target_prob, double s1_logit, const DebiasParams& d,
                                DistillMetric metric);

/// Auto weighting for the distillation term: mean |task gradient| over a recent
/// window divided by mean |distill gradient|, clamped to [1, 1000]. Windows
/// must be non-empty.
double align_alpha(const std::vector<double>& task_grad_mags,
                   const std::vector<double>& distill_grad_mags);

/// L = task + alpha * distill, both terms differentiated in the same logit
LossValue combined_loss(const LossValue& task, const LossValue& distill, double alpha);

}  // namespace streamkd
