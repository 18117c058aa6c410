#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "streamkd/datagen.hpp"
#include "streamkd/metrics.hpp"
#include "streamkd/models.hpp"
#include "streamkd/signal_store.hpp"

namespace streamkd {

/// Two training phases: a high-throughput batch phase over large slices, then
/// a streaming phase of small fresh batches. drift_start is the streaming
/// step at which the generator's weight rotation begins.
struct PhaseSchedule {
  std::uint64_t batch_steps = 40;
  std::size_t batch_size = 256;
  std::uint64_t stream_steps = 200;
  std::size_t stream_batch = 32;
  std::uint64_t drift_start = 0;

  void validate() const;
};

struct EvalConfig {
  std::uint64_t every = 40;   ///< steps between held-out evaluations
  std::size_t size = 4000;    ///< held-out events per evaluation

  void validate() const;
};

struct LossConfig {
  /// alpha balances task and distillation terms on the aux logit; when auto,
  /// it is set once at batch-phase start by magnitude alignment and frozen.
  bool alpha_auto = false;
  double alpha = 1.0;
  DistillMetric metric = DistillMetric::ce;
  /// weight each kept sample by its inverse keep probability so teacher and
  /// student train toward the same unsampled distribution
  bool weighted_task = true;

  void validate() const;
};

struct ModeFlags {
  bool distill = true;         ///< master switch; off reproduces the baseline
  bool decoupled = true;       ///< false routes the distill term to the serving logit
  bool aux_task = true;        ///< aux objective includes the task term
  bool debias = true;          ///< distill in corrected-probability space
  bool teacher_rebias = true;  ///< teacher target through the student-side correction
  bool stream_distill = true;  ///< distill term active during the streaming phase
  bool batch_distill = true;   ///< distill term active during the batch phase
};

/// Corrupts teacher signals during streaming steps [start, end): the stored
/// logit is replaced with noise. Flagged corruption is detectable and the
/// trainer treats those signals as missing; unflagged corruption is consumed.
struct FaultSchedule {
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  bool flagged = true;
  double noise_std = 1.0;

  bool active() const { return end > start; }
  void validate() const;
};

struct ExperimentSpec {
  std::string name = "custom";
  std::string arm = "default";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  GeneratorConfig generator;
  TeacherArch teacher_arch;
  SamplingConfig teacher_sampling;
  std::size_t teacher_data_multiplier = 1;  ///< teacher consumes this x student volume
  double teacher_lr = 3e-3;

  StudentArch student_arch;
  std::size_t student_count = 1;  ///< N identical students sharing one store
  SamplingConfig student_sampling;
  double student_lr = 1e-2;

  LossConfig loss;
  JoinConfig join;
  std::uint64_t availability_lag = 2;
  MissingPolicy missing_policy = MissingPolicy::skip_distill;
  PhaseSchedule schedule;
  EvalConfig eval;
  ModeFlags mode;
  FaultSchedule fault;

  ExperimentSpec();

  /// Fills derived fields (auto base weights, the generator's drift start in
  /// global steps) and validates everything. Parsing and presets both end
  /// here, so a finalized spec is runnable as-is.
  void finalize();
};

/// One evaluation snapshot of every model in the run.
struct EvalPoint {
  std::uint64_t step = 0;
  double auc_teacher = 0.0;
  double auc_student_raw = 0.0;                  ///< baseline (no distill) main logit
  std::vector<double> auc_student_distill_main;  ///< per student
  std::vector<double> auc_student_distill_aux;   ///< per student
  double eta = 0.0;                              ///< student 0, main logit
  double gain_scale = 0.0;
  double gain_distill = 0.0;
  double missing_signal_frac = 0.0;  ///< since the previous eval point
  double calibration_mae = 0.0;      ///< corrected serving probability vs oracle
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<EvalPoint> evals;
  double resolved_alpha = 1.0;
};

struct MetricsReport {
  ExperimentSpec spec;
  std::vector<RunResult> runs;  ///< one per seed, in spec.seeds order
};

/// Trains teacher, baseline student, and distilled student(s) on a shared
/// event stream for one seed. Throws numeric_error on divergence.
RunResult run_one_seed(const ExperimentSpec& spec, std::uint64_t seed);

/// run_one_seed over every seed in the spec.
MetricsReport run_experiment(const ExperimentSpec& spec);

/// Flattens a report into deterministic CSV rows (see metrics module schema).
/// Students beyond the first get their per-student metrics suffixed _s1, _s2, ...
std::vector<MetricRow> report_rows(const MetricsReport& report);

/// All experiment arms of a named preset, ready to run.
std::vector<ExperimentSpec> preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace streamkd
