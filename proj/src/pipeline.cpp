#include "streamkd/pipeline.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "streamkd/errors.hpp"
#include "streamkd/losses.hpp"
#include "streamkd/rng.hpp"

namespace streamkd {

namespace {

// sub-stream discriminators under the run seed
constexpr std::uint64_t kTeacherBuildTag = 101;
constexpr std::uint64_t kStudentBuildTag = 202;
constexpr std::uint64_t kTeacherSampleTag = 11;
constexpr std::uint64_t kStudentSampleTag = 22;

// eval events live in the upper half of the per-step id space so they can
// never collide with training ids at the same step
constexpr std::size_t kEvalIdBase = 1ull << 19;

// samples of |dL/dz| collected per side before an auto alpha is frozen
constexpr std::size_t kAlphaWindow = 2000;

struct AlphaState {
  double value = 1.0;
  bool frozen = true;
  std::vector<double> task_mags;
  std::vector<double> distill_mags;

  void maybe_freeze() {
    if (frozen) return;
    if (task_mags.size() < kAlphaWindow || distill_mags.size() < kAlphaWindow) return;
    value = align_alpha(task_mags, distill_mags);
    frozen = true;
    task_mags.clear();
    task_mags.shrink_to_fit();
    distill_mags.clear();
    distill_mags.shrink_to_fit();
  }
};

/// distillation loss between the teacher signal and one student logit, in the
/// space the mode flags select
LossValue distill_term(const ExperimentSpec& spec, double t1_logit, double z_student,
                       const std::string& source) {
  if (spec.mode.debias) {
    DebiasParams student_side = spec.student_sampling.debias_for(source);
    double target = spec.mode.teacher_rebias
                        ? debias(t1_logit, student_side)
                        : debias(t1_logit, spec.teacher_sampling.debias_for(source));
    return kd_debias_loss_target(target, z_student, student_side, spec.loss.metric);
  }
  double p_teacher = sigmoid(t1_logit);
  return spec.loss.metric == DistillMetric::ce ? distill_ce(p_teacher, z_student)
                                               : distill_mse(p_teacher, z_student);
}

/// One optimizer update for a student on a batch. Signals may be absent
/// per-sample (skip_distill) or pre-filtered out (drop_sample). `distilling`
/// is false for the baseline and outside active distillation phases. The
/// baseline always trains in the canonical decoupled task-only form so its
/// quality is comparable across mode-flag arms; `canonical` selects that.
void student_update(const ExperimentSpec& spec, StudentModel& s,
                    const std::vector<InteractionEvent>& kept,
                    const std::vector<double>& weights, const std::vector<char>& has_signal,
                    const std::vector<double>& t1_logits, bool distilling, double alpha,
                    AlphaState* collector, bool canonical = false) {
  if (kept.empty()) return;
  const bool decoupled = canonical || spec.mode.decoupled;
  const bool aux_task = canonical || spec.mode.aux_task;
  StudentTape tape = StudentTape::zeros_like(s);
  const double inv_n = 1.0 / static_cast<double>(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const InteractionEvent& e = kept[i];
    StudentCache cache;
    TowerOutputs out = student_forward(s, e.features, &cache);
    double w = spec.loss.weighted_task ? weights[i] : 1.0;
    double y = static_cast<double>(e.label);

    double d_main = 0.0;
    double d_aux = 0.0;
    if (decoupled) {
      d_main = w * task_loss(out.z_main, y).dL_dz;
      double task_aux = aux_task ? w * task_loss(out.z_aux, y).dL_dz : 0.0;
      d_aux = task_aux;
      if (distilling && has_signal[i]) {
        LossValue d = distill_term(spec, t1_logits[i], out.z_aux, e.source);
        d_aux += alpha * d.dL_dz;
        if (collector && !collector->frozen) {
          collector->task_mags.push_back(
              std::abs(aux_task ? task_aux : w * task_loss(out.z_main, y).dL_dz));
          collector->distill_mags.push_back(std::abs(d.dL_dz));
        }
      }
    } else {
      // single-tower: the distill term shares the serving logit
      if (aux_task) d_main = w * task_loss(out.z_main, y).dL_dz;
      if (distilling && has_signal[i]) {
        LossValue d = distill_term(spec, t1_logits[i], out.z_main, e.source);
        d_main += alpha * d.dL_dz;
        if (collector && !collector->frozen) {
          collector->task_mags.push_back(std::abs(w * task_loss(out.z_main, y).dL_dz));
          collector->distill_mags.push_back(std::abs(d.dL_dz));
        }
      }
    }
    student_backward(s, cache, d_main * inv_n, d_aux * inv_n, tape);
  }
  student_step(s, tape);
}

void teacher_update(const ExperimentSpec& spec, TeacherModel& t,
                    const std::vector<InteractionEvent>& events, std::uint64_t run_seed,
                    std::uint64_t step) {
  SampledBatch batch =
      apply_sampling(events, t.sampling, mix_seed(run_seed, step, kTeacherSampleTag));
  if (!batch.kept.empty()) {
    GradientTape tape = GradientTape::zeros_like(t.net);
    const double inv_n = 1.0 / static_cast<double>(batch.kept.size());
    for (std::size_t i = 0; i < batch.kept.size(); ++i) {
      const InteractionEvent& e = batch.kept[i];
      ForwardCache cache;
      double z = mlp_forward_logit(t.net, e.features, &cache);
      double w = spec.loss.weighted_task ? batch.weights[i] : 1.0;
      double d = w * task_loss(z, static_cast<double>(e.label)).dL_dz * inv_n;
      mlp_backward_logit(t.net, cache, d, tape);
    }
    teacher_step(t, tape);
  }
  ++t.version;
}

double require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw numeric_error(std::string(what) + " diverged (non-finite score)");
  return v;
}

}  // namespace

RunResult run_one_seed(const ExperimentSpec& spec, std::uint64_t run_seed) {
  GeneratorConfig gen_cfg = spec.generator;
  gen_cfg.seed = mix_seed(gen_cfg.seed, run_seed);
  Generator gen(gen_cfg);

  TeacherModel teacher = build_teacher(spec.teacher_arch, mix_seed(run_seed, kTeacherBuildTag));
  teacher.sampling = spec.teacher_sampling;
  teacher.opt.config.learning_rate = spec.teacher_lr;

  auto make_student = [&]() {
    StudentModel s = build_student(spec.student_arch, mix_seed(run_seed, kStudentBuildTag));
    s.sampling = spec.student_sampling;
    s.opt_backbone.config.learning_rate = spec.student_lr;
    s.opt_main.config.learning_rate = spec.student_lr;
    s.opt_aux.config.learning_rate = spec.student_lr;
    return s;
  };
  StudentModel baseline = make_student();
  std::vector<StudentModel> students;
  for (std::size_t k = 0; k < spec.student_count; ++k) students.push_back(make_student());

  SignalStore store(spec.availability_lag);
  std::unordered_set<std::uint64_t> flagged_ids;

  AlphaState alpha;
  alpha.value = spec.loss.alpha_auto ? 1.0 : spec.loss.alpha;
  alpha.frozen = !(spec.loss.alpha_auto && spec.mode.distill);

  RunResult result;
  result.seed = run_seed;

  const std::uint64_t total_steps = spec.schedule.batch_steps + spec.schedule.stream_steps;
  JoinStats window;  // join outcomes since the previous eval point

  for (std::uint64_t t = 0; t < total_steps; ++t) {
    const bool batch_phase = t < spec.schedule.batch_steps;
    const std::size_t n = batch_phase ? spec.schedule.batch_size : spec.schedule.stream_batch;
    const std::size_t m = n * spec.teacher_data_multiplier;
    std::vector<InteractionEvent> all_events = gen.events(t, m);
    std::vector<InteractionEvent> slice(all_events.begin(),
                                        all_events.begin() + static_cast<std::ptrdiff_t>(n));

    // Teacher scores the student-visible slice before its own update, so the
    // emitted signal reflects the pre-update snapshot.
    TeacherEmission emission = teacher_forward(teacher, slice, t);
    if (!batch_phase && spec.fault.active()) {
      std::uint64_t s = t - spec.schedule.batch_steps;
      if (s >= spec.fault.start && s < spec.fault.end) {
        Rng fault_rng(mix_seed(seed_tag::fault, run_seed, t));
        for (SignalRecord& rec : emission.signals) {
          rec.t1_logit = spec.fault.noise_std * fault_rng.gaussian();
          if (spec.fault.flagged) flagged_ids.insert(rec.sample_id);
        }
      }
    }
    for (const SignalRecord& rec : emission.signals) store.append(rec);

    teacher_update(spec, teacher, all_events, run_seed, t);

    // shared student batch: baseline and every distilled student consume the
    // same kept events in the same order
    SampledBatch sb =
        apply_sampling(slice, spec.student_sampling, mix_seed(run_seed, t, kStudentSampleTag));

    const bool distill_now =
        spec.mode.distill && (batch_phase ? spec.mode.batch_distill : spec.mode.stream_distill);
    std::vector<char> has_signal(sb.kept.size(), 0);
    std::vector<double> t1_logits(sb.kept.size(), 0.0);
    if (distill_now) {
      if (batch_phase) {
        // batch phase joins in-process: the emission that produced this
        // slice is paired directly, as when training from a joined dataset
        std::unordered_map<std::uint64_t, double> by_id;
        for (const SignalRecord& rec : emission.signals) by_id.emplace(rec.sample_id, rec.t1_logit);
        for (std::size_t i = 0; i < sb.kept.size(); ++i) {
          auto it = by_id.find(sb.kept[i].sample_id);
          if (it == by_id.end() || flagged_ids.count(sb.kept[i].sample_id)) continue;
          has_signal[i] = 1;
          t1_logits[i] = it->second;
        }
      } else {
        std::vector<std::uint64_t> ids;
        ids.reserve(sb.kept.size());
        for (const InteractionEvent& e : sb.kept) ids.push_back(e.sample_id);
        std::vector<JoinedSignal> joined = store.join_batch(ids, t, spec.join);
        for (std::size_t i = 0; i < joined.size(); ++i) {
          window.requested += 1;
          window.total_retries += static_cast<std::size_t>(joined[i].retries_used);
          // a flagged-corrupt signal is detected and treated as missing
          if (joined[i].found && !flagged_ids.count(ids[i])) {
            has_signal[i] = 1;
            t1_logits[i] = joined[i].record.t1_logit;
            window.matched += 1;
          } else {
            window.missing += 1;
          }
        }
      }
    }

    // The baseline never consumes signals, so under drop_sample it still
    // trains on the unfiltered batch while the distilled students lose the
    // signal-less samples entirely.
    std::vector<char> no_signal(sb.kept.size(), 0);
    std::vector<double> no_logits(sb.kept.size(), 0.0);
    student_update(spec, baseline, sb.kept, sb.weights, no_signal, no_logits,
                   /*distilling=*/false, alpha.value, nullptr, /*canonical=*/true);
    if (distill_now && spec.missing_policy == MissingPolicy::drop_sample) {
      std::vector<InteractionEvent> kept;
      std::vector<double> weights;
      std::vector<double> logits;
      for (std::size_t i = 0; i < sb.kept.size(); ++i) {
        if (!has_signal[i]) continue;
        kept.push_back(sb.kept[i]);
        weights.push_back(sb.weights[i]);
        logits.push_back(t1_logits[i]);
      }
      sb.kept = std::move(kept);
      sb.weights = std::move(weights);
      t1_logits = std::move(logits);
      has_signal.assign(sb.kept.size(), 1);
    }
    for (std::size_t k = 0; k < students.size(); ++k)
      student_update(spec, students[k], sb.kept, sb.weights, has_signal, t1_logits, distill_now,
                     alpha.value, k == 0 ? &alpha : nullptr);
    alpha.maybe_freeze();

    if ((t + 1) % spec.eval.every == 0 || t + 1 == total_steps) {
      std::vector<InteractionEvent> held_out =
          gen.events(t, spec.eval.size, seed_tag::eval, kEvalIdBase);
      std::vector<int> labels;
      std::vector<double> z_teacher, z_raw, posts;
      labels.reserve(held_out.size());
      for (const InteractionEvent& e : held_out) {
        labels.push_back(e.label);
        posts.push_back(e.true_posterior);
        z_teacher.push_back(require_finite(teacher_logit(teacher, e.features), "teacher"));
        z_raw.push_back(require_finite(student_forward(baseline, e.features).z_main, "baseline"));
      }

      EvalPoint ep;
      ep.step = t + 1;
      ep.auc_teacher = auc(z_teacher, labels);
      ep.auc_student_raw = auc(z_raw, labels);
      for (std::size_t k = 0; k < students.size(); ++k) {
        std::vector<double> z_main, z_aux;
        z_main.reserve(held_out.size());
        z_aux.reserve(held_out.size());
        for (const InteractionEvent& e : held_out) {
          TowerOutputs out = student_forward(students[k], e.features);
          z_main.push_back(require_finite(out.z_main, "student main"));
          z_aux.push_back(require_finite(out.z_aux, "student aux"));
        }
        ep.auc_student_distill_main.push_back(auc(z_main, labels));
        ep.auc_student_distill_aux.push_back(auc(z_aux, labels));
        if (k == 0) {
          // serving probability: weighted training already targets the
          // unsampled space, unweighted training is corrected at serve time
          std::vector<double> serve;
          serve.reserve(held_out.size());
          for (std::size_t i = 0; i < held_out.size(); ++i) {
            serve.push_back(spec.loss.weighted_task
                                ? sigmoid(z_main[i])
                                : debias(z_main[i],
                                         spec.student_sampling.debias_for(held_out[i].source)));
          }
          ep.calibration_mae = calibration_mae(serve, posts);
        }
      }
      GainDecomposition gd = decompose_gain(ep.auc_teacher, ep.auc_student_raw,
                                            ep.auc_student_distill_main.front());
      ep.eta = gd.eta;
      ep.gain_scale = gd.gain_scale;
      ep.gain_distill = gd.gain_distill;
      ep.missing_signal_frac =
          window.requested == 0
              ? 0.0
              : static_cast<double>(window.missing) / static_cast<double>(window.requested);
      window = JoinStats{};
      result.evals.push_back(std::move(ep));
    }
  }

  result.resolved_alpha = alpha.value;
  return result;
}

MetricsReport run_experiment(const ExperimentSpec& spec) {
  MetricsReport report;
  report.spec = spec;
  for (std::uint64_t seed : spec.seeds) report.runs.push_back(run_one_seed(spec, seed));
  return report;
}

std::vector<MetricRow> report_rows(const MetricsReport& report) {
  std::vector<MetricRow> rows;
  auto push = [&](std::uint64_t seed, std::uint64_t step, const std::string& metric,
                  double value) {
    rows.push_back({report.spec.name, report.spec.arm, seed, step, metric, value});
  };
  for (const RunResult& run : report.runs) {
    for (const EvalPoint& ep : run.evals) {
      push(run.seed, ep.step, "auc_teacher", ep.auc_teacher);
      push(run.seed, ep.step, "auc_student_raw", ep.auc_student_raw);
      for (std::size_t k = 0; k < ep.auc_student_distill_main.size(); ++k) {
        std::string suffix = k == 0 ? "" : "_s" + std::to_string(k);
        push(run.seed, ep.step, "auc_student_distill_main" + suffix,
             ep.auc_student_distill_main[k]);
        push(run.seed, ep.step, "auc_student_distill_aux" + suffix,
             ep.auc_student_distill_aux[k]);
      }
      push(run.seed, ep.step, "eta", ep.eta);
      push(run.seed, ep.step, "gain_scale", ep.gain_scale);
      push(run.seed, ep.step, "gain_distill", ep.gain_distill);
      push(run.seed, ep.step, "missing_signal_frac", ep.missing_signal_frac);
      push(run.seed, ep.step, "calibration_mae", ep.calibration_mae);
    }
  }
  return rows;
}

}  // namespace streamkd
