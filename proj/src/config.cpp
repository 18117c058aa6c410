#include "streamkd/config.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include "streamkd/errors.hpp"
#include "streamkd/rng.hpp"
#include "streamkd/text_io.hpp"

namespace streamkd {

void PhaseSchedule::validate() const {
  if (batch_size == 0 || stream_batch == 0)
    throw config_error("schedule: batch sizes must be positive");
  if (batch_steps + stream_steps == 0)
    throw config_error("schedule: at least one training step required");
}

void EvalConfig::validate() const {
  if (every == 0) throw config_error("eval: every must be positive");
  if (size < 2) throw config_error("eval: size must be at least 2");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0)) throw config_error("loss: alpha must be non-negative");
}

void FaultSchedule::validate() const {
  if (end < start) throw config_error("fault: window end before start");
  if (!(noise_std >= 0.0)) throw config_error("fault: noise_std must be non-negative");
}

ExperimentSpec::ExperimentSpec() {
  generator.feature_dim = 16;
  generator.positive_rate_target = 0.3;
  teacher_arch.hidden_widths = {32, 16};
  student_arch.backbone_widths = {12, 6};
  student_arch.tower_widths = {6};
}

void ExperimentSpec::finalize() {
  if (generator.base_weights.empty()) {
    // deterministic in the generator seed so every run of a spec shares the
    // same ground truth; scaled for an O(2) logit standard deviation
    Rng rng(mix_seed(seed_tag::init, generator.seed, 9001));
    double scale = 2.0 / std::sqrt(static_cast<double>(generator.feature_dim));
    for (std::size_t i = 0; i < generator.feature_dim; ++i)
      generator.base_weights.push_back(scale * rng.gaussian());
  }
  teacher_arch.input_dim = generator.feature_dim;
  student_arch.input_dim = generator.feature_dim;
  generator.drift_start_step = schedule.batch_steps + schedule.drift_start;

  if (name.empty() || arm.empty())
    throw config_error("experiment: name and arm must be non-empty");
  if (seeds.empty()) throw config_error("experiment: seeds must be non-empty");
  if (student_count == 0 || student_count > 8)
    throw config_error("student: count must be in [1, 8]");
  if (teacher_data_multiplier == 0)
    throw config_error("teacher: data_multiplier must be at least 1");
  if (!(teacher_lr > 0.0) || !(student_lr > 0.0))
    throw config_error("learning rates must be positive");
  if (join.max_retries < 0) throw config_error("join: max_retries must be >= 0");
  if (join.retry_delay == 0 && join.max_retries > 0)
    throw config_error("join: retry_delay must be positive when retrying");

  generator.validate();
  teacher_arch.validate();
  student_arch.validate();
  teacher_sampling.validate();
  student_sampling.validate();
  loss.validate();
  schedule.validate();
  eval.validate();
  fault.validate();
}

namespace {

bool parse_flag(std::string_view v) {
  if (v == "on" || v == "true") return true;
  if (v == "off" || v == "false") return false;
  throw config_error("expected on/off, got '" + std::string(v) + "'");
}

std::vector<std::uint64_t> parse_u64_list(std::string_view v) {
  std::vector<std::uint64_t> out;
  for (auto piece : split(v, ',')) {
    long long x = parse_int(trim(piece));
    if (x < 0) throw config_error("expected non-negative integers");
    out.push_back(static_cast<std::uint64_t>(x));
  }
  return out;
}

std::vector<std::size_t> parse_width_list(std::string_view v) {
  if (trim(v) == "none") return {};
  std::vector<std::size_t> out;
  for (auto piece : split(v, ',')) {
    long long x = parse_int(trim(piece));
    if (x <= 0) throw config_error("widths must be positive");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

std::vector<double> parse_real_list(std::string_view v) {
  if (trim(v) == "auto") return {};
  std::vector<double> out;
  for (auto piece : split(v, ',')) out.push_back(parse_real(trim(piece)));
  return out;
}

std::vector<TrafficSource> parse_sources(std::string_view v) {
  std::vector<TrafficSource> out;
  for (auto piece : split(v, ',')) {
    auto parts = split(trim(piece), ':');
    if (parts.size() != 2)
      throw config_error("expected name:share pairs, got '" +
                         std::string(piece) + "'");
    out.push_back({std::string(trim(parts[0])), parse_real(trim(parts[1]))});
  }
  return out;
}

std::map<std::string, double> parse_p_x(std::string_view v) {
  std::map<std::string, double> out;
  std::string_view t = trim(v);
  if (t.find(':') == std::string_view::npos) {
    out["*"] = parse_real(t);
    return out;
  }
  for (auto piece : split(t, ',')) {
    auto parts = split(trim(piece), ':');
    if (parts.size() != 2)
      throw config_error("expected name:retention pairs, got '" +
                         std::string(piece) + "'");
    std::string key(trim(parts[0]));
    if (out.count(key)) throw config_error("repeated source '" + key + "'");
    out[key] = parse_real(trim(parts[1]));
  }
  return out;
}

std::string join_list(const std::vector<std::uint64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_widths(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(v[i]);
  }
  return out;
}

// full precision, not fmt_real9: base weights are the ground truth of a run,
// and a rendered snapshot must reproduce it bit-exactly when run again
std::string join_reals(const std::vector<double>& v) {
  std::string out;
  char buf[40];
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
    out += buf;
  }
  return out;
}

std::string join_sources(const std::vector<TrafficSource>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    out += v[i].tag + ":" + fmt_real9(v[i].probability);
  }
  return out;
}

std::string join_p_x(const std::map<std::string, double>& m) {
  if (m.size() == 1 && m.count("*")) return fmt_real9(m.at("*"));
  std::string out;
  bool first = true;
  for (const auto& [k, v] : m) {
    if (!first) out.push_back(',');
    first = false;
    out += k + ":" + fmt_real9(v);
  }
  return out;
}

using Setter = std::function<void(ExperimentSpec&, std::string_view)>;

/// one entry per config key, in render order
const std::vector<std::pair<std::string, Setter>>& key_table() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"experiment.name",
       [](ExperimentSpec& s, std::string_view v) { s.name = std::string(v); }},
      {"experiment.arm",
       [](ExperimentSpec& s, std::string_view v) { s.arm = std::string(v); }},
      {"experiment.seeds",
       [](ExperimentSpec& s, std::string_view v) { s.seeds = parse_u64_list(v); }},

      {"generator.feature_dim",
       [](ExperimentSpec& s, std::string_view v) {
         long long d = parse_int(v);
         if (d <= 0) throw config_error("feature_dim must be positive");
         s.generator.feature_dim = static_cast<std::size_t>(d);
       }},
      {"generator.base_weights",
       [](ExperimentSpec& s, std::string_view v) {
         s.generator.base_weights = parse_real_list(v);
       }},
      {"generator.drift_rate",
       [](ExperimentSpec& s, std::string_view v) {
         s.generator.drift_rate = parse_real(v);
       }},
      {"generator.noise_std",
       [](ExperimentSpec& s, std::string_view v) {
         s.generator.noise_std = parse_real(v);
       }},
      {"generator.positive_rate_target",
       [](ExperimentSpec& s, std::string_view v) {
         s.generator.positive_rate_target = parse_real(v);
       }},
      {"generator.interaction_strength",
       [](ExperimentSpec& s, std::string_view v) {
         s.generator.interaction_strength = parse_real(v);
       }},
      {"generator.interaction_pairs",
       [](ExperimentSpec& s, std::string_view v) {
         long long n = parse_int(v);
         if (n < 0) throw config_error("interaction_pairs must be >= 0");
         s.generator.interaction_pairs = static_cast<std::size_t>(n);
       }},
      {"generator.traffic_sources",
       [](ExperimentSpec& s, std::string_view v) {
         s.generator.traffic_sources = parse_sources(v);
       }},
      {"generator.seed",
       [](ExperimentSpec& s, std::string_view v) {
         long long x = parse_int(v);
         if (x < 0) throw config_error("seed must be non-negative");
         s.generator.seed = static_cast<std::uint64_t>(x);
       }},

      {"teacher.hidden",
       [](ExperimentSpec& s, std::string_view v) {
         s.teacher_arch.hidden_widths = parse_width_list(v);
       }},
      {"teacher.learning_rate",
       [](ExperimentSpec& s, std::string_view v) { s.teacher_lr = parse_real(v); }},
      {"teacher.data_multiplier",
       [](ExperimentSpec& s, std::string_view v) {
         long long m = parse_int(v);
         if (m <= 0) throw config_error("data_multiplier must be positive");
         s.teacher_data_multiplier = static_cast<std::size_t>(m);
       }},
      {"teacher.r_s",
       [](ExperimentSpec& s, std::string_view v) {
         s.teacher_sampling.r_s = parse_real(v);
       }},
      {"teacher.r_plus",
       [](ExperimentSpec& s, std::string_view v) {
         s.teacher_sampling.r_plus = parse_real(v);
       }},
      {"teacher.b_s",
       [](ExperimentSpec& s, std::string_view v) {
         s.teacher_sampling.b_s = parse_real(v);
       }},
      {"teacher.p_x",
       [](ExperimentSpec& s, std::string_view v) {
         s.teacher_sampling.p_x_by_source = parse_p_x(v);
       }},

      {"student.backbone",
       [](ExperimentSpec& s, std::string_view v) {
         s.student_arch.backbone_widths = parse_width_list(v);
       }},
      {"student.towers",
       [](ExperimentSpec& s, std::string_view v) {
         s.student_arch.tower_widths = parse_width_list(v);
       }},
      {"student.count",
       [](ExperimentSpec& s, std::string_view v) {
         long long n = parse_int(v);
         if (n <= 0) throw config_error("count must be positive");
         s.student_count = static_cast<std::size_t>(n);
       }},
      {"student.learning_rate",
       [](ExperimentSpec& s, std::string_view v) { s.student_lr = parse_real(v); }},
      {"student.r_s",
       [](ExperimentSpec& s, std::string_view v) {
         s.student_sampling.r_s = parse_real(v);
       }},
      {"student.r_plus",
       [](ExperimentSpec& s, std::string_view v) {
         s.student_sampling.r_plus = parse_real(v);
       }},
      {"student.b_s",
       [](ExperimentSpec& s, std::string_view v) {
         s.student_sampling.b_s = parse_real(v);
       }},
      {"student.p_x",
       [](ExperimentSpec& s, std::string_view v) {
         s.student_sampling.p_x_by_source = parse_p_x(v);
       }},

      {"loss.alpha",
       [](ExperimentSpec& s, std::string_view v) {
         if (trim(v) == "auto") {
           s.loss.alpha_auto = true;
         } else {
           s.loss.alpha_auto = false;
           s.loss.alpha = parse_real(v);
         }
       }},
      {"loss.metric",
       [](ExperimentSpec& s, std::string_view v) {
         if (v == "ce")
           s.loss.metric = DistillMetric::ce;
         else if (v == "mse")
           s.loss.metric = DistillMetric::mse;
         else
           throw config_error("metric must be ce or mse");
       }},
      {"loss.task_weighting",
       [](ExperimentSpec& s, std::string_view v) {
         if (v == "inverse_keep")
           s.loss.weighted_task = true;
         else if (v == "none")
           s.loss.weighted_task = false;
         else
           throw config_error("task_weighting must be inverse_keep or none");
       }},

      {"join.availability_lag",
       [](ExperimentSpec& s, std::string_view v) {
         long long lag = parse_int(v);
         if (lag < 0) throw config_error("availability_lag must be >= 0");
         s.availability_lag = static_cast<std::uint64_t>(lag);
       }},
      {"join.max_retries",
       [](ExperimentSpec& s, std::string_view v) {
         long long r = parse_int(v);
         if (r < 0) throw config_error("max_retries must be >= 0");
         s.join.max_retries = static_cast<int>(r);
       }},
      {"join.retry_delay",
       [](ExperimentSpec& s, std::string_view v) {
         long long d = parse_int(v);
         if (d < 0) throw config_error("retry_delay must be >= 0");
         s.join.retry_delay = static_cast<std::uint64_t>(d);
       }},
      {"join.missing_policy",
       [](ExperimentSpec& s, std::string_view v) {
         s.missing_policy = parse_missing_policy(std::string(v));
       }},

      {"schedule.batch_steps",
       [](ExperimentSpec& s, std::string_view v) {
         s.schedule.batch_steps = static_cast<std::uint64_t>(parse_int(v));
       }},
      {"schedule.batch_size",
       [](ExperimentSpec& s, std::string_view v) {
         long long n = parse_int(v);
         if (n <= 0) throw config_error("batch_size must be positive");
         s.schedule.batch_size = static_cast<std::size_t>(n);
       }},
      {"schedule.stream_steps",
       [](ExperimentSpec& s, std::string_view v) {
         s.schedule.stream_steps = static_cast<std::uint64_t>(parse_int(v));
       }},
      {"schedule.stream_batch",
       [](ExperimentSpec& s, std::string_view v) {
         long long n = parse_int(v);
         if (n <= 0) throw config_error("stream_batch must be positive");
         s.schedule.stream_batch = static_cast<std::size_t>(n);
       }},
      {"schedule.drift_start",
       [](ExperimentSpec& s, std::string_view v) {
         s.schedule.drift_start = static_cast<std::uint64_t>(parse_int(v));
       }},

      {"eval.every",
       [](ExperimentSpec& s, std::string_view v) {
         s.eval.every = static_cast<std::uint64_t>(parse_int(v));
       }},
      {"eval.size",
       [](ExperimentSpec& s, std::string_view v) {
         long long n = parse_int(v);
         if (n <= 0) throw config_error("eval size must be positive");
         s.eval.size = static_cast<std::size_t>(n);
       }},

      {"mode.distill",
       [](ExperimentSpec& s, std::string_view v) { s.mode.distill = parse_flag(v); }},
      {"mode.decoupled",
       [](ExperimentSpec& s, std::string_view v) {
         s.mode.decoupled = parse_flag(v);
       }},
      {"mode.aux_loss",
       [](ExperimentSpec& s, std::string_view v) {
         if (v == "task_distill")
           s.mode.aux_task = true;
         else if (v == "distill_only")
           s.mode.aux_task = false;
         else
           throw config_error("aux_loss must be task_distill or distill_only");
       }},
      {"mode.debias",
       [](ExperimentSpec& s, std::string_view v) { s.mode.debias = parse_flag(v); }},
      {"mode.teacher_rebias",
       [](ExperimentSpec& s, std::string_view v) {
         s.mode.teacher_rebias = parse_flag(v);
       }},
      {"mode.stream_distill",
       [](ExperimentSpec& s, std::string_view v) {
         s.mode.stream_distill = parse_flag(v);
       }},
      {"mode.batch_distill",
       [](ExperimentSpec& s, std::string_view v) {
         s.mode.batch_distill = parse_flag(v);
       }},

      {"fault.start",
       [](ExperimentSpec& s, std::string_view v) {
         s.fault.start = static_cast<std::uint64_t>(parse_int(v));
       }},
      {"fault.end",
       [](ExperimentSpec& s, std::string_view v) {
         s.fault.end = static_cast<std::uint64_t>(parse_int(v));
       }},
      {"fault.flagged",
       [](ExperimentSpec& s, std::string_view v) { s.fault.flagged = parse_flag(v); }},
      {"fault.noise_std",
       [](ExperimentSpec& s, std::string_view v) {
         s.fault.noise_std = parse_real(v);
       }},
  };
  return table;
}

const Setter* find_setter(std::string_view key) {
  for (const auto& [name, setter] : key_table())
    if (name == key) return &setter;
  return nullptr;
}

}  // namespace

ExperimentSpec parse_experiment_text(const std::string& text,
                                     const std::string& origin) {
  ExperimentSpec spec;
  std::set<std::string> seen;
  auto lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::string where = origin + ":" + std::to_string(i + 1);

    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw config_error(where + ": expected 'section.key = value'");
    std::string key(trim(line.substr(0, eq)));
    std::string_view value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw config_error(where + ": empty key or value");

    const Setter* setter = find_setter(key);
    if (!setter) throw config_error(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw config_error(where + ": repeated key '" + key + "'");
    try {
      (*setter)(spec, value);
    } catch (const config_error& e) {
      throw config_error(where + ": " + e.what());
    } catch (const parse_error& e) {
      throw config_error(where + ": " + e.what());
    }
  }
  try {
    spec.finalize();
  } catch (const config_error& e) {
    throw config_error(origin + ": " + e.what());
  }
  return spec;
}

ExperimentSpec parse_experiment_file(const std::string& path) {
  return parse_experiment_text(read_file(path), path);
}

std::string render_experiment(const ExperimentSpec& s) {
  std::map<std::string, std::string> values = {
      {"experiment.name", s.name},
      {"experiment.arm", s.arm},
      {"experiment.seeds", join_list(s.seeds)},
      {"generator.feature_dim", std::to_string(s.generator.feature_dim)},
      {"generator.base_weights", join_reals(s.generator.base_weights)},
      {"generator.drift_rate", fmt_real9(s.generator.drift_rate)},
      {"generator.noise_std", fmt_real9(s.generator.noise_std)},
      {"generator.positive_rate_target",
       fmt_real9(s.generator.positive_rate_target)},
      {"generator.interaction_strength",
       fmt_real9(s.generator.interaction_strength)},
      {"generator.interaction_pairs",
       std::to_string(s.generator.interaction_pairs)},
      {"generator.traffic_sources",
       s.generator.traffic_sources.empty()
           ? "organic:1"
           : join_sources(s.generator.traffic_sources)},
      {"generator.seed", std::to_string(s.generator.seed)},
      {"teacher.hidden", join_widths(s.teacher_arch.hidden_widths)},
      {"teacher.learning_rate", fmt_real9(s.teacher_lr)},
      {"teacher.data_multiplier", std::to_string(s.teacher_data_multiplier)},
      {"teacher.r_s", fmt_real9(s.teacher_sampling.r_s)},
      {"teacher.r_plus", fmt_real9(s.teacher_sampling.r_plus)},
      {"teacher.b_s", fmt_real9(s.teacher_sampling.b_s)},
      {"teacher.p_x", s.teacher_sampling.p_x_by_source.empty()
                          ? "1"
                          : join_p_x(s.teacher_sampling.p_x_by_source)},
      {"student.backbone", join_widths(s.student_arch.backbone_widths)},
      {"student.towers", join_widths(s.student_arch.tower_widths)},
      {"student.count", std::to_string(s.student_count)},
      {"student.learning_rate", fmt_real9(s.student_lr)},
      {"student.r_s", fmt_real9(s.student_sampling.r_s)},
      {"student.r_plus", fmt_real9(s.student_sampling.r_plus)},
      {"student.b_s", fmt_real9(s.student_sampling.b_s)},
      {"student.p_x", s.student_sampling.p_x_by_source.empty()
                          ? "1"
                          : join_p_x(s.student_sampling.p_x_by_source)},
      {"loss.alpha", s.loss.alpha_auto ? "auto" : fmt_real9(s.loss.alpha)},
      {"loss.metric", s.loss.metric == DistillMetric::ce ? "ce" : "mse"},
      {"loss.task_weighting", s.loss.weighted_task ? "inverse_keep" : "none"},
      {"join.availability_lag", std::to_string(s.availability_lag)},
      {"join.max_retries", std::to_string(s.join.max_retries)},
      {"join.retry_delay", std::to_string(s.join.retry_delay)},
      {"join.missing_policy", format_missing_policy(s.missing_policy)},
      {"schedule.batch_steps", std::to_string(s.schedule.batch_steps)},
      {"schedule.batch_size", std::to_string(s.schedule.batch_size)},
      {"schedule.stream_steps", std::to_string(s.schedule.stream_steps)},
      {"schedule.stream_batch", std::to_string(s.schedule.stream_batch)},
      {"schedule.drift_start", std::to_string(s.schedule.drift_start)},
      {"eval.every", std::to_string(s.eval.every)},
      {"eval.size", std::to_string(s.eval.size)},
      {"mode.distill", s.mode.distill ? "on" : "off"},
      {"mode.decoupled", s.mode.decoupled ? "on" : "off"},
      {"mode.aux_loss", s.mode.aux_task ? "task_distill" : "distill_only"},
      {"mode.debias", s.mode.debias ? "on" : "off"},
      {"mode.teacher_rebias", s.mode.teacher_rebias ? "on" : "off"},
      {"mode.stream_distill", s.mode.stream_distill ? "on" : "off"},
      {"mode.batch_distill", s.mode.batch_distill ? "on" : "off"},
      {"fault.start", std::to_string(s.fault.start)},
      {"fault.end", std::to_string(s.fault.end)},
      {"fault.flagged", s.fault.flagged ? "on" : "off"},
      {"fault.noise_std", fmt_real9(s.fault.noise_std)},
  };

  std::string out;
  for (const auto& [key, setter] : key_table()) {
    (void)setter;
    out += key;
    out += " = ";
    out += values.at(key);
    out.push_back('\n');
  }
  return out;
}

}  // namespace streamkd
