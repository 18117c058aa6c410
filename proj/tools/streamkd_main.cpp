// Command-line workbench for the streaming distillation pipeline.
//
//   run        train one experiment config, write metrics CSV + resolved config
//   ablate     run every arm of a named preset, write combined CSV + summary
//   gradcheck  audit every loss gradient against finite differences
//   calibrate  audit the sampling correction against Monte Carlo resampling
//   presets    list the built-in presets and their arms
//
// Exit codes: 0 success, 1 I/O failure, 2 bad config or usage, 3 numeric
// divergence during training, 4 validation command found a violation.

#include <CLI11.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "streamkd/config.hpp"
#include "streamkd/errors.hpp"
#include "streamkd/losses.hpp"
#include "streamkd/metrics.hpp"
#include "streamkd/numerics.hpp"
#include "streamkd/pipeline.hpp"
#include "streamkd/rng.hpp"

namespace {

using namespace streamkd;

/// File-name-safe version of an arm or experiment label ("w/o debias" ->
/// "w_o_debias"); keeps letters, digits, dot, dash, underscore.
std::string sanitize_component(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
              (c >= '0' && c <= '9') || c == '.' || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out;
}

/// --out flag wins, then $STREAMKD_OUT, then the current directory. The
/// directory is created if missing.
std::filesystem::path resolve_out_dir(const std::string& flag) {
  std::string dir = flag;
  if (dir.empty()) {
    const char* env = std::getenv("STREAMKD_OUT");
    if (env != nullptr && env[0] != '\0') dir = env;
  }
  if (dir.empty()) dir = ".";
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create output directory '" + dir + "': " + ec.message());
  return dir;
}

/// temp file + rename, same atomicity contract as the CSV writer
void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw io_error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw io_error("cannot rename '" + tmp.string() + "' to '" + path.string() + "'");
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean; meaningful only when n > 1
  std::size_t n = 0;
};

MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe m;
  m.n = xs.size();
  if (xs.empty()) return m;
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    double var = ss / static_cast<double>(xs.size() - 1);
    m.se = std::sqrt(var / static_cast<double>(xs.size()));
  }
  return m;
}

/// "0.712345 +/- 0.002101", or just the mean with blank padding for a single
/// seed (no spread to report)
std::string fmt_pm(const MeanSe& m, int prec) {
  char buf[64];
  if (m.n > 1) {
    std::snprintf(buf, sizeof(buf), "%.*f +/- %.*f", prec, m.mean, prec, m.se);
  } else {
    std::snprintf(buf, sizeof(buf), "%.*f", prec, m.mean);
  }
  return buf;
}

std::string pad_to(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

// ---------------------------------------------------------------------------
// run

int cmd_run(const std::string& config_path, bool seed_set, std::uint64_t seed,
            const std::string& out_flag) {
  ExperimentSpec spec = parse_experiment_file(config_path);
  if (seed_set) {
    spec.seeds = {seed};
    spec.finalize();
  }
  std::filesystem::path out = resolve_out_dir(out_flag);

  MetricsReport report = run_experiment(spec);

  std::string base = sanitize_component(spec.name) + "_" + sanitize_component(spec.arm);
  std::filesystem::path csv = out / (base + ".csv");
  std::vector<MetricRow> rows = report_rows(report);
  write_metrics_csv(csv.string(), rows);
  std::filesystem::path snapshot = out / (base + "_resolved.cfg");
  write_text_atomic(snapshot, render_experiment(spec));

  for (const RunResult& run : report.runs) {
    const EvalPoint& last = run.evals.back();
    std::printf("seed %llu: teacher %.6f  raw %.6f  distilled %.6f  eta %.4f\n",
                static_cast<unsigned long long>(run.seed), last.auc_teacher,
                last.auc_student_raw, last.auc_student_distill_main[0], last.eta);
  }
  std::printf("wrote %s (%zu rows)\n", csv.string().c_str(), rows.size());
  std::printf("wrote %s\n", snapshot.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const std::string& preset_name, const std::vector<std::uint64_t>& seed_override,
               const std::string& out_flag, int jobs) {
  std::vector<ExperimentSpec> arms = preset(preset_name);
  if (!seed_override.empty())
    for (ExperimentSpec& arm : arms) {
      arm.seeds = seed_override;
      arm.finalize();
    }
  std::filesystem::path out = resolve_out_dir(out_flag);

  // Arms run independently (optionally on worker threads); results are merged
  // in definition order, so the combined CSV is identical at any job count.
  std::vector<MetricsReport> reports(arms.size());
  std::vector<std::exception_ptr> failures(arms.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = cursor.fetch_add(1);
      if (i >= arms.size()) return;
      try {
        reports[i] = run_experiment(arms[i]);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  int thread_count = std::min<int>(jobs, static_cast<int>(arms.size()));
  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& p : failures)
    if (p) std::rethrow_exception(p);

  std::vector<MetricRow> all_rows;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    std::vector<MetricRow> rows = report_rows(reports[i]);
    all_rows.insert(all_rows.end(), rows.begin(), rows.end());
    std::filesystem::path snapshot =
        out / (sanitize_component(preset_name) + "_" + sanitize_component(arms[i].arm) +
               "_resolved.cfg");
    write_text_atomic(snapshot, render_experiment(arms[i]));
  }
  std::filesystem::path csv = out / (sanitize_component(preset_name) + ".csv");
  write_metrics_csv(csv.string(), all_rows);

  // Summary: per-arm mean +/- standard error over seeds of the final eval
  // point's served-head AUC and transferability.
  std::size_t arm_width = 4;
  for (const ExperimentSpec& a : arms) arm_width = std::max(arm_width, a.arm.size());
  arm_width += 2;
  std::string table = pad_to("arm", arm_width) + "seeds  " +
                      pad_to("auc_distill_main", 24) + "eta\n";
  for (std::size_t i = 0; i < arms.size(); ++i) {
    std::vector<double> aucs, etas;
    for (const RunResult& run : reports[i].runs) {
      aucs.push_back(run.evals.back().auc_student_distill_main[0]);
      etas.push_back(run.evals.back().eta);
    }
    char count[16];
    std::snprintf(count, sizeof(count), "%5zu  ", reports[i].runs.size());
    table += pad_to(arms[i].arm, arm_width);
    table += count;
    table += pad_to(fmt_pm(mean_se(aucs), 6), 24);
    table += fmt_pm(mean_se(etas), 4);
    table.push_back('\n');
  }
  std::filesystem::path summary = out / (sanitize_component(preset_name) + "_summary.txt");
  write_text_atomic(summary, table);

  std::fputs(table.c_str(), stdout);
  std::printf("wrote %s (%zu rows)\n", csv.string().c_str(), all_rows.size());
  std::printf("wrote %s\n", summary.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(int probes, double tolerance) {
  // Batched scalar losses on small random relu nets; every loss is summed over
  // the same four inputs so both label branches and a spread of teacher
  // targets are exercised.
  Rng rng(415);
  const std::size_t dim = 4;
  std::vector<std::vector<double>> inputs(4, std::vector<double>(dim));
  for (auto& x : inputs)
    for (double& v : x) v = rng.gaussian();
  const std::vector<double> labels = {1.0, 0.0, 1.0, 0.0};
  std::vector<double> teacher_p(inputs.size());
  std::vector<double> teacher_z(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    teacher_p[i] = rng.uniform(0.05, 0.95);
    teacher_z[i] = 1.5 * rng.gaussian();
  }
  DebiasParams d{5.0, 0.9, 0.8, 0.1};

  using PerSample = std::function<LossValue(double, std::size_t)>;
  struct Case {
    std::string label;
    PerSample per;
  };
  std::vector<Case> cases;
  cases.push_back({"task", [&](double z, std::size_t i) { return task_loss(z, labels[i]); }});
  cases.push_back(
      {"distill_ce", [&](double z, std::size_t i) { return distill_ce(teacher_p[i], z); }});
  for (double tau : {0.5, 1.0, 2.0}) {
    char label[32];
    std::snprintf(label, sizeof(label), "distill_kl(tau=%.1f)", tau);
    cases.push_back({label, [&, tau](double z, std::size_t i) {
                       return distill_kl(teacher_z[i], z, tau);
                     }});
  }
  cases.push_back(
      {"distill_mse", [&](double z, std::size_t i) { return distill_mse(teacher_p[i], z); }});
  cases.push_back({"kd_debias(ce)", [&](double z, std::size_t i) {
                     return kd_debias_loss(teacher_z[i], z, d, DistillMetric::ce);
                   }});
  cases.push_back({"kd_debias(mse)", [&](double z, std::size_t i) {
                     return kd_debias_loss(teacher_z[i], z, d, DistillMetric::mse);
                   }});

  std::vector<std::string> failing;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    MlpParams net = build_mlp(dim, {8, 6}, 1, Activation::relu, Activation::identity, rng);
    const PerSample& per = cases[k].per;
    auto batch = [&inputs, &per](const MlpParams& p) {
      GradientTape tape = GradientTape::zeros_like(p);
      double total = 0.0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        ForwardCache cache;
        double z = mlp_forward_logit(p, inputs[i], &cache);
        LossValue lv = per(z, i);
        total += lv.value;
        mlp_backward_logit(p, cache, lv.dL_dz, tape);
      }
      return std::make_pair(total, tape);
    };
    double worst = grad_check(batch, net, probes, 1e-5, 1000 + static_cast<std::uint64_t>(k));
    std::printf("%-20s worst relative error %.3e\n", cases[k].label.c_str(), worst);
    if (!(worst <= tolerance)) failing.push_back(cases[k].label);
  }
  if (!failing.empty()) {
    for (const std::string& label : failing)
      std::fprintf(stderr, "gradcheck: %s exceeded tolerance %.1e\n", label.c_str(), tolerance);
    return 4;
  }
  std::printf("all gradients within %.1e of finite differences\n", tolerance);
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate

int cmd_calibrate(const std::vector<double>& rs_list, std::uint64_t samples) {
  // Resample a grid of known posteriors under keep-one-in-r_s negative
  // thinning, then check that the corrected probability recovers the truth.
  // The 0.01 pass threshold assumes 1e6 draws per grid point; below that it
  // relaxes by the Monte Carlo error scaling sqrt(1e6 / samples).
  const std::vector<double> posteriors = {0.05, 0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 0.9};
  double threshold = 0.01 * std::max(1.0, std::sqrt(1e6 / static_cast<double>(samples)));
  if (samples < 10000)
    std::fprintf(stderr,
                 "calibrate: warning: %llu draws per grid point is too few for "
                 "statistical power; pass threshold relaxed to %.4f "
                 "(0.01 * sqrt(1e6 / samples))\n",
                 static_cast<unsigned long long>(samples), threshold);

  bool all_pass = true;
  for (std::size_t k = 0; k < rs_list.size(); ++k) {
    DebiasParams d;
    d.r_s = rs_list[k];
    d.validate();
    Rng rng(mix_seed(0x63616c6962ULL, static_cast<std::uint64_t>(k)));
    double abs_sum = 0.0;
    for (double p : posteriors) {
      std::uint64_t positives = 0, kept_negatives = 0;
      for (std::uint64_t i = 0; i < samples; ++i) {
        if (rng.chance(p))
          ++positives;
        else if (rng.chance(1.0 / d.r_s))
          ++kept_negatives;
      }
      double biased =
          clamp_prob(static_cast<double>(positives) /
                     static_cast<double>(std::max<std::uint64_t>(positives + kept_negatives, 1)));
      double corrected = debias(std::log(biased / (1.0 - biased)), d);
      abs_sum += std::abs(corrected - p);
    }
    double mae = abs_sum / static_cast<double>(posteriors.size());
    bool pass = mae <= threshold;
    std::printf("r_s=%-6g mae %.6f (threshold %.4f) %s\n", d.r_s, mae, threshold,
                pass ? "ok" : "FAIL");
    if (!pass) {
      std::fprintf(stderr, "calibrate: correction at r_s=%g missed the threshold\n", d.r_s);
      all_pass = false;
    }
  }
  return all_pass ? 0 : 4;
}

// ---------------------------------------------------------------------------
// presets

int cmd_presets() {
  for (const std::string& name : preset_names()) {
    std::vector<ExperimentSpec> arms = preset(name);
    std::string labels;
    for (std::size_t i = 0; i < arms.size(); ++i) {
      if (i) labels += ", ";
      labels += arms[i].arm;
    }
    std::printf("%-18s %s\n", name.c_str(), labels.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streaming teacher-student distillation workbench"};
  app.require_subcommand(1);
  app.footer("Output directory: --out flag, else $STREAMKD_OUT, else the current directory.");

  std::string config_path, out_flag, preset_name;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seed_list;
  int jobs = 1, probes = 20;
  double tolerance = 1e-5;
  std::vector<double> rs_list = {1.0, 2.0, 5.0, 10.0};
  std::uint64_t samples = 1000000;

  CLI::App* run_cmd = app.add_subcommand("run", "train one experiment config");
  run_cmd->add_option("config", config_path, "experiment config file")->required();
  CLI::Option* seed_opt =
      run_cmd->add_option("--seed", seed, "replace the config's seed list with this one seed");
  run_cmd->add_option("--out", out_flag, "output directory");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run every arm of a preset");
  ablate_cmd->add_option("preset", preset_name, "preset name (see 'presets')")->required();
  ablate_cmd->add_option("--seeds", seed_list, "comma-separated seed list override")
      ->delimiter(',');
  ablate_cmd->add_option("--out", out_flag, "output directory");
  ablate_cmd->add_option("--jobs", jobs, "worker threads across arms")
      ->default_val(1)
      ->check(CLI::Range(1, 64));

  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference audit of every loss");
  grad_cmd->add_option("--probes", probes, "parameter probes per loss")
      ->default_val(20)
      ->check(CLI::Range(1, 1000000));
  grad_cmd->add_option("--tolerance", tolerance, "max relative error accepted")
      ->default_val(1e-5)
      ->check(CLI::PositiveNumber);

  CLI::App* cal_cmd =
      app.add_subcommand("calibrate", "Monte Carlo audit of the sampling correction");
  cal_cmd->add_option("--rs-list", rs_list, "comma-separated negative sampling ratios")
      ->delimiter(',');
  cal_cmd->add_option("--samples", samples, "Monte Carlo draws per grid point")
      ->default_val(1000000)
      ->check(CLI::Range(std::uint64_t{1}, std::uint64_t{2000000000}));

  CLI::App* presets_cmd = app.add_subcommand("presets", "list presets and their arms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run_cmd->parsed())
      return cmd_run(config_path, seed_opt->count() > 0, seed, out_flag);
    if (ablate_cmd->parsed()) return cmd_ablate(preset_name, seed_list, out_flag, jobs);
    if (grad_cmd->parsed()) return cmd_gradcheck(probes, tolerance);
    if (cal_cmd->parsed()) return cmd_calibrate(rs_list, samples);
    if (presets_cmd->parsed()) return cmd_presets();
    return 2;
  } catch (const config_error& e) {
    std::cerr << "streamkd: config error: " << e.what() << "\n";
    return 2;
  } catch (const parse_error& e) {
    std::cerr << "streamkd: parse error: " << e.what() << "\n";
    return 2;
  } catch (const shape_error& e) {
    std::cerr << "streamkd: shape error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    std::cerr << "streamkd: numeric error: " << e.what() << "\n";
    return 3;
  } catch (const io_error& e) {
    std::cerr << "streamkd: io error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "streamkd: error: " << e.what() << "\n";
    return 1;
  }
}
