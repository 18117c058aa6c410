#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "streamkd/metrics.hpp"

using namespace streamkd;

namespace {

std::string bin_path() {
  const char* env = std::getenv("STREAMKD_BIN");
  REQUIRE(env != nullptr);
  return env;
}

std::filesystem::path scratch_dir() {
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "streamkd_cli_scratch";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

/// Runs the tool with the given argument string, capturing exit code and both
/// output streams.
CliResult run_cli(const std::string& args) {
  std::filesystem::path dir = scratch_dir();
  std::filesystem::path out_file = dir / "stdout.txt";
  std::filesystem::path err_file = dir / "stderr.txt";
  std::string cmd = "'" + bin_path() + "' " + args + " >'" + out_file.string() + "' 2>'" +
                    err_file.string() + "'";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

/// small fast experiment used by the run-verb cases
std::filesystem::path write_small_config(const std::string& file_name,
                                         const std::string& extra = "") {
  std::filesystem::path path = scratch_dir() / file_name;
  std::ofstream out(path, std::ios::trunc);
  out << "experiment.name = clismoke\n"
         "experiment.arm = default\n"
         "experiment.seeds = 1,2\n"
         "generator.feature_dim = 8\n"
         "generator.interaction_pairs = 6\n"
         "generator.drift_rate = 0.004\n"
         "generator.seed = 7\n"
         "teacher.hidden = 16,8\n"
         "teacher.learning_rate = 0.01\n"
         "teacher.data_multiplier = 2\n"
         "teacher.r_s = 2\n"
         "student.backbone = 8,4\n"
         "student.towers = 4\n"
         "student.learning_rate = 0.005\n"
         "student.r_s = 2\n"
         "schedule.batch_steps = 10\n"
         "schedule.batch_size = 64\n"
         "schedule.stream_steps = 60\n"
         "schedule.stream_batch = 16\n"
         "eval.every = 20\n"
         "eval.size = 800\n"
      << extra;
  return path;
}

}  // namespace

TEST_CASE("presets verb lists every preset with its arm labels") {
  CliResult r = run_cli("presets");
  CHECK(r.exit_code == 0);
  for (const char* name :
       {"main", "capacity_grid", "arch_grid", "tower_ablation", "debias_ablation",
        "stream_ablation", "batch_ablation", "data_scaling", "mse_vs_ce", "alpha_sweep",
        "fanout_1toN"})
    CHECK_MESSAGE(contains(r.out, name), "missing preset ", name);
  CHECK(contains(r.out, "with debias, w/o debias"));
  CHECK(contains(r.out, "with stream, w/o stream"));
}

TEST_CASE("gradcheck passes at the documented tolerance and reports every loss") {
  CliResult r = run_cli("gradcheck --probes 25");
  CHECK(r.exit_code == 0);
  for (const char* label : {"task", "distill_ce", "distill_kl(tau=0.5)", "distill_kl(tau=1.0)",
                            "distill_kl(tau=2.0)", "distill_mse", "kd_debias(ce)",
                            "kd_debias(mse)"})
    CHECK_MESSAGE(contains(r.out, label), "missing loss line ", label);
  CHECK(contains(r.out, "all gradients within"));
}

TEST_CASE("gradcheck fails closed when the tolerance is below finite-difference noise") {
  CliResult r = run_cli("gradcheck --tolerance 1e-12");
  CHECK(r.exit_code == 4);
  CHECK(contains(r.err, "exceeded tolerance"));
}

TEST_CASE("gradcheck rejects an empty probe budget") {
  CliResult r = run_cli("gradcheck --probes 0");
  CHECK(r.exit_code == 2);
}

TEST_CASE("calibrate meets the threshold on the documented sampling ratios") {
  CliResult r = run_cli("calibrate --rs-list 1,2,5,10");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.out, "r_s=1"));
  CHECK(contains(r.out, "r_s=10"));
  CHECK(!contains(r.out, "FAIL"));
}

TEST_CASE("calibrate warns and relaxes the threshold on small sample counts") {
  CliResult r = run_cli("calibrate --rs-list 2 --samples 1000");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.err, "statistical power"));
  CHECK(contains(r.err, "relaxed"));
}

TEST_CASE("calibrate rejects a sampling ratio below one") {
  CliResult r = run_cli("calibrate --rs-list 0.5");
  CHECK(r.exit_code == 2);
}

TEST_CASE("run writes a csv and a resolved snapshot") {
  std::filesystem::path cfg = write_small_config("ok.cfg");
  std::filesystem::path out = scratch_dir() / "run_a";
  std::filesystem::remove_all(out);
  CliResult r = run_cli("run '" + cfg.string() + "' --out '" + out.string() + "'");
  CHECK(r.exit_code == 0);
  std::filesystem::path csv = out / "clismoke_default.csv";
  std::filesystem::path snap = out / "clismoke_default_resolved.cfg";
  REQUIRE(std::filesystem::exists(csv));
  REQUIRE(std::filesystem::exists(snap));

  std::vector<MetricRow> rows = read_metrics_csv(csv.string());
  REQUIRE(!rows.empty());
  std::set<std::uint64_t> seeds;
  for (const MetricRow& row : rows) {
    CHECK(row.experiment == "clismoke");
    CHECK(row.arm == "default");
    seeds.insert(row.seed);
  }
  CHECK(seeds == std::set<std::uint64_t>{1, 2});
  CHECK(contains(slurp(snap), "experiment.name = clismoke"));
}

TEST_CASE("run is byte-deterministic and the snapshot reproduces it") {
  std::filesystem::path cfg = write_small_config("det.cfg");
  std::filesystem::path out_a = scratch_dir() / "det_a";
  std::filesystem::path out_b = scratch_dir() / "det_b";
  std::filesystem::path out_c = scratch_dir() / "det_c";
  for (const auto& d : {out_a, out_b, out_c}) std::filesystem::remove_all(d);
  CHECK(run_cli("run '" + cfg.string() + "' --out '" + out_a.string() + "'").exit_code == 0);
  CHECK(run_cli("run '" + cfg.string() + "' --out '" + out_b.string() + "'").exit_code == 0);
  std::string csv_a = slurp(out_a / "clismoke_default.csv");
  CHECK(csv_a == slurp(out_b / "clismoke_default.csv"));

  // the resolved snapshot is a complete, runnable description of the run
  std::filesystem::path snap = out_a / "clismoke_default_resolved.cfg";
  CHECK(run_cli("run '" + snap.string() + "' --out '" + out_c.string() + "'").exit_code == 0);
  CHECK(csv_a == slurp(out_c / "clismoke_default.csv"));
}

TEST_CASE("run --seed narrows the config to a single seed") {
  std::filesystem::path cfg = write_small_config("seeded.cfg");
  std::filesystem::path out = scratch_dir() / "seeded";
  std::filesystem::remove_all(out);
  CliResult r = run_cli("run '" + cfg.string() + "' --seed 2 --out '" + out.string() + "'");
  CHECK(r.exit_code == 0);
  std::vector<MetricRow> rows = read_metrics_csv((out / "clismoke_default.csv").string());
  REQUIRE(!rows.empty());
  for (const MetricRow& row : rows) CHECK(row.seed == 2);
}

TEST_CASE("run rejects an unknown config key, naming it") {
  std::filesystem::path cfg = scratch_dir() / "bad.cfg";
  {
    std::ofstream out(cfg, std::ios::trunc);
    out << "experiment.name = x\nteachre.layers = 3\n";
  }
  CliResult r = run_cli("run '" + cfg.string() + "'");
  CHECK(r.exit_code == 2);
  CHECK(contains(r.err, "teachre.layers"));
}

TEST_CASE("run maps divergence to exit 3 and a missing file to exit 1") {
  std::filesystem::path cfg = write_small_config("diverge.cfg", "student.count = 1\n");
  {
    // rewrite with a runaway learning rate
    std::string text = slurp(cfg);
    std::string from = "student.learning_rate = 0.005";
    text.replace(text.find(from), from.size(), "student.learning_rate = 1e80");
    std::ofstream out(cfg, std::ios::trunc);
    out << text;
  }
  CliResult diverged = run_cli("run '" + cfg.string() + "' --seed 1 --out '" +
                               (scratch_dir() / "dv").string() + "'");
  CHECK(diverged.exit_code == 3);
  CHECK(contains(diverged.err, "non-finite"));

  CliResult missing = run_cli("run '" + (scratch_dir() / "absent.cfg").string() + "'");
  CHECK(missing.exit_code == 1);
}

TEST_CASE("ablate writes a combined csv plus a summary, stable across job counts") {
  std::filesystem::path out_a = scratch_dir() / "ab_a";
  std::filesystem::path out_b = scratch_dir() / "ab_b";
  for (const auto& d : {out_a, out_b}) std::filesystem::remove_all(d);

  CliResult r =
      run_cli("ablate debias_ablation --seeds 1 --out '" + out_a.string() + "'");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.out, "with debias"));
  CHECK(contains(r.out, "w/o debias"));
  // single seed: mean only, no spread column
  CHECK(!contains(r.out, "+/-"));

  std::filesystem::path csv = out_a / "debias_ablation.csv";
  std::filesystem::path summary = out_a / "debias_ablation_summary.txt";
  REQUIRE(std::filesystem::exists(csv));
  REQUIRE(std::filesystem::exists(summary));
  std::vector<MetricRow> rows = read_metrics_csv(csv.string());
  std::set<std::string> arms;
  for (const MetricRow& row : rows) {
    CHECK(row.experiment == "debias_ablation");
    CHECK(row.seed == 1);
    arms.insert(row.arm);
  }
  CHECK(arms == std::set<std::string>{"with debias", "w/o debias"});

  CliResult parallel = run_cli("ablate debias_ablation --seeds 1 --jobs 2 --out '" +
                               out_b.string() + "'");
  CHECK(parallel.exit_code == 0);
  CHECK(slurp(csv) == slurp(out_b / "debias_ablation.csv"));
}

TEST_CASE("ablate reports the per-arm spread once there are several seeds") {
  std::filesystem::path out = scratch_dir() / "ab_spread";
  std::filesystem::remove_all(out);
  CliResult r =
      run_cli("ablate batch_ablation --seeds 1,2 --out '" + out.string() + "'");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.out, "batch_and_stream"));
  CHECK(contains(r.out, "+/-"));
}

TEST_CASE("ablate rejects an unknown preset") {
  CliResult r = run_cli("ablate nosuch_preset");
  CHECK(r.exit_code == 2);
  CHECK(contains(r.err, "nosuch_preset"));
}
