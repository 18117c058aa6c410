#include "streamkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "streamkd/errors.hpp"
#include "streamkd/text_io.hpp"

namespace streamkd {

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw config_error("auc: scores and labels differ in length");
  if (scores.empty()) throw config_error("auc: empty input");

  std::size_t n = scores.size();
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw config_error("auc: labels must be 0 or 1");
    positives += static_cast<std::size_t>(labels[i]);
    if (!std::isfinite(scores[i])) throw config_error("auc: non-finite score");
  }
  std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0)
    throw config_error("auc: needs both a positive and a negative example");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // average 1-based ranks over tie groups, accumulate ranks of positives
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) positive_rank_sum += avg_rank;
    i = j;
  }

  double np = static_cast<double>(positives);
  double nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double transferability(double p_teacher, double p_student_raw,
                       double p_student_distill) {
  double headroom = std::max(p_teacher - p_student_raw, kHeadroomFloor);
  return (p_student_distill - p_student_raw) / headroom;
}

GainDecomposition decompose_gain(double p_teacher, double p_student_raw,
                                 double p_student_distill) {
  GainDecomposition g;
  g.gain_scale = p_teacher - p_student_raw;
  g.gain_distill = p_student_distill - p_student_raw;
  g.eta = transferability(p_teacher, p_student_raw, p_student_distill);
  return g;
}

double calibration_mae(const std::vector<double>& predicted,
                       const std::vector<double>& reference) {
  if (predicted.size() != reference.size())
    throw config_error("calibration_mae: length mismatch");
  if (predicted.empty()) throw config_error("calibration_mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    s += std::abs(predicted[i] - reference[i]);
  return s / static_cast<double>(predicted.size());
}

namespace {
const char kCsvHeader[] = "experiment,arm,seed,step,metric,value";

bool row_less(const MetricRow& a, const MetricRow& b) {
  if (a.experiment != b.experiment) return a.experiment < b.experiment;
  if (a.arm != b.arm) return a.arm < b.arm;
  if (a.seed != b.seed) return a.seed < b.seed;
  if (a.step != b.step) return a.step < b.step;
  return a.metric < b.metric;
}
}  // namespace

void write_metrics_csv(const std::string& path, std::vector<MetricRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), row_less);
  std::string out(kCsvHeader);
  out.push_back('\n');
  for (const auto& r : rows) {
    if (r.experiment.find(',') != std::string::npos ||
        r.arm.find(',') != std::string::npos ||
        r.metric.find(',') != std::string::npos)
      throw config_error("metrics csv: field contains a comma");
    out += r.experiment;
    out.push_back(',');
    out += r.arm;
    out.push_back(',');
    out += std::to_string(r.seed);
    out.push_back(',');
    out += std::to_string(r.step);
    out.push_back(',');
    out += r.metric;
    out.push_back(',');
    out += fmt_real9(r.value);
    out.push_back('\n');
  }
  atomic_write_file(path, out);
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
  std::string content = read_file(path);
  auto lines = split(content, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines[0] != kCsvHeader)
    throw parse_error(path + ":1: expected header '" + kCsvHeader + "'");

  std::vector<MetricRow> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto fields = split(lines[i], ',');
    if (fields.size() != 6)
      throw parse_error(path + ":" + std::to_string(i + 1) +
                        ": expected 6 fields, got " +
                        std::to_string(fields.size()));
    MetricRow r;
    r.experiment = std::string(fields[0]);
    r.arm = std::string(fields[1]);
    try {
      long long seed = parse_int(fields[2]);
      long long step = parse_int(fields[3]);
      if (seed < 0 || step < 0)
        throw parse_error("seed and step must be non-negative");
      r.seed = static_cast<std::uint64_t>(seed);
      r.step = static_cast<std::uint64_t>(step);
      r.value = parse_real(fields[5]);
    } catch (const parse_error& e) {
      throw parse_error(path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    r.metric = std::string(fields[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace streamkd
