#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace streamkd {

/// Area under the ROC curve from scores and binary labels, computed with
/// average ranks so tied scores contribute half weight. Throws config_error
/// unless both classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Floor applied to the teacher-over-baseline headroom before dividing, so a
/// vanishing gap cannot blow up the ratio.
inline constexpr double kHeadroomFloor = 1e-4;

/// Fraction of the teacher's headroom over the raw student that the distilled
/// student recovers: (p_student_distill - p_student_raw) / headroom, with the
/// headroom floored at kHeadroomFloor.
double transferability(double p_teacher, double p_student_raw,
                       double p_student_distill);

struct GainDecomposition {
  double gain_scale;    ///< teacher minus raw student
  double gain_distill;  ///< distilled student minus raw student
  double eta;           ///< gain_distill over floored gain_scale
};

GainDecomposition decompose_gain(double p_teacher, double p_student_raw,
                                 double p_student_distill);

/// Mean absolute difference between two probability vectors of equal length.
/// Throws config_error on empty or mismatched inputs.
double calibration_mae(const std::vector<double>& predicted,
                       const std::vector<double>& reference);

struct MetricRow {
  std::string experiment;
  std::string arm;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::string metric;
  double value = 0.0;
};

/// Writes "experiment,arm,seed,step,metric,value" rows sorted by
/// (experiment, arm, seed, step, metric) so repeated runs produce identical
/// files. The write is atomic: the file appears complete or not at all.
void write_metrics_csv(const std::string& path, std::vector<MetricRow> rows);

/// Parses a file produced by write_metrics_csv. Throws parse_error with a
/// 1-based line number on malformed input.
std::vector<MetricRow> read_metrics_csv(const std::string& path);

}  // namespace streamkd
