#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "streamkd/datagen.hpp"
#include "streamkd/numerics.hpp"
#include "streamkd/signal_store.hpp"

namespace streamkd {

/// Teacher architecture: relu hidden stack ending in a width-1 raw logit.
struct TeacherArch {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_widths;

  void validate() const;
};

/// Student architecture: a shared relu backbone whose last width is the
/// representation, plus two structurally identical relu towers (main and aux)
/// mapping the representation to a raw logit. tower_widths lists the towers'
/// hidden widths and may be empty for a linear head.
struct StudentArch {
  std::size_t input_dim = 0;
  std::vector<std::size_t> backbone_widths;
  std::vector<std::size_t> tower_widths;

  void validate() const;
};

struct TeacherModel {
  TeacherArch arch;
  std::uint64_t build_seed = 0;
  MlpParams net;
  OptimizerState opt;
  /// bumped once per update epoch so every emitted signal is attributable to
  /// a concrete parameter snapshot
  std::uint32_t version = 0;
  SamplingConfig sampling;
};

struct StudentModel {
  StudentArch arch;
  std::uint64_t build_seed = 0;
  MlpParams backbone;
  MlpParams main_tower;
  MlpParams aux_tower;
  OptimizerState opt_backbone;
  OptimizerState opt_main;
  OptimizerState opt_aux;
  SamplingConfig sampling;
};

/// Deterministic Glorot build; the same (arch, seed) pair always yields
/// bit-identical parameters.
TeacherModel build_teacher(const TeacherArch& arch, std::uint64_t seed);
StudentModel build_student(const StudentArch& arch, std::uint64_t seed);

std::size_t student_param_count(const StudentModel& s);

/// Contiguous global ranges over the student's flat parameter vector, in the
/// fixed order backbone, main tower, aux tower. Disjoint and exhaustive.
struct StudentPartition {
  std::size_t backbone_begin = 0, backbone_end = 0;
  std::size_t main_begin = 0, main_end = 0;
  std::size_t aux_begin = 0, aux_end = 0;
  std::size_t total = 0;
};

StudentPartition partition_params(const StudentModel& s);

struct TeacherEmission {
  std::vector<double> logits;
  std::vector<SignalRecord> signals;  ///< one per sample, stamped with version
};

/// Scores a batch and packages the raw logits as store-ready signals without
/// touching parameters. Callers decide whether the signals are appended, so
/// evaluation passes can score without emitting.
TeacherEmission teacher_forward(const TeacherModel& t,
                                const std::vector<InteractionEvent>& batch,
                                std::uint64_t step);

double teacher_logit(const TeacherModel& t, const std::vector<double>& x,
                     ForwardCache* cache = nullptr);

struct TowerOutputs {
  double z_main = 0.0;  ///< serving logit; never sees distillation gradients
  double z_aux = 0.0;   ///< distillation-side logit
  std::vector<double> backbone_rep;
};

struct StudentCache {
  ForwardCache backbone;
  ForwardCache main_tower;
  ForwardCache aux_tower;
};

/// One backbone pass feeding both towers.
TowerOutputs student_forward(const StudentModel& s, const std::vector<double>& x,
                             StudentCache* cache = nullptr);

/// Gradient accumulator mirroring the student's three partitions. flat_get
/// uses the same global index space as StudentPartition.
struct StudentTape {
  GradientTape backbone;
  GradientTape main_tower;
  GradientTape aux_tower;

  static StudentTape zeros_like(const StudentModel& s);
  void add(const StudentTape& other);
  bool all_finite() const;
  std::size_t param_count() const;
  double flat_get(std::size_t global_index) const;
};

/// Accumulates one sample's gradients: d_main and d_aux are dL/dz for the two
/// tower logits. The backbone receives the sum of both towers' representation
/// gradients; each tower's parameters receive only their own logit's
/// gradient, so a zero upstream leaves that tower's slice untouched.
void student_backward(const StudentModel& s, const StudentCache& cache,
                      double d_main, double d_aux, StudentTape& tape);

/// One Adam update per partition. Throws numeric_error on non-finite grads.
void student_step(StudentModel& s, const StudentTape& tape);

/// One Adam update on the teacher. Version bumps are epoch-level and happen
/// in the trainer, not here.
void teacher_step(TeacherModel& t, const GradientTape& tape);

/// Checkpoints: self-describing text header (arch, build seed, version for
/// teachers) followed by one parameter per line in 9-significant-digit
/// decimal. Loading enforces the canonical form — every value line must
/// reprint identically — so save/load/save is byte-stable. Optimizer moments
/// and sampling configs are not part of a checkpoint.
void save_teacher(const std::string& path, const TeacherModel& t);
TeacherModel load_teacher(const std::string& path);
void save_student(const std::string& path, const StudentModel& s);
StudentModel load_student(const std::string& path);

}  // namespace streamkd
