#include "streamkd/models.hpp"

#include <algorithm>

#include "streamkd/errors.hpp"
#include "streamkd/text_io.hpp"

namespace streamkd {

void TeacherArch::validate() const {
  if (input_dim == 0) throw config_error("teacher arch: input_dim must be positive");
  for (std::size_t w : hidden_widths)
    if (w == 0) throw config_error("teacher arch: zero hidden width");
}

void StudentArch::validate() const {
  if (input_dim == 0) throw config_error("student arch: input_dim must be positive");
  if (backbone_widths.empty())
    throw config_error("student arch: backbone needs at least one width");
  for (std::size_t w : backbone_widths)
    if (w == 0) throw config_error("student arch: zero backbone width");
  for (std::size_t w : tower_widths)
    if (w == 0) throw config_error("student arch: zero tower width");
}

TeacherModel build_teacher(const TeacherArch& arch, std::uint64_t seed) {
  arch.validate();
  TeacherModel t;
  t.arch = arch;
  t.build_seed = seed;
  Rng rng(mix_seed(seed_tag::init, seed));
  t.net = build_mlp(arch.input_dim, arch.hidden_widths, 1, Activation::relu,
                    Activation::identity, rng);
  t.opt = OptimizerState(t.net);
  return t;
}

StudentModel build_student(const StudentArch& arch, std::uint64_t seed) {
  arch.validate();
  StudentModel s;
  s.arch = arch;
  s.build_seed = seed;
  std::size_t rep = arch.backbone_widths.back();
  std::vector<std::size_t> backbone_hidden(arch.backbone_widths.begin(),
                                           arch.backbone_widths.end() - 1);
  Rng rng_backbone(mix_seed(seed_tag::init, seed, 0));
  Rng rng_main(mix_seed(seed_tag::init, seed, 1));
  Rng rng_aux(mix_seed(seed_tag::init, seed, 2));
  s.backbone = build_mlp(arch.input_dim, backbone_hidden, rep, Activation::relu,
                         Activation::relu, rng_backbone);
  s.main_tower = build_mlp(rep, arch.tower_widths, 1, Activation::relu,
                           Activation::identity, rng_main);
  s.aux_tower = build_mlp(rep, arch.tower_widths, 1, Activation::relu,
                          Activation::identity, rng_aux);
  s.opt_backbone = OptimizerState(s.backbone);
  s.opt_main = OptimizerState(s.main_tower);
  s.opt_aux = OptimizerState(s.aux_tower);
  return s;
}

std::size_t student_param_count(const StudentModel& s) {
  return s.backbone.param_count() + s.main_tower.param_count() +
         s.aux_tower.param_count();
}

StudentPartition partition_params(const StudentModel& s) {
  StudentPartition p;
  p.backbone_begin = 0;
  p.backbone_end = s.backbone.param_count();
  p.main_begin = p.backbone_end;
  p.main_end = p.main_begin + s.main_tower.param_count();
  p.aux_begin = p.main_end;
  p.aux_end = p.aux_begin + s.aux_tower.param_count();
  p.total = p.aux_end;
  return p;
}

TeacherEmission teacher_forward(const TeacherModel& t,
                                const std::vector<InteractionEvent>& batch,
                                std::uint64_t step) {
  TeacherEmission out;
  out.logits.reserve(batch.size());
  out.signals.reserve(batch.size());
  for (const auto& e : batch) {
    double z = mlp_forward_logit(t.net, e.features);
    out.logits.push_back(z);
    out.signals.push_back({e.sample_id, t.version, z, step});
  }
  return out;
}

double teacher_logit(const TeacherModel& t, const std::vector<double>& x,
                     ForwardCache* cache) {
  return mlp_forward_logit(t.net, x, cache);
}

TowerOutputs student_forward(const StudentModel& s, const std::vector<double>& x,
                             StudentCache* cache) {
  TowerOutputs out;
  out.backbone_rep =
      mlp_forward(s.backbone, x, cache ? &cache->backbone : nullptr);
  out.z_main = mlp_forward_logit(s.main_tower, out.backbone_rep,
                                 cache ? &cache->main_tower : nullptr);
  out.z_aux = mlp_forward_logit(s.aux_tower, out.backbone_rep,
                                cache ? &cache->aux_tower : nullptr);
  return out;
}

StudentTape StudentTape::zeros_like(const StudentModel& s) {
  StudentTape t;
  t.backbone = GradientTape::zeros_like(s.backbone);
  t.main_tower = GradientTape::zeros_like(s.main_tower);
  t.aux_tower = GradientTape::zeros_like(s.aux_tower);
  return t;
}

void StudentTape::add(const StudentTape& other) {
  backbone.add(other.backbone);
  main_tower.add(other.main_tower);
  aux_tower.add(other.aux_tower);
}

bool StudentTape::all_finite() const {
  return backbone.all_finite() && main_tower.all_finite() &&
         aux_tower.all_finite();
}

std::size_t StudentTape::param_count() const {
  return backbone.param_count() + main_tower.param_count() +
         aux_tower.param_count();
}

double StudentTape::flat_get(std::size_t global_index) const {
  std::size_t nb = backbone.param_count();
  if (global_index < nb) return backbone.flat_get(global_index);
  global_index -= nb;
  std::size_t nm = main_tower.param_count();
  if (global_index < nm) return main_tower.flat_get(global_index);
  return aux_tower.flat_get(global_index - nm);
}

void student_backward(const StudentModel& s, const StudentCache& cache,
                      double d_main, double d_aux, StudentTape& tape) {
  std::size_t rep_dim = s.backbone.output_dim();
  std::vector<double> rep_grad(rep_dim, 0.0);
  // a tower with zero upstream contributes exactly nothing, so skip it
  if (d_main != 0.0) {
    std::vector<double> g =
        mlp_backward_logit(s.main_tower, cache.main_tower, d_main, tape.main_tower);
    for (std::size_t i = 0; i < rep_dim; ++i) rep_grad[i] += g[i];
  }
  if (d_aux != 0.0) {
    std::vector<double> g =
        mlp_backward_logit(s.aux_tower, cache.aux_tower, d_aux, tape.aux_tower);
    for (std::size_t i = 0; i < rep_dim; ++i) rep_grad[i] += g[i];
  }
  bool any = false;
  for (double v : rep_grad) any = any || v != 0.0;
  if (any) mlp_backward(s.backbone, cache.backbone, rep_grad, tape.backbone);
}

void student_step(StudentModel& s, const StudentTape& tape) {
  optimizer_step(s.backbone, tape.backbone, s.opt_backbone);
  optimizer_step(s.main_tower, tape.main_tower, s.opt_main);
  optimizer_step(s.aux_tower, tape.aux_tower, s.opt_aux);
}

void teacher_step(TeacherModel& t, const GradientTape& tape) {
  optimizer_step(t.net, tape, t.opt);
}

namespace {

void append_widths(std::string& out, const char* key,
                   const std::vector<std::size_t>& widths) {
  out += key;
  for (std::size_t w : widths) {
    out.push_back(' ');
    out += std::to_string(w);
  }
  out.push_back('\n');
}

void append_params(std::string& out, const MlpParams& net) {
  std::size_t n = net.param_count();
  for (std::size_t i = 0; i < n; ++i) {
    out += fmt_real9(net.flat_get(i));
    out.push_back('\n');
  }
}

/// tokens after the expected key on a header line
std::vector<std::size_t> parse_width_line(const std::string& path,
                                          std::size_t lineno,
                                          std::string_view line,
                                          std::string_view key) {
  auto tokens = split(line, ' ');
  if (tokens.empty() || tokens[0] != key)
    throw parse_error(path + ":" + std::to_string(lineno) + ": expected '" +
                      std::string(key) + " ...'");
  std::vector<std::size_t> widths;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    long long v = parse_int(tokens[i]);
    if (v <= 0)
      throw parse_error(path + ":" + std::to_string(lineno) +
                        ": widths must be positive");
    widths.push_back(static_cast<std::size_t>(v));
  }
  return widths;
}

/// "key <non-negative integer>" header line
long long parse_scalar_line(const std::string& path, std::size_t lineno,
                            std::string_view line, std::string_view key) {
  auto tokens = split(line, ' ');
  if (tokens.size() != 2 || tokens[0] != key)
    throw parse_error(path + ":" + std::to_string(lineno) + ": expected '" +
                      std::string(key) + " <n>'");
  long long v = parse_int(tokens[1]);
  if (v < 0)
    throw parse_error(path + ":" + std::to_string(lineno) + ": '" +
                      std::string(key) + "' must be non-negative");
  return v;
}

/// zero-filled net of the given shape; checkpoint loading fills the values
MlpParams make_zero_net(std::size_t input_dim,
                        const std::vector<std::size_t>& hidden,
                        std::size_t output_dim, Activation hidden_act,
                        Activation final_act) {
  MlpParams p;
  std::size_t in = input_dim;
  for (std::size_t w : hidden) {
    Layer l;
    l.weight = DenseMatrix(w, in);
    l.bias.assign(w, 0.0);
    l.activation = hidden_act;
    p.layers.push_back(std::move(l));
    in = w;
  }
  Layer f;
  f.weight = DenseMatrix(output_dim, in);
  f.bias.assign(output_dim, 0.0);
  f.activation = final_act;
  p.layers.push_back(std::move(f));
  return p;
}

/// reads exactly `count` canonical value lines starting at lines[start]
void load_values(const std::string& path,
                 const std::vector<std::string_view>& lines, std::size_t start,
                 std::size_t count,
                 const std::function<void(std::size_t, double)>& sink) {
  if (lines.size() != start + count)
    throw parse_error(path + ": expected " + std::to_string(count) +
                      " parameter lines, found " +
                      std::to_string(lines.size() - start));
  for (std::size_t i = 0; i < count; ++i) {
    std::string_view line = lines[start + i];
    double v;
    try {
      v = parse_real(line);
    } catch (const parse_error& e) {
      throw parse_error(path + ":" + std::to_string(start + i + 1) + ": " +
                        e.what());
    }
    if (fmt_real9(v) != line)
      throw parse_error(path + ":" + std::to_string(start + i + 1) +
                        ": value is not in canonical 9-significant-digit form");
    sink(i, v);
  }
}

std::vector<std::string_view> checkpoint_lines(const std::string& content) {
  auto lines = split(content, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace

void save_teacher(const std::string& path, const TeacherModel& t) {
  std::string out = "teacher_checkpoint v1\n";
  out += "seed " + std::to_string(t.build_seed) + "\n";
  out += "version " + std::to_string(t.version) + "\n";
  out += "input_dim " + std::to_string(t.arch.input_dim) + "\n";
  append_widths(out, "hidden", t.arch.hidden_widths);
  out += "param_count " + std::to_string(t.net.param_count()) + "\n";
  append_params(out, t.net);
  atomic_write_file(path, out);
}

TeacherModel load_teacher(const std::string& path) {
  auto content = read_file(path);
  auto lines = checkpoint_lines(content);
  if (lines.size() < 6 || lines[0] != "teacher_checkpoint v1")
    throw parse_error(path + ":1: expected 'teacher_checkpoint v1'");
  TeacherModel t;
  t.build_seed =
      static_cast<std::uint64_t>(parse_scalar_line(path, 2, lines[1], "seed"));
  t.version = static_cast<std::uint32_t>(
      parse_scalar_line(path, 3, lines[2], "version"));
  t.arch.input_dim = static_cast<std::size_t>(
      parse_scalar_line(path, 4, lines[3], "input_dim"));
  t.arch.hidden_widths = parse_width_line(path, 5, lines[4], "hidden");
  t.arch.validate();
  std::size_t count = static_cast<std::size_t>(
      parse_scalar_line(path, 6, lines[5], "param_count"));
  t.net = make_zero_net(t.arch.input_dim, t.arch.hidden_widths, 1,
                        Activation::relu, Activation::identity);
  if (t.net.param_count() != count)
    throw parse_error(path + ": param_count " + std::to_string(count) +
                      " does not match the declared shape (" +
                      std::to_string(t.net.param_count()) + ")");
  load_values(path, lines, 6, count,
              [&](std::size_t i, double v) { t.net.flat_set(i, v); });
  t.opt = OptimizerState(t.net);
  return t;
}

void save_student(const std::string& path, const StudentModel& s) {
  std::string out = "student_checkpoint v1\n";
  out += "seed " + std::to_string(s.build_seed) + "\n";
  out += "input_dim " + std::to_string(s.arch.input_dim) + "\n";
  append_widths(out, "backbone", s.arch.backbone_widths);
  append_widths(out, "towers", s.arch.tower_widths);
  out += "param_count " + std::to_string(student_param_count(s)) + "\n";
  append_params(out, s.backbone);
  append_params(out, s.main_tower);
  append_params(out, s.aux_tower);
  atomic_write_file(path, out);
}

StudentModel load_student(const std::string& path) {
  auto content = read_file(path);
  auto lines = checkpoint_lines(content);
  if (lines.size() < 6 || lines[0] != "student_checkpoint v1")
    throw parse_error(path + ":1: expected 'student_checkpoint v1'");
  StudentModel s;
  s.build_seed =
      static_cast<std::uint64_t>(parse_scalar_line(path, 2, lines[1], "seed"));
  s.arch.input_dim = static_cast<std::size_t>(
      parse_scalar_line(path, 3, lines[2], "input_dim"));
  s.arch.backbone_widths = parse_width_line(path, 4, lines[3], "backbone");
  s.arch.tower_widths = parse_width_line(path, 5, lines[4], "towers");
  s.arch.validate();
  std::size_t count = static_cast<std::size_t>(
      parse_scalar_line(path, 6, lines[5], "param_count"));

  std::size_t rep = s.arch.backbone_widths.back();
  std::vector<std::size_t> backbone_hidden(s.arch.backbone_widths.begin(),
                                           s.arch.backbone_widths.end() - 1);
  s.backbone = make_zero_net(s.arch.input_dim, backbone_hidden, rep,
                             Activation::relu, Activation::relu);
  s.main_tower = make_zero_net(rep, s.arch.tower_widths, 1, Activation::relu,
                               Activation::identity);
  s.aux_tower = make_zero_net(rep, s.arch.tower_widths, 1, Activation::relu,
                              Activation::identity);
  std::size_t nb = s.backbone.param_count();
  std::size_t nm = s.main_tower.param_count();
  std::size_t na = s.aux_tower.param_count();
  if (nb + nm + na != count)
    throw parse_error(path + ": param_count " + std::to_string(count) +
                      " does not match the declared shape (" +
                      std::to_string(nb + nm + na) + ")");
  load_values(path, lines, 6, count, [&](std::size_t i, double v) {
    if (i < nb)
      s.backbone.flat_set(i, v);
    else if (i < nb + nm)
      s.main_tower.flat_set(i - nb, v);
    else
      s.aux_tower.flat_set(i - nb - nm, v);
  });
  s.opt_backbone = OptimizerState(s.backbone);
  s.opt_main = OptimizerState(s.main_tower);
  s.opt_aux = OptimizerState(s.aux_tower);
  return s;
}

}  // namespace streamkd
