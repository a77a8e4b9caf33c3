#include "lavit/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace lavit {

void RunConfig::validate() const {
  if (warmup_steps > total_steps)
    throw ValueError("config: warmup_steps must be <= total_steps");
  if (lambda < 0.0) throw ValueError("config: lambda must be >= 0");
  if (gate_epsilon <= 0.0 || gate_epsilon >= 1.0)
    throw ValueError("config: gate_epsilon must be in (0, 1)");
  if (teacher_dim % teacher_heads != 0 || student_dim % student_heads != 0)
    throw ValueError("config: model width must divide by head count");
}

CorpusConfig RunConfig::corpus() const {
  CorpusConfig c;
  c.seed = seed;
  c.n_train = n_train;
  c.n_val = n_val;
  c.n_test = n_test;
  c.grid_rows = grid_rows;
  c.grid_cols = grid_cols;
  c.patch_px = patch_px;
  c.system_prefix = !system_prompt.empty();
  return c;
}

static ModelConfig base_model(const RunConfig& r) {
  const Vocab& v = Vocab::instance();
  ModelConfig m;
  m.vocab_size = v.size();
  m.grid_rows = r.grid_rows;
  m.grid_cols = r.grid_cols;
  m.patch_dim = r.patch_px * r.patch_px * 3;
  m.n_question = r.corpus().n_question();
  m.max_answer_len = r.max_answer_len;
  m.boa_id = v.boa();
  m.eoa_id = v.eoa();
  return m;
}

ModelConfig RunConfig::teacher_model() const {
  ModelConfig m = base_model(*this);
  m.d_model = teacher_dim;
  m.n_layers = teacher_layers;
  m.n_heads = teacher_heads;
  m.k_latent = 0;  // the teacher is a plain VQA decoder
  m.d_teacher = 0;
  m.freeze_patch_embedder = false;  // trained during teacher pre-training
  return m;
}

ModelConfig RunConfig::student_model() const {
  ModelConfig m = base_model(*this);
  m.d_model = student_dim;
  m.n_layers = student_layers;
  m.n_heads = student_heads;
  m.k_latent = k_latent;
  m.d_teacher = k_latent > 0 ? teacher_dim : 0;
  m.freeze_patch_embedder = freeze_patch_embedder;
  return m;
}

TrainConfig RunConfig::student_train() const {
  TrainConfig t;
  t.total_steps = total_steps;
  t.warmup_steps = warmup_steps;
  t.gate_epsilon = gate_epsilon;
  t.single_stage = single_stage;
  t.lambda = lambda;
  t.use_concept = use_concept_loss;
  t.use_traj = use_traj_loss;
  t.gate_latent_path = gate_latent_path;
  t.lr = effective_lr();
  t.beta1 = adam_beta1;
  t.beta2 = adam_beta2;
  t.weight_decay = weight_decay;
  t.lr_warmup_ratio = lr_warmup_ratio;
  t.batch_size = batch_size;
  t.seed = seed;
  return t;
}

std::vector<ConfigField> config_fields(RunConfig& c) {
  return {
      {"seed", FieldType::U64, &c.seed},
      {"total_steps", FieldType::I64, &c.total_steps},
      {"warmup_steps", FieldType::I64, &c.warmup_steps},
      {"lambda", FieldType::F64, &c.lambda},
      {"k_latent", FieldType::I64, &c.k_latent},
      {"topk", FieldType::I64, &c.topk},
      {"gate_epsilon", FieldType::F64, &c.gate_epsilon},
      {"eps_norm", FieldType::F64, &c.eps_norm},
      {"lr", FieldType::F64, &c.lr},
      {"toy_lr", FieldType::F64, &c.toy_lr},
      {"adam_beta1", FieldType::F64, &c.adam_beta1},
      {"adam_beta2", FieldType::F64, &c.adam_beta2},
      {"weight_decay", FieldType::F64, &c.weight_decay},
      {"lr_warmup_ratio", FieldType::F64, &c.lr_warmup_ratio},
      {"batch_size", FieldType::I64, &c.batch_size},
      {"teacher_layers", FieldType::I64, &c.teacher_layers},
      {"teacher_dim", FieldType::I64, &c.teacher_dim},
      {"teacher_heads", FieldType::I64, &c.teacher_heads},
      {"student_layers", FieldType::I64, &c.student_layers},
      {"student_dim", FieldType::I64, &c.student_dim},
      {"student_heads", FieldType::I64, &c.student_heads},
      {"grid_rows", FieldType::I64, &c.grid_rows},
      {"grid_cols", FieldType::I64, &c.grid_cols},
      {"patch_px", FieldType::I64, &c.patch_px},
      {"n_train", FieldType::I64, &c.n_train},
      {"n_val", FieldType::I64, &c.n_val},
      {"n_test", FieldType::I64, &c.n_test},
      {"focus_threshold", FieldType::F64, &c.focus_threshold},
      {"mask_latents", FieldType::Bool, &c.mask_latents},
      {"gate_latent_path", FieldType::Bool, &c.gate_latent_path},
      {"single_stage", FieldType::Bool, &c.single_stage},
      {"use_traj_loss", FieldType::Bool, &c.use_traj_loss},
      {"use_concept_loss", FieldType::Bool, &c.use_concept_loss},
      {"freeze_patch_embedder", FieldType::Bool, &c.freeze_patch_embedder},
      {"max_answer_len", FieldType::I64, &c.max_answer_len},
      {"teacher_steps", FieldType::I64, &c.teacher_steps},
      {"teacher_target_acc", FieldType::F64, &c.teacher_target_acc},
      {"textonly_steps", FieldType::I64, &c.textonly_steps},
      {"eval_every", FieldType::I64, &c.eval_every},
      {"eval_subset", FieldType::I64, &c.eval_subset},
      {"system_prompt", FieldType::Str, &c.system_prompt},
  };
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto fields = config_fields(cfg);
  for (auto& f : fields) {
    if (f.key != key) continue;
    try {
      switch (f.type) {
        case FieldType::I64: *static_cast<int64_t*>(f.ptr) = std::stoll(value); break;
        case FieldType::U64: *static_cast<uint64_t*>(f.ptr) = std::stoull(value); break;
        case FieldType::F64: *static_cast<double*>(f.ptr) = std::stod(value); break;
        case FieldType::Bool: {
          if (value == "true" || value == "1")
            *static_cast<bool*>(f.ptr) = true;
          else if (value == "false" || value == "0")
            *static_cast<bool*>(f.ptr) = false;
          else
            throw ValueError("config: boolean key '" + key + "' expects true/false, got '" +
                             value + "'");
          break;
        }
        case FieldType::Str: *static_cast<std::string*>(f.ptr) = value; break;
      }
    } catch (const std::invalid_argument&) {
      throw ValueError("config: cannot parse value '" + value + "' for key '" + key + "'");
    }
    return;
  }
  throw ValueError("config: unknown key '" + key + "'");
}

static std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open '" + path + "'");
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ValueError("config: line " + std::to_string(lineno) + " is not key=value");
    apply_config_entry(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void write_config_snapshot(const RunConfig& cfg, const std::string& path) {
  auto& c = const_cast<RunConfig&>(cfg);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("config: cannot open '" + path + "' for writing");
  char buf[64];
  for (const auto& field : config_fields(c)) {
    f << field.key << " = ";
    switch (field.type) {
      case FieldType::I64: f << *static_cast<int64_t*>(field.ptr); break;
      case FieldType::U64: f << *static_cast<uint64_t*>(field.ptr); break;
      case FieldType::F64:
        std::snprintf(buf, sizeof buf, "%.17g", *static_cast<double*>(field.ptr));
        f << buf;
        break;
      case FieldType::Bool: f << (*static_cast<bool*>(field.ptr) ? "true" : "false"); break;
      case FieldType::Str: f << *static_cast<std::string*>(field.ptr); break;
    }
    f << "\n";
  }
}

std::string run_root() {
  const char* env = std::getenv("LVT_RUN_DIR");
  return env && *env ? std::string(env) : std::string("runs");
}

}  // namespace lavit
