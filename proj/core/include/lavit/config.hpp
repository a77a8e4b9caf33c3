#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lavit/data.hpp"
#include "lavit/model.hpp"
#include "lavit/train.hpp"

namespace lavit {

/// Run configuration. Defaults follow the full-scale hyperparameter table
/// where applicable (lr 5e-6, 1000 steps, warm-up 400, lambda 0.3, 4 latent
/// tokens, batch 16); `toy_lr` is the documented desk-scale override used by
/// the trainers whenever it is nonzero.
struct RunConfig {
  uint64_t seed = 0;
  int64_t total_steps = 1000;
  int64_t warmup_steps = 400;
  double lambda = 0.3;
  int64_t k_latent = 4;
  int64_t topk = 8;  // clamped to patches/2 at extraction
  double gate_epsilon = 1e-6;
  double eps_norm = 1e-8;
  double lr = 5e-6;
  double toy_lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double weight_decay = 0.0;
  double lr_warmup_ratio = 0.03;
  int64_t batch_size = 16;

  int64_t teacher_layers = 4, teacher_dim = 128, teacher_heads = 4;
  int64_t student_layers = 2, student_dim = 64, student_heads = 2;

  int64_t grid_rows = 4, grid_cols = 4, patch_px = 4;
  int64_t n_train = 5000, n_val = 500, n_test = 500;

  double focus_threshold = 0.20;
  bool mask_latents = false;
  bool gate_latent_path = false;
  bool single_stage = false;
  bool use_traj_loss = true;
  bool use_concept_loss = true;
  bool freeze_patch_embedder = true;
  int64_t max_answer_len = 16;

  int64_t teacher_steps = 4000;  // budget; stops early at teacher_target_acc
  double teacher_target_acc = 0.95;
  int64_t textonly_steps = 600;
  int64_t eval_every = 25;
  int64_t eval_subset = 200;

  std::string system_prompt =
      "You are an expert multimodal large language model. You process visual information "
      "through specialized latent tokens to ensure precise alignment between visual perception "
      "and textual reasoning.";

  double effective_lr() const { return toy_lr != 0.0 ? toy_lr : lr; }
  void validate() const;

  CorpusConfig corpus() const;
  ModelConfig teacher_model() const;
  ModelConfig student_model() const;
  TrainConfig student_train() const;
};

enum class FieldType { I64, U64, F64, Bool, Str };

struct ConfigField {
  std::string key;
  FieldType type;
  void* ptr;
};

/// Field table driving the parser, the snapshot writer, and the CLI options.
std::vector<ConfigField> config_fields(RunConfig& cfg);

/// key=value lines, '#' comments; unknown keys are rejected.
void load_config_file(RunConfig& cfg, const std::string& path);
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);
void write_config_snapshot(const RunConfig& cfg, const std::string& path);

/// Output root: LVT_RUN_DIR when set, else "runs".
std::string run_root();

}  // namespace lavit
