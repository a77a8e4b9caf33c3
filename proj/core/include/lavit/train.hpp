#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lavit/data.hpp"
#include "lavit/losses.hpp"
#include "lavit/model.hpp"

namespace lavit {

ModelInputs model_inputs(const Sample& s);

/// AdamW over the model's parameters in visit order; frozen parameters are
/// skipped.
class AdamW {
 public:
  AdamW(Model& model, double beta1 = 0.9, double beta2 = 0.999, double weight_decay = 0.0);
  void step(const Tape& tape, ModelParams& bound, double lr);

 private:
  Model* model_;
  double beta1_, beta2_, weight_decay_;
  int64_t t_ = 0;
  std::vector<Tensor*> params_;
  std::vector<bool> trainable_;
  std::vector<std::vector<double>> m_, v_;
};

/// Linear warm-up (ratio of total steps) then linear decay to zero.
double lr_at(int64_t step, int64_t total_steps, double base_lr, double warmup_ratio);

struct TrainConfig {
  int64_t total_steps = 1000;
  int64_t warmup_steps = 400;  // gate warm-up T_w
  double gate_epsilon = 1e-6;
  bool single_stage = false;  // gamma held at 1 throughout
  double lambda = 0.3;
  bool use_concept = true;
  bool use_traj = true;
  bool gate_latent_path = false;
  bool mask_image = false;  // text-only baseline training
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double weight_decay = 0.0;
  double lr_warmup_ratio = 0.03;
  int64_t batch_size = 16;
  uint64_t seed = 0;
  // Optional early stop on validation accuracy.
  double stop_at_val_acc = -1.0;
  int64_t eval_every = 0;
  int64_t eval_subset = 0;  // 0 = full validation set
};

struct StepLog {
  int64_t step = 0;
  double l_ntp = 0, l_concept = 0, l_traj = 0, l_total = 0, gamma = 1.0;
};

struct TrainResult {
  std::vector<StepLog> log;
  int64_t steps_run = 0;
  double final_val_acc = -1.0;
  bool reached_target = false;
};

/// Joint training step loop. Distillation terms require supervised samples
/// (extract stage) and k_latent >= 1; they are dropped otherwise.
TrainResult train_model(Model& model, std::span<const Sample* const> train,
                        std::span<const Sample* const> val, const TrainConfig& cfg);

/// Greedy-decode exact-match accuracy (gamma = 1 inference topology).
double answer_accuracy(const Model& model, std::span<const Sample* const> samples,
                       const ForwardOptions& opts = {});

struct ExtractConfig {
  int64_t topk = 8;  // clamped to patches/2
  double eps_norm = 1e-8;
};

/// Teacher-forced pass on the ground-truth answer; fills gaze, a_traj,
/// sparse_target (top-k), focus score, and the a_traj-weighted mean of the
/// teacher's final-layer image states (v_sem).
void extract_supervision(const Model& teacher, Sample& sample, const ExtractConfig& cfg);

/// Model-driven filter: free-decodes the teacher and the text-only model per
/// sample and applies the staged filter at `focus_threshold`. Samples must
/// already carry extraction results.
FilterReport filter_dataset(const Model& teacher, const Model& text_only,
                            std::span<const Sample* const> samples, double focus_threshold);

/// Eq-1 aggregation of `rows` restricted to image keys, renormalized to a
/// distribution. Empty result if the rows carry no image mass.
std::vector<double> gaze_distribution(const ForwardOutput& out, const std::vector<int64_t>& rows);

/// The rows representing a model's visual reasoning trace: the latent rows
/// when latent tokens exist, else the answer rows.
std::vector<int64_t> reasoning_rows(const ForwardOutput& out);

}  // namespace lavit
