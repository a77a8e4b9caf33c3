#pragma once

#include <span>
#include <vector>

#include "lavit/model.hpp"
#include "lavit/tape.hpp"

namespace lavit {

/// Per-step loss components. l_total = l_ntp + lambda * (l_concept + l_traj)
/// exactly (computed from the stored components), with ablation flags able to
/// exclude a logged term from the total.
struct LossBundle {
  double l_concept = 0.0;
  double l_traj = 0.0;
  double l_ntp = 0.0;
  double l_total = 0.0;
  double lambda = 0.3;
};

LossBundle make_bundle(double l_ntp, double l_concept, double l_traj, double lambda,
                       bool use_concept = true, bool use_traj = true);

/// 1 - (1/B) sum_i CosSim(concept_i, v_sem_i). Targets must be detached;
/// zero-norm targets are excluded (B adjusted) and counted in `excluded`.
Tensor concept_loss(Tape& tape, std::span<const Tensor> concept_vecs,
                    std::span<const Tensor> v_sem_targets, int* excluded = nullptr);

/// Layer/head-averaged gaze of one latent query row restricted to the image
/// keys, renormalized to sum 1. `rows` are the [1 x kv] attention tensors per
/// (layer, head) for that latent token.
Tensor student_gaze_row(Tape& tape, std::span<const Tensor> rows, int64_t n_image);

/// (1/B) sum_i sum_{j<K} KL(target_ij || student gaze of latent j). Each
/// sample supplies either one shared target or K per-latent targets.
Tensor trajectory_loss(Tape& tape,
                       const std::vector<std::vector<std::vector<double>>>& targets,
                       std::span<const ForwardOutput* const> outputs, int64_t n_image);

/// Mean cross-entropy over the answer predictions (incl. the end-of-answer
/// token); no loss is placed on image, question, or latent positions.
Tensor ntp_loss(Tape& tape, const Tensor& logits, const std::vector<int>& targets);

/// l_ntp + lambda * (l_concept + l_traj) on the tape; excluded terms are
/// dropped from the total but remain available for logging.
Tensor total_loss(Tape& tape, const Tensor& l_ntp, const Tensor* l_concept, const Tensor* l_traj,
                  double lambda, bool use_concept = true, bool use_traj = true);

struct ProbeRow {
  double gamma = 0.0;
  double grad_norm = 0.0;  // Frobenius norm of dL_ntp/d(image embeddings) over the batch
  double l_ntp = 0.0;
};

/// Gradient-transition diagnostic: for each gamma, a teacher-forced pass on
/// the fixed batch, L_ntp backward, and the image-embedding gradient norm.
/// Parameters are left untouched.
std::vector<ProbeRow> gradient_transition_probe(const Model& model,
                                                std::span<const ModelInputs> batch,
                                                const std::vector<double>& gamma_list,
                                                const ForwardOptions& base_opts = {});

}  // namespace lavit
