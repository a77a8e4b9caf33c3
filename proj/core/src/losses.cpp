#include "lavit/losses.hpp"

#include <cmath>

namespace lavit {

LossBundle make_bundle(double l_ntp, double l_concept, double l_traj, double lambda,
                       bool use_concept, bool use_traj) {
  LossBundle b;
  b.l_ntp = l_ntp;
  b.l_concept = l_concept;
  b.l_traj = l_traj;
  b.lambda = lambda;
  b.l_total = l_ntp + lambda * ((use_concept ? l_concept : 0.0) + (use_traj ? l_traj : 0.0));
  return b;
}

Tensor concept_loss(Tape& tape, std::span<const Tensor> concept_vecs,
                    std::span<const Tensor> v_sem_targets, int* excluded) {
  if (concept_vecs.size() != v_sem_targets.size() || concept_vecs.empty())
    throw ShapeError("concept_loss: batch size mismatch");
  if (excluded) *excluded = 0;
  Tensor acc;
  int used = 0;
  for (size_t i = 0; i < concept_vecs.size(); ++i) {
    double norm2 = 0.0;
    for (int64_t j = 0; j < v_sem_targets[i].numel(); ++j)
      norm2 += v_sem_targets[i].at(j) * v_sem_targets[i].at(j);
    if (norm2 == 0.0) {
      if (excluded) ++*excluded;
      continue;
    }
    Tensor cos = tape.cosine_similarity(concept_vecs[i], v_sem_targets[i].detached());
    acc = (used == 0) ? cos : tape.add(acc, cos);
    ++used;
  }
  if (used == 0) throw ValueError("concept_loss: every target had zero norm");
  Tensor mean_cos = tape.scale(acc, 1.0 / static_cast<double>(used));
  return tape.add(tape.scale(mean_cos, -1.0), Tensor::scalar(1.0));
}

Tensor student_gaze_row(Tape& tape, std::span<const Tensor> rows, int64_t n_image) {
  if (rows.empty()) throw ShapeError("student_gaze_row: no attention rows");
  Tensor acc;
  for (size_t i = 0; i < rows.size(); ++i) {
    Tensor img = tape.slice_cols(rows[i], 0, n_image);
    acc = (i == 0) ? img : tape.add(acc, img);
  }
  acc = tape.scale(acc, 1.0 / static_cast<double>(rows.size()));
  return tape.div_scalar(acc, tape.sum(acc));
}

Tensor trajectory_loss(Tape& tape,
                       const std::vector<std::vector<std::vector<double>>>& targets,
                       std::span<const ForwardOutput* const> outputs, int64_t n_image) {
  if (targets.size() != outputs.size() || outputs.empty())
    throw ShapeError("trajectory_loss: batch size mismatch");
  Tensor acc;
  bool first = true;
  for (size_t i = 0; i < outputs.size(); ++i) {
    const auto& out = *outputs[i];
    const size_t k = out.latent_attn.size();
    if (k == 0) throw ValueError("trajectory_loss: model has no latent tokens");
    if (targets[i].size() != 1 && targets[i].size() != k)
      throw ShapeError("trajectory_loss: expected 1 or K targets per sample");
    for (size_t j = 0; j < k; ++j) {
      const auto& target = targets[i].size() == 1 ? targets[i][0] : targets[i][j];
      if (static_cast<int64_t>(target.size()) != n_image)
        throw ShapeError("trajectory_loss: target length must equal image patch count");
      Tensor q = student_gaze_row(tape, out.latent_attn[j], n_image);
      Tensor p({n_image}, std::vector<double>(target));
      Tensor kl = tape.kl_divergence(p, q);
      acc = first ? kl : tape.add(acc, kl);
      first = false;
    }
  }
  return tape.scale(acc, 1.0 / static_cast<double>(outputs.size()));
}

Tensor ntp_loss(Tape& tape, const Tensor& logits, const std::vector<int>& targets) {
  if (logits.shape[0] < 1) throw ShapeError("ntp_loss: no answer positions");
  return tape.cross_entropy(logits, targets);
}

Tensor total_loss(Tape& tape, const Tensor& l_ntp, const Tensor* l_concept, const Tensor* l_traj,
                  double lambda, bool use_concept, bool use_traj) {
  Tensor distill;
  bool have = false;
  if (use_concept && l_concept) {
    distill = *l_concept;
    have = true;
  }
  if (use_traj && l_traj) {
    distill = have ? tape.add(distill, *l_traj) : *l_traj;
    have = true;
  }
  if (!have || lambda == 0.0) return l_ntp;
  return tape.add(l_ntp, tape.scale(distill, lambda));
}

std::vector<ProbeRow> gradient_transition_probe(const Model& model,
                                                std::span<const ModelInputs> batch,
                                                const std::vector<double>& gamma_list,
                                                const ForwardOptions& base_opts) {
  if (gamma_list.empty()) throw ValueError("gradient_transition_probe: empty gamma list");
  if (batch.empty()) throw ValueError("gradient_transition_probe: empty batch");
  std::vector<ProbeRow> rows;
  rows.reserve(gamma_list.size());
  for (double g : gamma_list) {
    Tape tape;
    ModelParams bound = model.bind(tape);
    ForwardOptions opts = base_opts;
    opts.gamma = g;
    std::vector<Tensor> img_embeds;
    Tensor acc;
    for (size_t i = 0; i < batch.size(); ++i) {
      ForwardOutput out = model.forward(tape, bound, batch[i], opts);
      std::vector<int> targets = batch[i].answer;
      targets.push_back(model.config().eoa_id);
      Tensor li = ntp_loss(tape, out.logits, targets);
      img_embeds.push_back(out.img_embed);
      acc = (i == 0) ? li : tape.add(acc, li);
    }
    Tensor l_ntp = tape.scale(acc, 1.0 / static_cast<double>(batch.size()));
    tape.backward(l_ntp);
    double sq = 0.0;
    for (const auto& e : img_embeds) {
      const auto& grad = tape.grad(e);
      for (double v : grad) sq += v * v;
    }
    rows.push_back({g, std::sqrt(sq), l_ntp.item()});
  }
  return rows;
}

}  // namespace lavit
