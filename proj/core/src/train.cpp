#include "lavit/train.hpp"

#include <algorithm>
#include <cmath>

#include "lavit/gate.hpp"
#include "lavit/rng.hpp"

namespace lavit {

ModelInputs model_inputs(const Sample& s) {
  ModelInputs in;
  in.pixels = s.pixels;
  in.question = s.question_ids;
  in.answer = s.answer_ids;
  return in;
}

AdamW::AdamW(Model& model, double beta1, double beta2, double weight_decay)
    : model_(&model), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay) {
  visit_params(model.params(), [&](const std::string& name, Tensor& t) {
    params_.push_back(&t);
    trainable_.push_back(model.is_trainable(name));
    m_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
  });
}

void AdamW::step(const Tape& tape, ModelParams& bound, double lr) {
  ++t_;
  std::vector<const Tensor*> handles;
  visit_params(bound, [&](const std::string&, Tensor& t) { handles.push_back(&t); });
  if (handles.size() != params_.size()) throw ValueError("AdamW: bound parameter set mismatch");
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  constexpr double eps = 1e-8;
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!trainable_[i]) continue;
    const auto& g = tape.grad(*handles[i]);
    auto& x = *params_[i]->data;
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < x.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      x[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay_ * x[j]);
    }
  }
}

double lr_at(int64_t step, int64_t total_steps, double base_lr, double warmup_ratio) {
  const int64_t warm = std::max<int64_t>(
      1, static_cast<int64_t>(warmup_ratio * static_cast<double>(total_steps)));
  if (step < warm) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (total_steps <= warm) return base_lr;
  return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warm);
}

double answer_accuracy(const Model& model, std::span<const Sample* const> samples,
                       const ForwardOptions& opts) {
  if (samples.empty()) return 0.0;
  int64_t correct = 0;
  for (const Sample* s : samples) {
    GenerateResult res = model.generate(model_inputs(*s), opts);
    if (!res.truncated && res.tokens == s->answer_ids) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TrainResult train_model(Model& model, std::span<const Sample* const> train,
                        std::span<const Sample* const> val, const TrainConfig& cfg) {
  if (train.empty()) throw ValueError("train_model: empty training set");
  TrainResult result;
  AdamW opt(model, cfg.beta1, cfg.beta2, cfg.weight_decay);
  GateSchedule gate(cfg.warmup_steps, cfg.gate_epsilon);
  Rng batch_rng(derive_seed(cfg.seed, 0xba7c4));

  const bool distill = cfg.lambda > 0.0 && model.config().k_latent > 0 &&
                       (cfg.use_concept || cfg.use_traj);
  const int eoa = model.config().eoa_id;

  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // force an initial shuffle

  for (int64_t step = 0; step < cfg.total_steps; ++step) {
    const double g = cfg.single_stage ? 1.0 : gamma(gate, step);
    ForwardOptions opts;
    opts.gamma = g;
    opts.gate_latent_path = cfg.gate_latent_path;
    opts.mask_image = cfg.mask_image;

    Tape tape;
    ModelParams bound = model.bind(tape);

    Tensor ntp_acc;
    std::vector<Tensor> concept_vecs;
    std::vector<Tensor> concept_targets;
    std::vector<std::vector<std::vector<double>>> traj_targets;
    std::vector<size_t> traj_indices;
    std::vector<ForwardOutput> outs;
    outs.reserve(static_cast<size_t>(cfg.batch_size));

    for (int64_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        batch_rng.shuffle(order);
        cursor = 0;
      }
      const Sample& s = *train[order[cursor++]];
      outs.push_back(model.forward(tape, bound, model_inputs(s), opts));
      const ForwardOutput& out = outs.back();
      std::vector<int> targets = s.answer_ids;
      targets.push_back(eoa);
      Tensor li = ntp_loss(tape, out.logits, targets);
      ntp_acc = (b == 0) ? li : tape.add(ntp_acc, li);
      if (distill && s.has_supervision && !s.degenerate_trace) {
        if (cfg.use_concept && out.concept_vec.numel() > 0) {
          concept_vecs.push_back(out.concept_vec);
          concept_targets.push_back(s.v_sem);
        }
        if (cfg.use_traj) {
          traj_targets.push_back({s.sparse_target});
          traj_indices.push_back(outs.size() - 1);
        }
      }
    }

    Tensor l_ntp = tape.scale(ntp_acc, 1.0 / static_cast<double>(cfg.batch_size));
    Tensor l_concept, l_traj;
    bool have_concept = false, have_traj = false;
    if (!concept_vecs.empty()) {
      l_concept = concept_loss(tape, concept_vecs, concept_targets);
      have_concept = true;
    }
    if (!traj_targets.empty()) {
      std::vector<const ForwardOutput*> sup;
      sup.reserve(traj_indices.size());
      for (size_t idx : traj_indices) sup.push_back(&outs[idx]);
      l_traj = trajectory_loss(tape, traj_targets, sup, model.config().n_image());
      have_traj = true;
    }

    Tensor total = total_loss(tape, l_ntp, have_concept ? &l_concept : nullptr,
                              have_traj ? &l_traj : nullptr, cfg.lambda, cfg.use_concept,
                              cfg.use_traj);
    tape.backward(total);
    opt.step(tape, bound, lr_at(step, cfg.total_steps, cfg.lr, cfg.lr_warmup_ratio));

    StepLog log;
    log.step = step;
    log.gamma = g;
    log.l_ntp = l_ntp.item();
    log.l_concept = have_concept ? l_concept.item() : 0.0;
    log.l_traj = have_traj ? l_traj.item() : 0.0;
    LossBundle bundle = make_bundle(log.l_ntp, log.l_concept, log.l_traj, cfg.lambda,
                                    cfg.use_concept && have_concept, cfg.use_traj && have_traj);
    log.l_total = bundle.l_total;
    result.log.push_back(log);
    result.steps_run = step + 1;

    if (cfg.eval_every > 0 && cfg.stop_at_val_acc >= 0.0 && !val.empty() &&
        (step + 1) % cfg.eval_every == 0) {
      std::span<const Sample* const> subset = val;
      if (cfg.eval_subset > 0 && static_cast<int64_t>(val.size()) > cfg.eval_subset)
        subset = val.subspan(0, static_cast<size_t>(cfg.eval_subset));
      const double acc = answer_accuracy(model, subset);
      if (acc >= cfg.stop_at_val_acc) {
        const double full_acc = answer_accuracy(model, val);
        result.final_val_acc = full_acc;
        if (full_acc >= cfg.stop_at_val_acc) {
          result.reached_target = true;
          return result;
        }
      }
    }
  }
  if (!val.empty()) {
    result.final_val_acc = answer_accuracy(model, val);
    result.reached_target =
        cfg.stop_at_val_acc >= 0.0 && result.final_val_acc >= cfg.stop_at_val_acc;
  }
  return result;
}

void extract_supervision(const Model& teacher, Sample& sample, const ExtractConfig& cfg) {
  Tape tape(false);
  ForwardOutput out = teacher.forward(tape, teacher.params(), model_inputs(sample), {});
  const auto& layout = out.layout;
  sample.gaze = aggregate_gaze(out.attn, out.attn_dim, layout.answer_positions(),
                               layout.image_positions());
  sample.a_traj = minmax_normalize(sample.gaze, cfg.eps_norm);
  const int64_t n_image = layout.n_image;
  const int64_t k = std::min<int64_t>(cfg.topk, std::max<int64_t>(1, n_image / 2));
  bool degenerate = false;
  sample.sparse_target = topk_sparsify(sample.a_traj, k, &degenerate);
  sample.degenerate_trace = degenerate;

  double total = 0.0;
  for (double v : sample.a_traj) total += v;
  if (total <= 0.0) {
    sample.degenerate_trace = true;
    sample.focus_score = 0.0;
  } else {
    sample.focus_score = focusing_score(sample.a_traj, sample.scene.grid_rows,
                                        sample.scene.grid_cols, sample.bbox);
  }

  // v_sem: a_traj-weighted mean of the teacher's final-layer image states.
  const int64_t d = teacher.config().d_model;
  sample.v_sem = Tensor::zeros({1, d});
  if (total > 0.0) {
    for (int64_t j = 0; j < n_image; ++j) {
      const double w = sample.a_traj[static_cast<size_t>(j)] / total;
      for (int64_t c = 0; c < d; ++c)
        sample.v_sem.at(0, c) += w * out.h_final[static_cast<size_t>(j * d + c)];
    }
  }
  sample.has_supervision = true;
}

FilterReport filter_dataset(const Model& teacher, const Model& text_only,
                            std::span<const Sample* const> samples, double focus_threshold) {
  std::vector<FilterOutcome> outcomes;
  outcomes.reserve(samples.size());
  ForwardOptions masked;
  masked.mask_image = true;
  for (const Sample* s : samples) {
    FilterOutcome o;
    o.id = s->id;
    if (!s->has_supervision) {
      o.missing_decode = true;
      outcomes.push_back(o);
      continue;
    }
    GenerateResult t = teacher.generate(model_inputs(*s));
    o.teacher_correct = !t.truncated && t.tokens == s->answer_ids;
    GenerateResult x = text_only.generate(model_inputs(*s), masked);
    o.textonly_correct = !x.truncated && x.tokens == s->answer_ids;
    o.focus_score = s->focus_score;
    o.focus_exempt = s->focus_exempt(s->scene.grid_rows, s->scene.grid_cols);
    outcomes.push_back(o);
  }
  return apply_filter(outcomes, focus_threshold);
}

std::vector<double> gaze_distribution(const ForwardOutput& out, const std::vector<int64_t>& rows) {
  if (rows.empty()) return {};
  std::vector<double> gaze =
      aggregate_gaze(out.attn, out.attn_dim, rows, out.layout.image_positions());
  double total = 0.0;
  for (double v : gaze) total += v;
  if (total <= 0.0) return {};
  for (auto& v : gaze) v /= total;
  return gaze;
}

std::vector<int64_t> reasoning_rows(const ForwardOutput& out) {
  return out.layout.n_latent > 0 ? out.layout.latent_positions() : out.layout.answer_positions();
}

}  // namespace lavit
