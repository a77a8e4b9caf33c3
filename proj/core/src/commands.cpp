#include "lavit/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "lavit/analysis.hpp"
#include "lavit/container.hpp"
#include "lavit/rng.hpp"

namespace lavit {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string manifest_path(const std::string& data_dir) { return data_dir + "/manifest.jsonl"; }
std::string payloads_path(const std::string& extract_dir) { return extract_dir + "/payloads.lvt"; }
std::string report_path(const std::string& filter_dir) { return filter_dir + "/report.json"; }
std::string teacher_ckpt_path(const std::string& dir) { return dir + "/teacher.lvt"; }
std::string student_ckpt_path(const std::string& dir) { return dir + "/student.lvt"; }
std::string textonly_ckpt_path(const std::string& dir) { return dir + "/textonly.lvt"; }

namespace {

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void require_file(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw IoError("missing artifact '" + path + "': run `" + producer + "` first");
}

Model load_model(const std::string& path, const std::string& producer) {
  require_file(path, producer);
  return Model::load(path);
}

std::string sample_key(int64_t id) { return "s" + std::to_string(id); }

double mean_ntp(const Model& model, std::span<const Sample* const> samples,
                const ForwardOptions& opts) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (const Sample* s : samples) {
    Tape tape(false);
    ForwardOutput out = model.forward(tape, model.params(), model_inputs(*s), opts);
    std::vector<int> targets = s->answer_ids;
    targets.push_back(model.config().eoa_id);
    acc += ntp_loss(tape, out.logits, targets).item();
  }
  return acc / static_cast<double>(samples.size());
}

}  // namespace

LoadedCorpus load_corpus(const RunConfig& cfg, const std::string& data_dir) {
  require_file(manifest_path(data_dir), "gen-data");
  LoadedCorpus corpus;
  corpus.samples = read_manifest(manifest_path(data_dir), cfg.corpus());
  for (const auto& s : corpus.samples) {
    if (s.split == "train")
      corpus.train.push_back(&s);
    else if (s.split == "val")
      corpus.val.push_back(&s);
    else
      corpus.test.push_back(&s);
  }
  return corpus;
}

void attach_payloads(LoadedCorpus& corpus, const std::string& extract_dir) {
  require_file(payloads_path(extract_dir), "extract");
  TensorContainer c = TensorContainer::read(payloads_path(extract_dir));
  for (auto& s : corpus.samples) {
    const std::string key = sample_key(s.id);
    if (!c.contains(key + "/gaze")) continue;
    auto to_vec = [&](const std::string& name) {
      const Tensor& t = c.get(name);
      return std::vector<double>(t.data->begin(), t.data->end());
    };
    s.gaze = to_vec(key + "/gaze");
    s.a_traj = to_vec(key + "/a_traj");
    s.sparse_target = to_vec(key + "/sparse");
    s.v_sem = c.get(key + "/v_sem").clone();
    const Tensor& meta = c.get(key + "/meta");
    s.focus_score = meta.at(0);
    s.degenerate_trace = meta.at(1) != 0.0;
    s.has_supervision = true;
  }
}

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  auto samples = generate_corpus(cfg.corpus());
  write_manifest(samples, manifest_path(out_dir));
  write_config_snapshot(cfg, out_dir + "/config.snapshot");
}

void write_train_log_csv(const std::vector<StepLog>& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "'");
  f << "step,l_ntp,l_concept,l_traj,l_total,gamma\n";
  char buf[256];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(row.step), row.l_ntp, row.l_concept, row.l_traj,
                  row.l_total, row.gamma);
    f << buf;
  }
}

TrainResult cmd_train_teacher(const RunConfig& cfg, const std::string& data_dir,
                              const std::string& out_dir) {
  ensure_dir(out_dir);
  LoadedCorpus corpus = load_corpus(cfg, data_dir);
  Model teacher(cfg.teacher_model(), derive_seed(cfg.seed, 1));

  TrainConfig t;
  t.total_steps = cfg.teacher_steps;
  t.single_stage = true;  // the teacher trains at the plain inference topology
  t.lambda = 0.0;
  t.lr = cfg.effective_lr();
  t.beta1 = cfg.adam_beta1;
  t.beta2 = cfg.adam_beta2;
  t.weight_decay = cfg.weight_decay;
  t.lr_warmup_ratio = cfg.lr_warmup_ratio;
  t.batch_size = cfg.batch_size;
  t.seed = derive_seed(cfg.seed, 11);
  t.stop_at_val_acc = cfg.teacher_target_acc;
  t.eval_every = cfg.eval_every;
  t.eval_subset = cfg.eval_subset;

  TrainResult result = train_model(teacher, corpus.train, corpus.val, t);
  teacher.save(teacher_ckpt_path(out_dir));
  write_train_log_csv(result.log, out_dir + "/train_log.csv");
  json j = {{"steps_run", result.steps_run},
            {"val_accuracy", result.final_val_acc},
            {"reached_target", result.reached_target}};
  std::ofstream(out_dir + "/result.json") << j.dump(2) << "\n";
  write_config_snapshot(cfg, out_dir + "/config.snapshot");
  if (!result.reached_target)
    throw Error("train-teacher: validation accuracy " + std::to_string(result.final_val_acc) +
                " missed the " + std::to_string(cfg.teacher_target_acc) + " target within " +
                std::to_string(cfg.teacher_steps) + " steps");
  return result;
}

void cmd_extract(const RunConfig& cfg, const std::string& data_dir,
                 const std::string& teacher_ckpt, const std::string& out_dir) {
  ensure_dir(out_dir);
  LoadedCorpus corpus = load_corpus(cfg, data_dir);
  Model teacher = load_model(teacher_ckpt, "train-teacher");

  ExtractConfig ex;
  ex.topk = cfg.topk;
  ex.eps_norm = cfg.eps_norm;

  TensorContainer payloads;
  std::ofstream traces(out_dir + "/traces.csv", std::ios::trunc);
  traces << "id,focus_score,degenerate\n";
  char buf[96];
  for (auto& s : corpus.samples) {
    extract_supervision(teacher, s, ex);
    const std::string key = sample_key(s.id);
    auto put_vec = [&](const std::string& name, const std::vector<double>& v) {
      payloads.put(name, Tensor({static_cast<int64_t>(v.size())}, std::vector<double>(v)), 1);
    };
    put_vec(key + "/gaze", s.gaze);
    put_vec(key + "/a_traj", s.a_traj);
    put_vec(key + "/sparse", s.sparse_target);
    payloads.put(key + "/v_sem", s.v_sem, 1);
    payloads.put(key + "/meta",
                 Tensor({2}, {s.focus_score, s.degenerate_trace ? 1.0 : 0.0}), 2);
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%d\n", static_cast<long long>(s.id), s.focus_score,
                  s.degenerate_trace ? 1 : 0);
    traces << buf;
  }
  payloads.write(payloads_path(out_dir));
  write_config_snapshot(cfg, out_dir + "/config.snapshot");
}

FilterReport cmd_filter(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& teacher_ckpt, const std::string& extract_dir,
                        const std::string& out_dir) {
  ensure_dir(out_dir);
  LoadedCorpus corpus = load_corpus(cfg, data_dir);
  attach_payloads(corpus, extract_dir);
  Model teacher = load_model(teacher_ckpt, "train-teacher");

  // Difficulty baseline: same decoder family, image keys permanently masked.
  Model textonly(cfg.teacher_model(), derive_seed(cfg.seed, 2));
  TrainConfig t;
  t.total_steps = cfg.textonly_steps;
  t.single_stage = true;
  t.lambda = 0.0;
  t.mask_image = true;
  t.lr = cfg.effective_lr();
  t.beta1 = cfg.adam_beta1;
  t.beta2 = cfg.adam_beta2;
  t.lr_warmup_ratio = cfg.lr_warmup_ratio;
  t.batch_size = cfg.batch_size;
  t.seed = derive_seed(cfg.seed, 12);
  TrainResult textonly_result = train_model(textonly, corpus.train, {}, t);
  textonly.save(textonly_ckpt_path(out_dir));
  write_train_log_csv(textonly_result.log, out_dir + "/textonly_train_log.csv");

  FilterReport report = filter_dataset(teacher, textonly, corpus.train, cfg.focus_threshold);
  write_filter_report(report, report_path(out_dir));
  write_config_snapshot(cfg, out_dir + "/config.snapshot");
  return report;
}

StudentEval evaluate_student(const RunConfig& cfg, const Model& student,
                             const LoadedCorpus& corpus) {
  (void)cfg;
  StudentEval eval;
  eval.n_test = static_cast<int64_t>(corpus.test.size());
  eval.accuracy = answer_accuracy(student, corpus.test);
  ForwardOptions masked;
  masked.mask_latents = true;
  eval.masked_accuracy = answer_accuracy(student, corpus.test, masked);

  double kl_reason = 0.0, kl_answer = 0.0, entropy = 0.0;
  int64_t n_kl = 0, n_ent = 0;
  for (const Sample* s : corpus.test) {
    if (!s->has_supervision) continue;
    double total = 0.0;
    for (double v : s->gaze) total += v;
    if (total <= 0.0) continue;
    std::vector<double> teacher_dist = s->gaze;
    for (auto& v : teacher_dist) v /= total;

    Tape tape(false);
    ForwardOutput out = student.forward(tape, student.params(), model_inputs(*s), {});
    auto reason = gaze_distribution(out, reasoning_rows(out));
    auto answer = gaze_distribution(out, out.layout.answer_positions());
    if (reason.empty() || answer.empty()) continue;
    kl_reason += kl_divergence_value(teacher_dist, reason);
    kl_answer += kl_divergence_value(teacher_dist, answer);
    ++n_kl;
    entropy += attention_entropy(reason);
    ++n_ent;
  }
  if (n_kl > 0) {
    eval.traj_kl = kl_reason / static_cast<double>(n_kl);
    eval.traj_kl_answer_rows = kl_answer / static_cast<double>(n_kl);
  }
  if (n_ent > 0) eval.mean_entropy = entropy / static_cast<double>(n_ent);

  eval.ntp_test = mean_ntp(student, corpus.test, {});
  eval.masked_ntp_test = mean_ntp(student, corpus.test, masked);
  return eval;
}

void write_student_eval_json(const StudentEval& e, const std::string& path) {
  json j = {{"accuracy", e.accuracy},
            {"masked_accuracy", e.masked_accuracy},
            {"traj_kl", e.traj_kl},
            {"traj_kl_answer_rows", e.traj_kl_answer_rows},
            {"mean_entropy", e.mean_entropy},
            {"ntp_test", e.ntp_test},
            {"masked_ntp_test", e.masked_ntp_test},
            {"n_test", e.n_test}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "'");
  f << j.dump(2) << "\n";
}

StudentEval read_student_eval_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  json j = json::parse(f);
  StudentEval e;
  e.accuracy = j.at("accuracy");
  e.masked_accuracy = j.at("masked_accuracy");
  e.traj_kl = j.at("traj_kl");
  e.traj_kl_answer_rows = j.at("traj_kl_answer_rows");
  e.mean_entropy = j.at("mean_entropy");
  e.ntp_test = j.at("ntp_test");
  e.masked_ntp_test = j.at("masked_ntp_test");
  e.n_test = j.at("n_test");
  return e;
}

StudentEval cmd_train_student(const RunConfig& cfg, const std::string& data_dir,
                              const std::string& extract_dir, const std::string& filter_dir,
                              const std::string& out_dir) {
  ensure_dir(out_dir);
  LoadedCorpus corpus = load_corpus(cfg, data_dir);
  attach_payloads(corpus, extract_dir);
  require_file(report_path(filter_dir), "filter");
  FilterReport report = read_filter_report(report_path(filter_dir));

  std::vector<const Sample*> retained;
  {
    std::vector<char> keep(corpus.samples.size(), 0);
    for (int64_t id : report.retained)
      if (id >= 0 && static_cast<size_t>(id) < keep.size()) keep[static_cast<size_t>(id)] = 1;
    for (const Sample* s : corpus.train)
      if (keep[static_cast<size_t>(s->id)]) retained.push_back(s);
  }
  if (retained.empty()) throw ValueError("train-student: filter retained no training samples");

  Model student(cfg.student_model(), derive_seed(cfg.seed, 3));
  TrainConfig t = cfg.student_train();
  t.seed = derive_seed(cfg.seed, 13);
  TrainResult result = train_model(student, retained, {}, t);

  student.save(student_ckpt_path(out_dir));
  write_train_log_csv(result.log, out_dir + "/train_log.csv");
  StudentEval eval = evaluate_student(cfg, student, corpus);
  write_student_eval_json(eval, out_dir + "/eval.json");
  write_config_snapshot(cfg, out_dir + "/config.snapshot");
  return eval;
}

std::vector<ProbeRow> cmd_probe_gamma(const RunConfig& cfg, const std::string& data_dir,
                                      const std::string& ckpt, const std::vector<double>& gammas,
                                      const std::string& out_dir) {
  ensure_dir(out_dir);
  LoadedCorpus corpus = load_corpus(cfg, data_dir);
  Model model = load_model(ckpt, "train-teacher");

  // Fixed batch with the strongest image dependence: attribute questions.
  std::vector<ModelInputs> batch;
  for (const Sample* s : corpus.val) {
    if (s->kind == QuestionKind::Attribute) batch.push_back(model_inputs(*s));
    if (static_cast<int64_t>(batch.size()) >= cfg.batch_size) break;
  }
  if (batch.empty()) throw ValueError("probe-gamma: no attribute samples in the validation split");

  auto rows = gradient_transition_probe(model, batch, gammas);
  std::ofstream f(out_dir + "/probe.csv", std::ios::trunc);
  f << "gamma,grad_norm,l_ntp\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", r.gamma, r.grad_norm, r.l_ntp);
    f << buf;
  }
  write_config_snapshot(cfg, out_dir + "/config.snapshot");
  return rows;
}

void cmd_analyze(const RunConfig& cfg, const std::string& data_dir,
                 const std::string& teacher_ckpt, const std::string& student_ckpt,
                 const std::string& out_dir) {
  ensure_dir(out_dir);
  LoadedCorpus corpus = load_corpus(cfg, data_dir);
  Model teacher = load_model(teacher_ckpt, "train-teacher");
  Model student = load_model(student_ckpt, "train-student");

  const int64_t k_salient = std::min<int64_t>(cfg.topk, cfg.grid_rows * cfg.grid_cols);
  GapReport gap = perception_gap_report(teacher, student, corpus.test, k_salient);
  write_gap_report_csv(gap, out_dir + "/gap_report.csv");

  const std::vector<double> thresholds = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  struct Entry {
    const Model* model;
    const char* name;
  } entries[] = {{&teacher, "teacher"}, {&student, "student"}};
  for (const auto& e : entries) {
    FocusCurve curve = accuracy_vs_focus_curve(*e.model, corpus.test, thresholds);
    write_focus_curve_csv(curve, out_dir + "/acc_vs_focus_" + e.name + ".csv");
    std::vector<double> xs, ys;
    for (const auto& r : curve.rows)
      if (r.has_accuracy) {
        xs.push_back(r.threshold);
        ys.push_back(r.accuracy);
      }
    write_curve_svg(xs, ys, std::string("accuracy vs focus threshold (") + e.name + ")",
                    out_dir + "/acc_vs_focus_" + e.name + ".svg");

    std::vector<double> entropies;
    for (const Sample* s : corpus.test) {
      Tape tape(false);
      ForwardOutput out = e.model->forward(tape, e.model->params(), model_inputs(*s), {});
      auto dist = gaze_distribution(out, reasoning_rows(out));
      if (!dist.empty()) entropies.push_back(attention_entropy(dist));
    }
    write_histogram_svg(entropies, 24, std::string("attention entropy (") + e.name + ")",
                        out_dir + "/entropy_" + e.name + ".svg");
  }
  write_config_snapshot(cfg, out_dir + "/config.snapshot");
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const std::string& data_dir,
                                    const std::string& extract_dir, const std::string& filter_dir,
                                    const std::string& out_dir) {
  ensure_dir(out_dir);
  std::vector<AblationRow> rows;

  auto run_variant = [&](const std::string& name, RunConfig variant) {
    AblationRow row;
    row.variant = name;
    row.k_latent = variant.k_latent;
    row.eval = cmd_train_student(variant, data_dir, extract_dir, filter_dir,
                                 out_dir + "/" + name);
    rows.push_back(row);
  };

  run_variant("full", cfg);
  {
    RunConfig v = cfg;
    v.use_traj_loss = false;
    run_variant("no_traj", v);
  }
  {
    RunConfig v = cfg;
    v.use_concept_loss = false;
    run_variant("no_concept", v);
  }
  {
    RunConfig v = cfg;
    v.single_stage = true;
    run_variant("single_stage", v);
  }
  for (int64_t k : {4, 6, 8}) {
    if (k == cfg.k_latent) continue;  // covered by the full run
    RunConfig v = cfg;
    v.k_latent = k;
    run_variant("k" + std::to_string(k), v);
  }

  // Masked-latent inference on the full checkpoint (no retraining).
  {
    LoadedCorpus corpus = load_corpus(cfg, data_dir);
    attach_payloads(corpus, extract_dir);
    Model full = Model::load(student_ckpt_path(out_dir + "/full"));
    const std::string dir = out_dir + "/masked_latents";
    ensure_dir(dir);
    StudentEval base = evaluate_student(cfg, full, corpus);
    // Report the masked numbers as the headline for this variant.
    StudentEval eval = base;
    eval.accuracy = base.masked_accuracy;
    eval.ntp_test = base.masked_ntp_test;
    write_student_eval_json(eval, dir + "/eval.json");
    write_config_snapshot(cfg, dir + "/config.snapshot");
    AblationRow row;
    row.variant = "masked_latents";
    row.k_latent = cfg.k_latent;
    row.eval = eval;
    rows.push_back(row);
  }

  std::ofstream f(out_dir + "/summary.csv", std::ios::trunc);
  f << "variant,k_latent,accuracy,masked_accuracy,traj_kl,mean_entropy,ntp_test\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.variant.c_str(),
                  static_cast<long long>(r.k_latent), r.eval.accuracy, r.eval.masked_accuracy,
                  r.eval.traj_kl, r.eval.mean_entropy, r.eval.ntp_test);
    f << buf;
  }
  f.close();
  write_config_snapshot(cfg, out_dir + "/config.snapshot");
  return rows;
}

}  // namespace lavit
