#pragma once

#include <string>
#include <vector>

#include "lavit/config.hpp"
#include "lavit/train.hpp"

namespace lavit {

/// End-of-run metrics for a trained student checkpoint.
struct StudentEval {
  double accuracy = 0.0;
  double masked_accuracy = 0.0;  // latent keys hard-masked at inference
  double traj_kl = 0.0;          // teacher gaze || student reasoning-row gaze
  double traj_kl_answer_rows = 0.0;
  double mean_entropy = 0.0;     // of the student's reasoning-row gaze
  double ntp_test = 0.0;
  double masked_ntp_test = 0.0;
  int64_t n_test = 0;
};

/// Corpus loaded with split views; payloads attached when available.
struct LoadedCorpus {
  std::vector<Sample> samples;
  std::vector<const Sample*> train, val, test;
};

LoadedCorpus load_corpus(const RunConfig& cfg, const std::string& data_dir);
void attach_payloads(LoadedCorpus& corpus, const std::string& extract_dir);

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir);

/// Trains the plain-VQA teacher; throws if the accuracy target is missed
/// within the step budget.
TrainResult cmd_train_teacher(const RunConfig& cfg, const std::string& data_dir,
                              const std::string& out_dir);

void cmd_extract(const RunConfig& cfg, const std::string& data_dir,
                 const std::string& teacher_ckpt, const std::string& out_dir);

/// Trains the text-only difficulty baseline (image keys masked) and applies
/// the staged filter to the training split.
FilterReport cmd_filter(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& teacher_ckpt, const std::string& extract_dir,
                        const std::string& out_dir);

StudentEval cmd_train_student(const RunConfig& cfg, const std::string& data_dir,
                              const std::string& extract_dir, const std::string& filter_dir,
                              const std::string& out_dir);

std::vector<ProbeRow> cmd_probe_gamma(const RunConfig& cfg, const std::string& data_dir,
                                      const std::string& ckpt, const std::vector<double>& gammas,
                                      const std::string& out_dir);

void cmd_analyze(const RunConfig& cfg, const std::string& data_dir,
                 const std::string& teacher_ckpt, const std::string& student_ckpt,
                 const std::string& out_dir);

struct AblationRow {
  std::string variant;
  int64_t k_latent = 0;
  StudentEval eval;
};

/// Produces the ablation grid: loss-term removals, masked-latent inference,
/// single-stage training, and the latent-count sweep K in {4, 6, 8}.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const std::string& data_dir,
                                    const std::string& extract_dir, const std::string& filter_dir,
                                    const std::string& out_dir);

/// Shared artifact-file conventions.
std::string manifest_path(const std::string& data_dir);
std::string payloads_path(const std::string& extract_dir);
std::string report_path(const std::string& filter_dir);
std::string teacher_ckpt_path(const std::string& teacher_dir);
std::string student_ckpt_path(const std::string& student_dir);
std::string textonly_ckpt_path(const std::string& filter_dir);

void write_train_log_csv(const std::vector<StepLog>& log, const std::string& path);
void write_student_eval_json(const StudentEval& eval, const std::string& path);
StudentEval read_student_eval_json(const std::string& path);

/// Evaluates a trained student on the test split; the teacher's gaze comes
/// from the attached extraction payloads.
StudentEval evaluate_student(const RunConfig& cfg, const Model& student,
                             const LoadedCorpus& corpus);

}  // namespace lavit
