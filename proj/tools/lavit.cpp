#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lavit/commands.hpp"
#include "lavit/config.hpp"

namespace {

using lavit::RunConfig;

// Every config key becomes a --key flag; flags override the --config file.
void add_config_options(CLI::App* app, RunConfig& cfg) {
  for (auto& f : lavit::config_fields(cfg)) {
    const std::string flag = "--" + f.key;
    switch (f.type) {
      case lavit::FieldType::I64:
        app->add_option(flag, *static_cast<int64_t*>(f.ptr));
        break;
      case lavit::FieldType::U64:
        app->add_option(flag, *static_cast<uint64_t*>(f.ptr));
        break;
      case lavit::FieldType::F64:
        app->add_option(flag, *static_cast<double*>(f.ptr));
        break;
      case lavit::FieldType::Bool:
        app->add_option(flag, *static_cast<bool*>(f.ptr))
            ->check(CLI::IsMember({"true", "false", "1", "0"}));
        break;
      case lavit::FieldType::Str:
        app->add_option(flag, *static_cast<std::string*>(f.ptr));
        break;
    }
  }
}

std::string default_dir(const std::string& name) { return lavit::run_root() + "/" + name; }

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;

  // Load --config before wiring options so flags override file values.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      try {
        lavit::load_config_file(cfg, argv[i + 1]);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
      }
    }
  }

  CLI::App app{"latent visual-thought distillation pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key=value config file (applied before flags)");

  std::string data_dir = default_dir("data");
  std::string teacher_dir = default_dir("teacher");
  std::string extract_dir = default_dir("extract");
  std::string filter_dir = default_dir("filter");
  std::string student_dir = default_dir("student");
  std::string probe_dir = default_dir("probe");
  std::string analyze_dir = default_dir("analyze");
  std::string ablate_dir = default_dir("ablate");
  std::string ckpt, student_ckpt;
  std::vector<double> gammas = {1e-6, 1e-3, 0.1, 0.5, 1.0};

  auto with_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    add_config_options(sub, cfg);
    return sub;
  };

  auto* gen = with_common(app.add_subcommand("gen-data", "generate the synthetic grounded-VQA corpus"));
  gen->add_option("--out", data_dir, "output directory");

  auto* tt = with_common(app.add_subcommand("train-teacher", "train the plain-VQA teacher"));
  tt->add_option("--data", data_dir);
  tt->add_option("--out", teacher_dir);

  auto* ex = with_common(app.add_subcommand("extract", "extract gaze/semantic supervision from the teacher"));
  ex->add_option("--data", data_dir);
  ex->add_option("--teacher", ckpt);
  ex->add_option("--out", extract_dir);

  auto* fl = with_common(app.add_subcommand("filter", "three-stage dataset filter"));
  fl->add_option("--data", data_dir);
  fl->add_option("--teacher", ckpt);
  fl->add_option("--extract", extract_dir);
  fl->add_option("--out", filter_dir);

  auto* ts = with_common(app.add_subcommand("train-student", "train a student on the filtered corpus"));
  ts->add_option("--data", data_dir);
  ts->add_option("--extract", extract_dir);
  ts->add_option("--filter", filter_dir);
  ts->add_option("--out", student_dir);

  auto* pg = with_common(app.add_subcommand("probe-gamma", "gradient-transition diagnostic"));
  pg->add_option("--data", data_dir);
  pg->add_option("--ckpt", ckpt);
  pg->add_option("--gammas", gammas, "gamma values to probe");
  pg->add_option("--out", probe_dir);

  auto* an = with_common(app.add_subcommand("analyze", "gap report, entropy, accuracy-vs-focus"));
  an->add_option("--data", data_dir);
  an->add_option("--teacher", ckpt);
  an->add_option("--student", student_ckpt);
  an->add_option("--out", analyze_dir);

  auto* ab = with_common(app.add_subcommand("ablate", "loss/gating/latent-count ablation grid"));
  ab->add_option("--data", data_dir);
  ab->add_option("--extract", extract_dir);
  ab->add_option("--filter", filter_dir);
  ab->add_option("--out", ablate_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.validate();
    if (gen->parsed()) {
      lavit::cmd_gen_data(cfg, data_dir);
      std::printf("wrote %s\n", lavit::manifest_path(data_dir).c_str());
    } else if (tt->parsed()) {
      auto result = lavit::cmd_train_teacher(cfg, data_dir, teacher_dir);
      std::printf("teacher: %lld steps, val accuracy %.4f\n",
                  static_cast<long long>(result.steps_run), result.final_val_acc);
    } else if (ex->parsed()) {
      if (ckpt.empty()) ckpt = lavit::teacher_ckpt_path(teacher_dir);
      lavit::cmd_extract(cfg, data_dir, ckpt, extract_dir);
      std::printf("wrote %s\n", lavit::payloads_path(extract_dir).c_str());
    } else if (fl->parsed()) {
      if (ckpt.empty()) ckpt = lavit::teacher_ckpt_path(teacher_dir);
      auto report = lavit::cmd_filter(cfg, data_dir, ckpt, extract_dir, filter_dir);
      std::printf("filter: wrong=%zu easy=%zu misaligned=%zu retained=%zu\n",
                  report.wrong_answer.size(), report.too_easy.size(), report.misaligned.size(),
                  report.retained.size());
    } else if (ts->parsed()) {
      auto eval = lavit::cmd_train_student(cfg, data_dir, extract_dir, filter_dir, student_dir);
      std::printf("student: accuracy %.4f (masked %.4f), traj KL %.4f, entropy %.4f\n",
                  eval.accuracy, eval.masked_accuracy, eval.traj_kl, eval.mean_entropy);
    } else if (pg->parsed()) {
      if (ckpt.empty()) ckpt = lavit::teacher_ckpt_path(teacher_dir);
      auto rows = lavit::cmd_probe_gamma(cfg, data_dir, ckpt, gammas, probe_dir);
      for (const auto& r : rows)
        std::printf("gamma %-10g grad_norm %-12g l_ntp %g\n", r.gamma, r.grad_norm, r.l_ntp);
    } else if (an->parsed()) {
      if (ckpt.empty()) ckpt = lavit::teacher_ckpt_path(teacher_dir);
      if (student_ckpt.empty()) student_ckpt = lavit::student_ckpt_path(student_dir);
      lavit::cmd_analyze(cfg, data_dir, ckpt, student_ckpt, analyze_dir);
      std::printf("wrote reports under %s\n", analyze_dir.c_str());
    } else if (ab->parsed()) {
      auto rows = lavit::cmd_ablate(cfg, data_dir, extract_dir, filter_dir, ablate_dir);
      for (const auto& r : rows)
        std::printf("%-14s K=%lld accuracy %.4f masked %.4f traj_kl %.4f\n", r.variant.c_str(),
                    static_cast<long long>(r.k_latent), r.eval.accuracy, r.eval.masked_accuracy,
                    r.eval.traj_kl);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
