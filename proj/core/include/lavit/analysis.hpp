#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "lavit/data.hpp"
#include "lavit/model.hpp"

namespace lavit {

/// H = -sum p_i ln p_i with 0 ln 0 = 0; input must be a distribution.
double attention_entropy(const std::vector<double>& dist);

/// KL(p || q) over plain distributions (0 ln 0 = 0; support violations throw).
double kl_divergence_value(const std::vector<double>& p, const std::vector<double>& q);

/// Coefficient of variation (population std / mean) of the per-sample summed
/// top-k mass.
double salient_cv(const std::vector<std::vector<double>>& maps, int64_t k_salient);

struct CategoryGap {
  int64_t n_tokens = 0;
  double mean_attn_kl = 0.0;
  double mean_hidden_cos_dist = 0.0;
  bool has_hidden = false;
};

struct GapReport {
  /// Absent categories have no entry (reported as absent, not zero).
  std::map<TokenCategory, CategoryGap> per_category;
  double teacher_mean_entropy = 0.0;
  double student_mean_entropy = 0.0;
  double teacher_salient_cv = 0.0;
  double student_salient_cv = 0.0;
  /// Hidden-state cosine distance needs equal hidden widths.
  bool hidden_defined = false;
  int64_t n_samples = 0;
};

/// Teacher free-decodes each sample; both models are then teacher-forced on
/// the teacher's output tokens. Per generated token: per-model single-row
/// image attention distributions -> KL(teacher || student), and (when widths
/// match) cosine distance of the final-layer hidden states at that position.
GapReport perception_gap_report(const Model& teacher, const Model& student,
                                std::span<const Sample* const> samples, int64_t k_salient);

struct FocusCurveRow {
  double threshold = 0.0;
  int64_t n_retained = 0;
  double accuracy = 0.0;
  bool has_accuracy = false;
};

struct FocusCurve {
  std::vector<FocusCurveRow> rows;
  double mean_focus_correct = 0.0;
  double mean_focus_incorrect = 0.0;
  int64_t n_correct = 0;
  int64_t n_incorrect = 0;
};

struct FocusItem {
  double focus = 0.0;
  bool correct = false;
  bool has_focus = true;  // false: degenerate trace, excluded everywhere
};

FocusCurve focus_curve_from(const std::vector<FocusItem>& items,
                            const std::vector<double>& thresholds);

/// Free-decodes each sample, scores S_focus from the decode-time answer rows,
/// and reports accuracy over the subset with S_focus >= threshold.
FocusCurve accuracy_vs_focus_curve(const Model& model, std::span<const Sample* const> samples,
                                   const std::vector<double>& thresholds);

// Report emission.
void write_focus_curve_csv(const FocusCurve& curve, const std::string& path);
void write_gap_report_csv(const GapReport& report, const std::string& path);
void write_histogram_svg(const std::vector<double>& values, int64_t n_bins,
                         const std::string& title, const std::string& path);
void write_curve_svg(const std::vector<double>& xs, const std::vector<double>& ys,
                     const std::string& title, const std::string& path);

}  // namespace lavit
