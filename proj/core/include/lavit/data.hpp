#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lavit/tensor.hpp"
#include "lavit/trace.hpp"

namespace lavit {

enum class ObjShape { Circle, Square, Triangle };
enum class ObjColor { Red, Green, Blue, Yellow };
enum class QuestionKind { Attribute, Spatial, Existence };
enum class TokenCategory { Functional, Object, Attribute };

const char* to_word(ObjShape s);
const char* to_word(ObjColor c);
const char* to_string(QuestionKind k);
const char* to_string(TokenCategory c);
QuestionKind question_kind_from(const std::string& s);

/// Fixed token table shared by every model in the family.
class Vocab {
 public:
  static const Vocab& instance();
  int id(const std::string& word) const;
  const std::string& word(int id) const;
  int64_t size() const { return static_cast<int64_t>(words_.size()); }
  int boa() const { return 0; }
  int eoa() const { return 1; }
  int sys() const { return 2; }
  /// Category by word class: colors -> Attribute, shapes -> Object,
  /// everything else (yes/no, stop words, markers) -> Functional.
  TokenCategory category(int id) const;

 private:
  Vocab();
  std::vector<std::string> words_;
};

struct SceneObject {
  int64_t row = 0, col = 0;
  ObjShape shape = ObjShape::Circle;
  ObjColor color = ObjColor::Red;
};

struct Scene {
  int64_t grid_rows = 0, grid_cols = 0;
  std::vector<SceneObject> objects;
};

/// One grounded-VQA sample plus (after extraction) its supervision payload.
struct Sample {
  int64_t id = 0;
  std::string split;  // train | val | test
  QuestionKind kind = QuestionKind::Attribute;
  Scene scene;
  std::vector<std::string> question_words;  // template words, no system prefix
  std::string answer_word;
  BBox bbox;
  TokenCategory answer_category = TokenCategory::Functional;
  uint64_t noise_seed = 0;

  // Derived at load/generation time.
  std::vector<int> question_ids;  // system prefix + template words
  std::vector<int> answer_ids;    // single token
  Tensor pixels;                  // [n_image x patch_dim]

  // Supervision payload (extract stage).
  bool has_supervision = false;
  std::vector<double> gaze;           // raw S_j
  std::vector<double> a_traj;         // min-max normalized
  std::vector<double> sparse_target;  // top-k renormalized
  Tensor v_sem;
  double focus_score = 0.0;
  bool degenerate_trace = false;

  /// Exempt from the alignment filter stage: no target region exists.
  bool focus_exempt(int64_t grid_rows, int64_t grid_cols) const {
    return bbox.covers_grid(grid_rows, grid_cols);
  }
};

struct CorpusConfig {
  uint64_t seed = 0;
  int64_t n_train = 5000, n_val = 500, n_test = 500;
  int64_t grid_rows = 4, grid_cols = 4;
  int64_t patch_px = 4;  // pixels per patch side
  bool system_prefix = true;

  int64_t n_image() const { return grid_rows * grid_cols; }
  int64_t patch_dim() const { return patch_px * patch_px * 3; }
  int64_t n_question() const { return 5 + (system_prefix ? 1 : 0); }
};

/// Renders the scene into per-patch pixel blocks (3 channels, row-major per
/// patch) with a small seeded jitter so patches are never bit-identical.
Tensor render_scene(const Scene& scene, int64_t patch_px, uint64_t noise_seed);

/// Deterministic synthetic corpus: every answer is derivable from the scene
/// by rule, the referent is unique by construction, and the bbox encloses
/// exactly the referent cells (full grid for negative existence answers).
std::vector<Sample> generate_corpus(const CorpusConfig& cfg);

void write_manifest(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> read_manifest(const std::string& path, const CorpusConfig& cfg);

/// Per-sample outcomes consumed by the staged filter.
struct FilterOutcome {
  int64_t id = 0;
  bool teacher_correct = false;
  bool textonly_correct = false;
  double focus_score = 0.0;
  bool focus_exempt = false;
  bool missing_decode = false;  // routed to wrong_answer with a flag
};

struct FilterReport {
  std::vector<int64_t> wrong_answer, too_easy, misaligned, retained;
  int64_t missing_decodes = 0;

  int64_t total() const {
    return static_cast<int64_t>(wrong_answer.size() + too_easy.size() + misaligned.size() +
                                retained.size());
  }
};

/// Stages in order: (1) teacher decode must match ground truth, (2) samples a
/// text-only model solves are dropped, (3) focus score below threshold is
/// dropped. Every input id lands in exactly one bucket; bucket contents are
/// independent of input order.
FilterReport apply_filter(const std::vector<FilterOutcome>& outcomes, double focus_threshold);

void write_filter_report(const FilterReport& report, const std::string& path);
FilterReport read_filter_report(const std::string& path);

}  // namespace lavit
