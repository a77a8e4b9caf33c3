#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lavit/data.hpp"
#include "lavit/rng.hpp"

using namespace lavit;
namespace fs = std::filesystem;

namespace {

CorpusConfig small_corpus(uint64_t seed) {
  CorpusConfig c;
  c.seed = seed;
  c.n_train = 60;
  c.n_val = 10;
  c.n_test = 10;
  c.grid_rows = 4;
  c.grid_cols = 4;
  c.patch_px = 4;
  return c;
}

// Independent rule oracle: re-derives the answer by scanning the scene.
std::string derive_answer(const Sample& s) {
  const auto& words = s.question_words;
  const auto& objs = s.scene.objects;
  if (s.kind == QuestionKind::Attribute) {
    const std::string shape = words.back();
    for (const auto& o : objs)
      if (to_word(o.shape) == shape) return to_word(o.color);
    return "?";
  }
  if (s.kind == QuestionKind::Spatial) {
    const std::string shape = words.back();
    for (const auto& o : objs) {
      if (to_word(o.shape) != shape) continue;
      // nearest occupied cell strictly left in the same row
      const SceneObject* best = nullptr;
      for (const auto& cand : objs)
        if (cand.row == o.row && cand.col < o.col && (!best || cand.col > best->col)) best = &cand;
      return best ? to_word(best->shape) : "?";
    }
    return "?";
  }
  const std::string color = words[3], shape = words[4];
  for (const auto& o : objs)
    if (to_word(o.shape) == shape && to_word(o.color) == color) return "yes";
  return "no";
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("generate_corpus is deterministic: same seed, byte-identical manifests") {
  CorpusConfig cfg = small_corpus(7);
  auto a = generate_corpus(cfg);
  auto b = generate_corpus(cfg);
  const std::string pa = (fs::temp_directory_path() / "manifest_a.jsonl").string();
  const std::string pb = (fs::temp_directory_path() / "manifest_b.jsonl").string();
  write_manifest(a, pa);
  write_manifest(b, pb);
  CHECK(file_bytes(pa) == file_bytes(pb));

  auto c = generate_corpus(small_corpus(8));
  const std::string pc = (fs::temp_directory_path() / "manifest_c.jsonl").string();
  write_manifest(c, pc);
  CHECK(file_bytes(pa) != file_bytes(pc));
}

TEST_CASE("every generated answer agrees with the independent rule oracle") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    auto samples = generate_corpus(small_corpus(seed));
    for (const auto& s : samples) {
      INFO("sample ", s.id, " kind ", to_string(s.kind));
      CHECK(s.answer_word == derive_answer(s));
    }
  }
}

TEST_CASE("scene invariants: objects on distinct cells, distinct pairs, valid bbox") {
  auto samples = generate_corpus(small_corpus(5));
  for (const auto& s : samples) {
    CHECK(!s.scene.objects.empty());
    std::vector<int64_t> cells;
    std::vector<int> pairs;
    for (const auto& o : s.scene.objects) {
      cells.push_back(o.row * s.scene.grid_cols + o.col);
      pairs.push_back(static_cast<int>(o.shape) * 4 + static_cast<int>(o.color));
    }
    std::sort(cells.begin(), cells.end());
    CHECK(std::adjacent_find(cells.begin(), cells.end()) == cells.end());
    std::sort(pairs.begin(), pairs.end());
    CHECK(std::adjacent_find(pairs.begin(), pairs.end()) == pairs.end());
    CHECK_NOTHROW(s.bbox.validate(s.scene.grid_rows, s.scene.grid_cols));
    // negative existence answers carry the full-grid convention and exemption
    if (s.kind == QuestionKind::Existence && s.answer_word == "no") {
      CHECK(s.bbox.covers_grid(s.scene.grid_rows, s.scene.grid_cols));
      CHECK(s.focus_exempt(s.scene.grid_rows, s.scene.grid_cols));
    }
  }
}

TEST_CASE("manifest round-trip reproduces samples and rendered pixels") {
  CorpusConfig cfg = small_corpus(11);
  auto samples = generate_corpus(cfg);
  const std::string path = (fs::temp_directory_path() / "manifest_rt.jsonl").string();
  write_manifest(samples, path);
  auto loaded = read_manifest(path, cfg);
  REQUIRE(loaded.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].id == samples[i].id);
    CHECK(loaded[i].answer_word == samples[i].answer_word);
    CHECK(loaded[i].question_ids == samples[i].question_ids);
    REQUIRE(loaded[i].pixels.same_shape(samples[i].pixels));
    for (int64_t j = 0; j < samples[i].pixels.numel(); ++j)
      CHECK(loaded[i].pixels.at(j) == samples[i].pixels.at(j));
  }
}

TEST_CASE("render is deterministic per noise seed and distinct across seeds") {
  Scene scene;
  scene.grid_rows = 2;
  scene.grid_cols = 2;
  scene.objects = {{0, 1, ObjShape::Circle, ObjColor::Red}};
  Tensor a = render_scene(scene, 4, 123);
  Tensor b = render_scene(scene, 4, 123);
  Tensor c = render_scene(scene, 4, 124);
  bool same = true, differs = false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    same &= a.at(i) == b.at(i);
    differs |= a.at(i) != c.at(i);
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("apply_filter: constructed fixture buckets by stage") {
  // 2 teacher-wrong, 1 text-only-solvable, 1 misaligned (0.10), 3 clean.
  std::vector<FilterOutcome> outcomes = {
      {0, false, false, 0.9, false, false}, {1, false, true, 0.9, false, false},
      {2, true, true, 0.9, false, false},   {3, true, false, 0.10, false, false},
      {4, true, false, 0.9, false, false},  {5, true, false, 0.5, false, false},
      {6, true, false, 0.21, false, false},
  };
  FilterReport r = apply_filter(outcomes, 0.20);
  CHECK(r.wrong_answer == std::vector<int64_t>{0, 1});
  CHECK(r.too_easy == std::vector<int64_t>{2});
  CHECK(r.misaligned == std::vector<int64_t>{3});
  CHECK(r.retained == std::vector<int64_t>{4, 5, 6});
  CHECK(r.total() == 7);
}

TEST_CASE("apply_filter: order independence, zero threshold, all-clean corpus") {
  std::vector<FilterOutcome> outcomes;
  Rng rng(3);
  for (int64_t i = 0; i < 40; ++i) {
    FilterOutcome o;
    o.id = i;
    o.teacher_correct = rng.below(4) != 0;
    o.textonly_correct = rng.below(3) == 0;
    o.focus_score = rng.uniform();
    o.focus_exempt = rng.below(5) == 0;
    outcomes.push_back(o);
  }
  FilterReport a = apply_filter(outcomes, 0.2);
  std::vector<FilterOutcome> shuffled = outcomes;
  rng.shuffle(shuffled);
  FilterReport b = apply_filter(shuffled, 0.2);
  CHECK(a.wrong_answer == b.wrong_answer);
  CHECK(a.too_easy == b.too_easy);
  CHECK(a.misaligned == b.misaligned);
  CHECK(a.retained == b.retained);

  FilterReport zero = apply_filter(outcomes, 0.0);
  CHECK(zero.misaligned.empty());

  std::vector<FilterOutcome> clean;
  for (int64_t i = 0; i < 10; ++i) clean.push_back({i, true, false, 0.9, false, false});
  FilterReport all = apply_filter(clean, 0.2);
  CHECK(all.retained.size() == 10);
  CHECK(all.wrong_answer.empty());
  CHECK(all.too_easy.empty());
  CHECK(all.misaligned.empty());
}

TEST_CASE("apply_filter: missing decode routes to wrong_answer with the flag counted") {
  std::vector<FilterOutcome> outcomes = {{0, true, false, 0.9, false, true}};
  FilterReport r = apply_filter(outcomes, 0.2);
  CHECK(r.wrong_answer == std::vector<int64_t>{0});
  CHECK(r.missing_decodes == 1);
}

TEST_CASE("exempt samples skip the alignment stage") {
  std::vector<FilterOutcome> outcomes = {{0, true, false, 0.01, true, false}};
  FilterReport r = apply_filter(outcomes, 0.2);
  CHECK(r.retained == std::vector<int64_t>{0});
}

TEST_CASE("question kinds cover all three templates and categories") {
  auto samples = generate_corpus(small_corpus(2));
  bool attr = false, spat = false, exist = false;
  for (const auto& s : samples) {
    attr |= s.kind == QuestionKind::Attribute && s.answer_category == TokenCategory::Attribute;
    spat |= s.kind == QuestionKind::Spatial && s.answer_category == TokenCategory::Object;
    exist |= s.kind == QuestionKind::Existence && s.answer_category == TokenCategory::Functional;
    CHECK(s.question_ids.size() == 6);  // system prefix + 5 template words
    CHECK(s.answer_ids.size() == 1);
  }
  CHECK(attr);
  CHECK(spat);
  CHECK(exist);
}

TEST_CASE("grid too small is rejected") {
  CorpusConfig cfg = small_corpus(1);
  cfg.grid_rows = 1;
  cfg.grid_cols = 2;
  CHECK_THROWS_AS(generate_corpus(cfg), ValueError);
}
