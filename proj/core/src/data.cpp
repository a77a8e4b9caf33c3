#include "lavit/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "lavit/rng.hpp"

namespace lavit {

using json = nlohmann::json;

const char* to_word(ObjShape s) {
  switch (s) {
    case ObjShape::Circle: return "circle";
    case ObjShape::Square: return "square";
    case ObjShape::Triangle: return "triangle";
  }
  return "?";
}

const char* to_word(ObjColor c) {
  switch (c) {
    case ObjColor::Red: return "red";
    case ObjColor::Green: return "green";
    case ObjColor::Blue: return "blue";
    case ObjColor::Yellow: return "yellow";
  }
  return "?";
}

const char* to_string(QuestionKind k) {
  switch (k) {
    case QuestionKind::Attribute: return "attribute";
    case QuestionKind::Spatial: return "spatial";
    case QuestionKind::Existence: return "existence";
  }
  return "?";
}

const char* to_string(TokenCategory c) {
  switch (c) {
    case TokenCategory::Functional: return "FUNCTIONAL";
    case TokenCategory::Object: return "OBJECT";
    case TokenCategory::Attribute: return "ATTRIBUTE";
  }
  return "?";
}

QuestionKind question_kind_from(const std::string& s) {
  if (s == "attribute") return QuestionKind::Attribute;
  if (s == "spatial") return QuestionKind::Spatial;
  if (s == "existence") return QuestionKind::Existence;
  throw ValueError("unknown question kind '" + s + "'");
}

Vocab::Vocab()
    : words_{"<boa>", "<eoa>", "<sys>", "what",  "color",  "is",       "the",
             "left",  "of",    "there", "a",     "circle", "square",   "triangle",
             "red",   "green", "blue",  "yellow", "yes",   "no"} {}

const Vocab& Vocab::instance() {
  static const Vocab v;
  return v;
}

int Vocab::id(const std::string& word) const {
  for (size_t i = 0; i < words_.size(); ++i)
    if (words_[i] == word) return static_cast<int>(i);
  throw ValueError("Vocab: unknown word '" + word + "'");
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= static_cast<int>(words_.size())) throw ValueError("Vocab: id out of range");
  return words_[static_cast<size_t>(id)];
}

TokenCategory Vocab::category(int id) const {
  const std::string& w = word(id);
  if (w == "red" || w == "green" || w == "blue" || w == "yellow") return TokenCategory::Attribute;
  if (w == "circle" || w == "square" || w == "triangle") return TokenCategory::Object;
  return TokenCategory::Functional;
}

namespace {

void color_rgb(ObjColor c, double rgb[3]) {
  switch (c) {
    case ObjColor::Red: rgb[0] = 1; rgb[1] = 0; rgb[2] = 0; break;
    case ObjColor::Green: rgb[0] = 0; rgb[1] = 1; rgb[2] = 0; break;
    case ObjColor::Blue: rgb[0] = 0; rgb[1] = 0; rgb[2] = 1; break;
    case ObjColor::Yellow: rgb[0] = 1; rgb[1] = 1; rgb[2] = 0; break;
  }
}

bool shape_mask(ObjShape s, int64_t r, int64_t c, int64_t px) {
  const double half = static_cast<double>(px) / 2.0;
  switch (s) {
    case ObjShape::Square:
      return true;
    case ObjShape::Circle: {
      const double dr = static_cast<double>(r) + 0.5 - half;
      const double dc = static_cast<double>(c) + 0.5 - half;
      return dr * dr + dc * dc <= half * half;
    }
    case ObjShape::Triangle:
      return c <= r;
  }
  return false;
}

}  // namespace

Tensor render_scene(const Scene& scene, int64_t patch_px, uint64_t noise_seed) {
  const int64_t n_image = scene.grid_rows * scene.grid_cols;
  const int64_t patch_dim = patch_px * patch_px * 3;
  Tensor pixels = Tensor::full({n_image, patch_dim}, 0.1);
  for (const auto& obj : scene.objects) {
    const int64_t patch = obj.row * scene.grid_cols + obj.col;
    double rgb[3];
    color_rgb(obj.color, rgb);
    for (int64_t r = 0; r < patch_px; ++r)
      for (int64_t c = 0; c < patch_px; ++c) {
        if (!shape_mask(obj.shape, r, c, patch_px)) continue;
        for (int64_t ch = 0; ch < 3; ++ch)
          pixels.at(patch, (r * patch_px + c) * 3 + ch) = rgb[ch];
      }
  }
  Rng rng(noise_seed);
  for (auto& v : *pixels.data) v += rng.uniform(-0.05, 0.05);
  return pixels;
}

namespace {

struct Builder {
  const CorpusConfig& cfg;
  Rng rng;

  explicit Builder(const CorpusConfig& c) : cfg(c), rng(c.seed) {}

  std::vector<int64_t> pick_cells(int64_t n, const std::vector<int64_t>& forbidden = {}) {
    std::vector<int64_t> cells;
    for (int64_t i = 0; i < cfg.n_image(); ++i)
      if (std::find(forbidden.begin(), forbidden.end(), i) == forbidden.end()) cells.push_back(i);
    rng.shuffle(cells);
    cells.resize(static_cast<size_t>(n));
    return cells;
  }

  SceneObject place(int64_t cell, ObjShape s, ObjColor c) {
    return {cell / cfg.grid_cols, cell % cfg.grid_cols, s, c};
  }

  bool pair_used(const Scene& scene, ObjShape s, ObjColor c) {
    for (const auto& o : scene.objects)
      if (o.shape == s && o.color == c) return true;
    return false;
  }

  // Adds n distractors with shapes drawn from `allowed`, distinct
  // (shape, color) pairs, on the given free cells.
  void add_distractors(Scene& scene, const std::vector<int64_t>& cells,
                       const std::vector<ObjShape>& allowed) {
    for (int64_t cell : cells) {
      for (int tries = 0; tries < 32; ++tries) {
        ObjShape s = allowed[static_cast<size_t>(rng.below(static_cast<int64_t>(allowed.size())))];
        ObjColor c = static_cast<ObjColor>(rng.below(4));
        if (!pair_used(scene, s, c)) {
          scene.objects.push_back(place(cell, s, c));
          break;
        }
      }
    }
  }

  Sample attribute_sample() {
    Sample smp;
    smp.kind = QuestionKind::Attribute;
    smp.scene.grid_rows = cfg.grid_rows;
    smp.scene.grid_cols = cfg.grid_cols;
    const ObjShape ref_shape = static_cast<ObjShape>(rng.below(3));
    const ObjColor ref_color = static_cast<ObjColor>(rng.below(4));
    const int64_t n_extra = 1 + rng.below(3);
    auto cells = pick_cells(1 + n_extra);
    smp.scene.objects.push_back(place(cells[0], ref_shape, ref_color));
    std::vector<ObjShape> others;
    for (int s = 0; s < 3; ++s)
      if (static_cast<ObjShape>(s) != ref_shape) others.push_back(static_cast<ObjShape>(s));
    add_distractors(smp.scene, {cells.begin() + 1, cells.end()}, others);
    smp.question_words = {"what", "color", "is", "the", to_word(ref_shape)};
    smp.answer_word = to_word(ref_color);
    smp.answer_category = TokenCategory::Attribute;
    const auto& ref = smp.scene.objects[0];
    smp.bbox = BBox(ref.row, ref.col, ref.row + 1, ref.col + 1);
    return smp;
  }

  Sample spatial_sample() {
    Sample smp;
    smp.kind = QuestionKind::Spatial;
    smp.scene.grid_rows = cfg.grid_rows;
    smp.scene.grid_cols = cfg.grid_cols;
    const ObjShape anchor_shape = static_cast<ObjShape>(rng.below(3));
    std::vector<ObjShape> others;
    for (int s = 0; s < 3; ++s)
      if (static_cast<ObjShape>(s) != anchor_shape) others.push_back(static_cast<ObjShape>(s));
    const ObjShape left_shape = others[static_cast<size_t>(rng.below(2))];
    const int64_t row = rng.below(cfg.grid_rows);
    const int64_t col = rng.below(cfg.grid_cols - 1);
    const int64_t left_cell = row * cfg.grid_cols + col;
    const int64_t anchor_cell = left_cell + 1;
    smp.scene.objects.push_back(place(left_cell, left_shape, static_cast<ObjColor>(rng.below(4))));
    for (int tries = 0; tries < 32; ++tries) {
      ObjColor c = static_cast<ObjColor>(rng.below(4));
      if (!pair_used(smp.scene, anchor_shape, c)) {
        smp.scene.objects.push_back(place(anchor_cell, anchor_shape, c));
        break;
      }
    }
    const int64_t n_extra = rng.below(3);
    if (n_extra > 0)
      add_distractors(smp.scene, pick_cells(n_extra, {left_cell, anchor_cell}), others);
    smp.question_words = {"what", "is", "left", "of", to_word(anchor_shape)};
    smp.answer_word = to_word(left_shape);
    smp.answer_category = TokenCategory::Object;
    smp.bbox = BBox(row, col, row + 1, col + 2);
    return smp;
  }

  Sample existence_sample() {
    Sample smp;
    smp.kind = QuestionKind::Existence;
    smp.scene.grid_rows = cfg.grid_rows;
    smp.scene.grid_cols = cfg.grid_cols;
    const ObjShape q_shape = static_cast<ObjShape>(rng.below(3));
    const ObjColor q_color = static_cast<ObjColor>(rng.below(4));
    const bool present = rng.below(2) == 0;
    const int64_t n_extra = 1 + rng.below(3);
    if (present) {
      auto cells = pick_cells(1 + n_extra);
      smp.scene.objects.push_back(place(cells[0], q_shape, q_color));
      // Any shape is allowed for distractors; pair uniqueness keeps the
      // queried combination unique.
      add_distractors(smp.scene, {cells.begin() + 1, cells.end()},
                      {ObjShape::Circle, ObjShape::Square, ObjShape::Triangle});
      const auto& ref = smp.scene.objects[0];
      smp.bbox = BBox(ref.row, ref.col, ref.row + 1, ref.col + 1);
    } else {
      auto cells = pick_cells(n_extra);
      Scene probe = smp.scene;
      probe.objects.push_back(place(0, q_shape, q_color));  // reserve the pair
      for (int64_t cell : cells) {
        for (int tries = 0; tries < 32; ++tries) {
          ObjShape s = static_cast<ObjShape>(rng.below(3));
          ObjColor c = static_cast<ObjColor>(rng.below(4));
          if (!pair_used(probe, s, c)) {
            probe.objects.push_back(place(cell, s, c));
            smp.scene.objects.push_back(place(cell, s, c));
            break;
          }
        }
      }
      // No referent to localize: the whole grid is the (exempt) target.
      smp.bbox = BBox(0, 0, cfg.grid_rows, cfg.grid_cols);
    }
    smp.question_words = {"is", "there", "a", to_word(q_color), to_word(q_shape)};
    smp.answer_word = present ? "yes" : "no";
    smp.answer_category = TokenCategory::Functional;
    return smp;
  }
};

void finalize_sample(Sample& smp, const CorpusConfig& cfg) {
  const Vocab& v = Vocab::instance();
  smp.question_ids.clear();
  if (cfg.system_prefix) smp.question_ids.push_back(v.sys());
  for (const auto& w : smp.question_words) smp.question_ids.push_back(v.id(w));
  smp.answer_ids = {v.id(smp.answer_word)};
  smp.pixels = render_scene(smp.scene, cfg.patch_px, smp.noise_seed);
}

}  // namespace

std::vector<Sample> generate_corpus(const CorpusConfig& cfg) {
  if (cfg.n_train < 1) throw ValueError("generate_corpus: n_train must be >= 1");
  if (cfg.n_image() < 6)
    throw ValueError("generate_corpus: grid too small for the object counts used");
  Builder b(cfg);
  const int64_t total = cfg.n_train + cfg.n_val + cfg.n_test;
  std::vector<Sample> samples;
  samples.reserve(static_cast<size_t>(total));
  for (int64_t i = 0; i < total; ++i) {
    Sample smp;
    switch (b.rng.below(3)) {
      case 0: smp = b.attribute_sample(); break;
      case 1: smp = b.spatial_sample(); break;
      default: smp = b.existence_sample(); break;
    }
    smp.id = i;
    smp.split = i < cfg.n_train ? "train" : (i < cfg.n_train + cfg.n_val ? "val" : "test");
    smp.noise_seed = derive_seed(cfg.seed, static_cast<uint64_t>(i));
    finalize_sample(smp, cfg);
    samples.push_back(std::move(smp));
  }
  return samples;
}

void write_manifest(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_manifest: cannot open '" + path + "'");
  for (const auto& s : samples) {
    json objs = json::array();
    for (const auto& o : s.scene.objects)
      objs.push_back({{"r", o.row}, {"c", o.col}, {"shape", to_word(o.shape)}, {"color", to_word(o.color)}});
    json rec = {
        {"id", s.id},
        {"split", s.split},
        {"kind", to_string(s.kind)},
        {"grid", {s.scene.grid_rows, s.scene.grid_cols}},
        {"objects", objs},
        {"question", s.question_words},
        {"answer", s.answer_word},
        {"bbox", {s.bbox.row0, s.bbox.col0, s.bbox.row1, s.bbox.col1}},
        {"category", to_string(s.answer_category)},
        {"noise_seed", s.noise_seed},
    };
    f << rec.dump() << "\n";
  }
  if (!f) throw IoError("write_manifest: write to '" + path + "' failed");
}

std::vector<Sample> read_manifest(const std::string& path, const CorpusConfig& cfg) {
  std::ifstream f(path);
  if (!f) throw IoError("read_manifest: cannot open '" + path + "' (run gen-data first)");
  std::vector<Sample> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    Sample s;
    s.id = rec.at("id").get<int64_t>();
    s.split = rec.at("split").get<std::string>();
    s.kind = question_kind_from(rec.at("kind").get<std::string>());
    s.scene.grid_rows = rec.at("grid")[0].get<int64_t>();
    s.scene.grid_cols = rec.at("grid")[1].get<int64_t>();
    for (const auto& o : rec.at("objects")) {
      SceneObject so;
      so.row = o.at("r").get<int64_t>();
      so.col = o.at("c").get<int64_t>();
      const std::string sh = o.at("shape").get<std::string>();
      so.shape = sh == "circle" ? ObjShape::Circle
                                : (sh == "square" ? ObjShape::Square : ObjShape::Triangle);
      const std::string co = o.at("color").get<std::string>();
      so.color = co == "red" ? ObjColor::Red
                             : (co == "green" ? ObjColor::Green
                                              : (co == "blue" ? ObjColor::Blue : ObjColor::Yellow));
      s.scene.objects.push_back(so);
    }
    s.question_words = rec.at("question").get<std::vector<std::string>>();
    s.answer_word = rec.at("answer").get<std::string>();
    s.bbox = BBox(rec.at("bbox")[0].get<int64_t>(), rec.at("bbox")[1].get<int64_t>(),
                  rec.at("bbox")[2].get<int64_t>(), rec.at("bbox")[3].get<int64_t>());
    const std::string cat = rec.at("category").get<std::string>();
    s.answer_category = cat == "OBJECT" ? TokenCategory::Object
                                        : (cat == "ATTRIBUTE" ? TokenCategory::Attribute
                                                              : TokenCategory::Functional);
    s.noise_seed = rec.at("noise_seed").get<uint64_t>();
    finalize_sample(s, cfg);
    out.push_back(std::move(s));
  }
  return out;
}

FilterReport apply_filter(const std::vector<FilterOutcome>& outcomes, double focus_threshold) {
  std::vector<FilterOutcome> sorted = outcomes;
  std::sort(sorted.begin(), sorted.end(),
            [](const FilterOutcome& a, const FilterOutcome& b) { return a.id < b.id; });
  FilterReport report;
  for (const auto& o : sorted) {
    if (o.missing_decode) {
      report.wrong_answer.push_back(o.id);
      ++report.missing_decodes;
    } else if (!o.teacher_correct) {
      report.wrong_answer.push_back(o.id);
    } else if (o.textonly_correct) {
      report.too_easy.push_back(o.id);
    } else if (!o.focus_exempt && o.focus_score < focus_threshold) {
      report.misaligned.push_back(o.id);
    } else {
      report.retained.push_back(o.id);
    }
  }
  return report;
}

void write_filter_report(const FilterReport& report, const std::string& path) {
  json j = {
      {"wrong_answer", report.wrong_answer},
      {"too_easy", report.too_easy},
      {"misaligned", report.misaligned},
      {"retained", report.retained},
      {"missing_decodes", report.missing_decodes},
      {"counts",
       {{"wrong_answer", report.wrong_answer.size()},
        {"too_easy", report.too_easy.size()},
        {"misaligned", report.misaligned.size()},
        {"retained", report.retained.size()}}},
  };
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_filter_report: cannot open '" + path + "'");
  f << j.dump(2) << "\n";
}

FilterReport read_filter_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_filter_report: cannot open '" + path + "' (run filter first)");
  json j = json::parse(f);
  FilterReport r;
  r.wrong_answer = j.at("wrong_answer").get<std::vector<int64_t>>();
  r.too_easy = j.at("too_easy").get<std::vector<int64_t>>();
  r.misaligned = j.at("misaligned").get<std::vector<int64_t>>();
  r.retained = j.at("retained").get<std::vector<int64_t>>();
  r.missing_decodes = j.value("missing_decodes", static_cast<int64_t>(0));
  return r;
}

}  // namespace lavit
