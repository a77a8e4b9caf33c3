#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lavit/analysis.hpp"
#include "lavit/rng.hpp"

using namespace lavit;

TEST_CASE("attention_entropy closed forms and bounds") {
  std::vector<double> uniform(16, 1.0 / 16.0);
  CHECK(attention_entropy(uniform) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  std::vector<double> onehot(16, 0.0);
  onehot[3] = 1.0;
  CHECK(attention_entropy(onehot) == 0.0);
  CHECK(attention_entropy({0.5, 0.5, 0, 0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(attention_entropy({-0.1, 1.1}), ValueError);
  CHECK_THROWS_AS(attention_entropy({0.4, 0.4}), ValueError);

  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(10);
    double s = 0;
    for (auto& v : p) {
      v = std::abs(rng.normal()) + 1e-9;
      s += v;
    }
    for (auto& v : p) v /= s;
    const double h = attention_entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(10.0) + 1e-12);
  }
}

TEST_CASE("salient_cv tabulated examples") {
  SUBCASE("identical maps give 0") {
    std::vector<std::vector<double>> maps(5, std::vector<double>{0.7, 0.2, 0.1});
    CHECK(salient_cv(maps, 2) == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("masses {0.4, 0.6} give 0.2") {
    std::vector<std::vector<double>> maps = {{0.4, 0.3, 0.3}, {0.6, 0.2, 0.2}};
    CHECK(salient_cv(maps, 1) == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("k covering everything gives 0 for distributions") {
    std::vector<std::vector<double>> maps = {{0.4, 0.6}, {0.9, 0.1}, {0.5, 0.5}};
    CHECK(salient_cv(maps, 2) == doctest::Approx(0.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(salient_cv({{0.5, 0.5}}, 1), ValueError);
}

TEST_CASE("kl_divergence_value matches the closed forms") {
  CHECK(kl_divergence_value({1, 0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(kl_divergence_value({0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}) == 0.0);
  CHECK_THROWS_AS(kl_divergence_value({1, 0}, {0, 1}), ValueError);
}

TEST_CASE("focus_curve_from: constructed fixture is monotone when low-focus samples are wrong") {
  std::vector<FocusItem> items = {
      {0.05, false, true}, {0.10, false, true}, {0.15, false, true},
      {0.30, true, true},  {0.45, true, true},  {0.60, true, true},
  };
  FocusCurve curve = focus_curve_from(items, {0.0, 0.2, 0.5});
  REQUIRE(curve.rows.size() == 3);
  CHECK(curve.rows[0].n_retained == 6);
  CHECK(curve.rows[0].accuracy == doctest::Approx(0.5));
  CHECK(curve.rows[1].n_retained == 3);
  CHECK(curve.rows[1].accuracy == doctest::Approx(1.0));
  CHECK(curve.rows[2].n_retained == 1);
  CHECK(curve.rows[2].accuracy == doctest::Approx(1.0));
  double prev = -1;
  int64_t prev_retained = curve.rows[0].n_retained + 1;
  for (const auto& r : curve.rows) {
    CHECK(r.accuracy >= prev);
    CHECK(r.n_retained <= prev_retained);
    prev = r.accuracy;
    prev_retained = r.n_retained;
  }
  CHECK(curve.mean_focus_correct == doctest::Approx(0.45));
  CHECK(curve.mean_focus_incorrect == doctest::Approx(0.10));
}

TEST_CASE("focus_curve_from: empty retention emits a row with accuracy absent") {
  std::vector<FocusItem> items = {{0.1, true, true}};
  FocusCurve curve = focus_curve_from(items, {0.0, 0.9});
  CHECK(curve.rows[1].n_retained == 0);
  CHECK(!curve.rows[1].has_accuracy);
  CHECK_THROWS_AS(focus_curve_from(items, {0.5, 0.1}), ValueError);
}

TEST_CASE("perception_gap_report: self-comparison is identically zero") {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.vocab_size = static_cast<int64_t>(Vocab::instance().size());
  cfg.grid_rows = 3;
  cfg.grid_cols = 3;
  cfg.patch_dim = 12;
  cfg.k_latent = 0;
  cfg.n_question = 6;
  cfg.max_answer_len = 4;
  cfg.boa_id = Vocab::instance().boa();
  cfg.eoa_id = Vocab::instance().eoa();
  Model m(cfg, 77);

  CorpusConfig cc;
  cc.seed = 5;
  cc.n_train = 8;
  cc.n_val = 1;
  cc.n_test = 1;
  cc.grid_rows = 3;
  cc.grid_cols = 3;
  cc.patch_px = 2;
  auto samples = generate_corpus(cc);
  std::vector<const Sample*> view;
  for (const auto& s : samples) view.push_back(&s);

  GapReport report = perception_gap_report(m, m, view, 2);
  CHECK(report.hidden_defined);
  for (const auto& [cat, gap] : report.per_category) {
    CHECK(gap.mean_attn_kl == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(gap.mean_hidden_cos_dist == doctest::Approx(0.0).epsilon(1e-12));
  }
  CHECK(report.teacher_mean_entropy == report.student_mean_entropy);
}

TEST_CASE("svg and csv emitters write well-formed files") {
  namespace fs = std::filesystem;
  const std::string h = (fs::temp_directory_path() / "hist.svg").string();
  const std::string c = (fs::temp_directory_path() / "curve.svg").string();
  write_histogram_svg({1.0, 1.5, 2.0, 2.0, 3.0}, 4, "test histogram", h);
  write_curve_svg({0, 0.5, 1.0}, {0.2, 0.6, 0.9}, "test curve", c);
  CHECK(fs::file_size(h) > 100);
  CHECK(fs::file_size(c) > 100);
}
