#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lavit/rng.hpp"
#include "lavit/trace.hpp"

using namespace lavit;

// Independent naive re-implementations used as oracles.
namespace oracle {

std::vector<double> gaze(const std::vector<std::vector<double>>& attn, int64_t seq,
                         const std::vector<int64_t>& text, const std::vector<int64_t>& image) {
  std::vector<double> s(image.size(), 0.0);
  for (size_t j = 0; j < image.size(); ++j) {
    double acc = 0.0;
    for (const auto& map : attn)
      for (int64_t i : text) acc += map[static_cast<size_t>(i * seq + image[j])];
    s[j] = acc / (static_cast<double>(attn.size()) * static_cast<double>(text.size()));
  }
  return s;
}

std::vector<double> minmax(const std::vector<double>& s, double eps) {
  double mn = s[0], mx = s[0];
  for (double v : s) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  std::vector<double> out(s.size());
  for (size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - mn) / (mx - mn + eps);
  return out;
}

std::vector<double> topk(const std::vector<double>& a, int64_t k) {
  // selection by repeated max with lowest-index tie break
  std::vector<bool> kept(a.size(), false);
  for (int64_t pick = 0; pick < k; ++pick) {
    int64_t best = -1;
    for (size_t i = 0; i < a.size(); ++i) {
      if (kept[i]) continue;
      if (best < 0 || a[i] > a[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
    }
    kept[static_cast<size_t>(best)] = true;
  }
  double mass = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    if (kept[i]) mass += a[i];
  std::vector<double> out(a.size(), 0.0);
  if (mass <= 0.0) {
    for (int64_t i = 0; i < k; ++i) out[static_cast<size_t>(i)] = 1.0 / static_cast<double>(k);
    return out;
  }
  for (size_t i = 0; i < a.size(); ++i)
    if (kept[i]) out[i] = a[i] / mass;
  return out;
}

double focus(const std::vector<double>& a, int64_t rows, int64_t cols, const BBox& b) {
  double inside = 0.0, total = 0.0;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      total += a[static_cast<size_t>(r * cols + c)];
      if (r >= b.row0 && r < b.row1 && c >= b.col0 && c < b.col1)
        inside += a[static_cast<size_t>(r * cols + c)];
    }
  return inside / total;
}

}  // namespace oracle

TEST_CASE("aggregate_gaze tabulated examples") {
  SUBCASE("single layer/head/text row passes through") {
    std::vector<std::vector<double>> attn = {{0, 0, 0, 0.2, 0.8, 0, 0, 0, 0}};
    auto s = aggregate_gaze(attn, 3, {1}, {0, 1});
    CHECK(s[0] == doctest::Approx(0.2));
    CHECK(s[1] == doctest::Approx(0.8));
  }
  SUBCASE("two heads average") {
    std::vector<std::vector<double>> attn = {{0, 0, 0, 1, 0, 0, 0, 0, 0},
                                             {0, 0, 0, 0, 1, 0, 0, 0, 0}};
    auto s = aggregate_gaze(attn, 3, {1}, {0, 1});
    CHECK(s[0] == doctest::Approx(0.5));
    CHECK(s[1] == doctest::Approx(0.5));
  }
  SUBCASE("uniform attention gives a constant vector") {
    const int64_t seq = 4;
    std::vector<double> map(static_cast<size_t>(seq * seq), 0.25);
    auto s = aggregate_gaze({map}, seq, {2, 3}, {0, 1});
    CHECK(s[0] == doctest::Approx(s[1]));
  }
  CHECK_THROWS_AS(aggregate_gaze({{0.0}}, 1, {}, {0}), ValueError);
}

TEST_CASE("minmax_normalize tabulated examples") {
  SUBCASE("constant input collapses to zeros") {
    auto out = minmax_normalize({3.3, 3.3, 3.3});
    for (double v : out) CHECK(v == 0.0);
  }
  SUBCASE("unit range") {
    auto out = minmax_normalize({0.0, 1.0}, 1e-8);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == doctest::Approx(1.0 / (1.0 + 1e-8)).epsilon(1e-15));
  }
  SUBCASE("affine map of [1,3,5]") {
    auto out = minmax_normalize({1.0, 3.0, 5.0}, 1e-8);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(out[2] == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("topk_sparsify tabulated examples") {
  SUBCASE("already normalized after keeping top 2") {
    auto out = topk_sparsify({0.9, 0.1, 0.05, 0.01}, 2);
    CHECK(out[0] == doctest::Approx(0.9));
    CHECK(out[1] == doctest::Approx(0.1));
    CHECK(out[2] == 0.0);
    CHECK(out[3] == 0.0);
  }
  SUBCASE("unnormalized input renormalizes over survivors") {
    auto out = topk_sparsify({4, 3, 2, 1}, 2);
    CHECK(out[0] == doctest::Approx(4.0 / 7.0));
    CHECK(out[1] == doctest::Approx(3.0 / 7.0));
    CHECK(out[2] == 0.0);
  }
  SUBCASE("k = length renormalizes the full vector") {
    auto out = topk_sparsify({1, 1, 2}, 3);
    double s = 0;
    for (double v : out) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("all-zero input flags degenerate and falls back to uniform") {
    bool degenerate = false;
    auto out = topk_sparsify({0, 0, 0, 0}, 2, &degenerate);
    CHECK(degenerate);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(0.5));
    CHECK(out[2] == 0.0);
  }
  SUBCASE("idempotent") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> a(12);
      for (auto& v : a) v = std::abs(rng.normal());
      auto once = topk_sparsify(a, 5);
      auto twice = topk_sparsify(once, 5);
      for (size_t i = 0; i < a.size(); ++i) CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("focusing_score tabulated examples") {
  SUBCASE("full-grid box scores 1") {
    std::vector<double> a = {0.1, 0.2, 0.3, 0.4};
    CHECK(focusing_score(a, 2, 2, BBox(0, 0, 2, 2)) == doctest::Approx(1.0));
  }
  SUBCASE("uniform map, half-grid box scores 0.5") {
    std::vector<double> a(16, 1.0);
    CHECK(focusing_score(a, 4, 4, BBox(0, 0, 2, 4)) == doctest::Approx(0.5));
  }
  SUBCASE("ratio and rescale invariance") {
    std::vector<double> a = {0.3, 0.4, 0.2, 0.1};
    const double f = focusing_score(a, 2, 2, BBox(0, 0, 1, 1));
    CHECK(f == doctest::Approx(0.3));
    std::vector<double> scaled = a;
    for (auto& v : scaled) v *= 7.5;
    CHECK(focusing_score(scaled, 2, 2, BBox(0, 0, 1, 1)) == doctest::Approx(f).epsilon(1e-12));
  }
  SUBCASE("zero mass is a degenerate-trace error") {
    std::vector<double> a(4, 0.0);
    CHECK_THROWS_AS(focusing_score(a, 2, 2, BBox(0, 0, 1, 1)), ValueError);
  }
  SUBCASE("invalid box") {
    std::vector<double> a(4, 1.0);
    CHECK_THROWS_AS(focusing_score(a, 2, 2, BBox(0, 0, 3, 1)), ValueError);
  }
}

TEST_CASE("resize_map_bilinear") {
  SUBCASE("identity is bit-equal") {
    Rng rng(8);
    Tensor m = rng.randn({3, 5});
    Tensor out = resize_map_bilinear(m, 3, 5);
    for (int64_t i = 0; i < m.numel(); ++i) CHECK(out.at(i) == m.at(i));
  }
  SUBCASE("constants stay constant") {
    Tensor m = Tensor::full({2, 2}, 0.4);
    Tensor out = resize_map_bilinear(m, 5, 7);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == doctest::Approx(0.4).epsilon(1e-15));
  }
  SUBCASE("2x2 to 2x3 puts the average in the middle column") {
    Tensor m({2, 2}, {0, 1, 0, 1});
    Tensor out = resize_map_bilinear(m, 2, 3);
    CHECK(out.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out.at(1, 1) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("bounds preserved") {
    Rng rng(9);
    Tensor m = rng.randn({4, 4});
    double mn = m.at(0), mx = m.at(0);
    for (int64_t i = 0; i < m.numel(); ++i) {
      mn = std::min(mn, m.at(i));
      mx = std::max(mx, m.at(i));
    }
    Tensor out = resize_map_bilinear(m, 9, 7);
    for (int64_t i = 0; i < out.numel(); ++i) {
      CHECK(out.at(i) >= mn - 1e-15);
      CHECK(out.at(i) <= mx + 1e-15);
    }
  }
}

TEST_CASE("oracle equivalence on random instances") {
  Rng rng(4242);
  for (int trial = 0; trial < 25; ++trial) {
    const int64_t seq = 6 + rng.below(6);
    const int64_t maps = 1 + rng.below(4);
    std::vector<std::vector<double>> attn(static_cast<size_t>(maps));
    for (auto& m : attn) {
      m.resize(static_cast<size_t>(seq * seq));
      for (auto& v : m) v = std::abs(rng.normal());
    }
    std::vector<int64_t> image, text;
    for (int64_t i = 0; i < seq / 2; ++i) image.push_back(i);
    for (int64_t i = seq / 2; i < seq; ++i) text.push_back(i);

    auto s = aggregate_gaze(attn, seq, text, image);
    auto s2 = oracle::gaze(attn, seq, text, image);
    for (size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - s2[i]) < 1e-10);

    auto a = minmax_normalize(s);
    auto a2 = oracle::minmax(s, 1e-8);
    for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - a2[i]) < 1e-10);

    const int64_t k = 1 + rng.below(static_cast<int64_t>(a.size()));
    auto t = topk_sparsify(a, k);
    auto t2 = oracle::topk(a, k);
    for (size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t[i] - t2[i]) < 1e-10);
  }
}

TEST_CASE("aggregate_gaze is linear in the attention values") {
  Rng rng(11);
  const int64_t seq = 8;
  std::vector<std::vector<double>> attn(3);
  for (auto& m : attn) {
    m.resize(static_cast<size_t>(seq * seq));
    for (auto& v : m) v = std::abs(rng.normal());
  }
  std::vector<int64_t> image = {0, 1, 2}, text = {5, 6, 7};
  auto s1 = aggregate_gaze(attn, seq, text, image);
  auto scaled = attn;
  for (auto& m : scaled)
    for (auto& v : m) v *= 3.5;
  auto s2 = aggregate_gaze(scaled, seq, text, image);
  for (size_t i = 0; i < s1.size(); ++i) CHECK(s2[i] == doctest::Approx(3.5 * s1[i]).epsilon(1e-12));
}

TEST_CASE("minmax_normalize preserves the argmax") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(10);
    for (auto& v : s) v = rng.normal();
    auto a = minmax_normalize(s);
    const auto am_s = std::max_element(s.begin(), s.end()) - s.begin();
    const auto am_a = std::max_element(a.begin(), a.end()) - a.begin();
    CHECK(am_s == am_a);
  }
}
