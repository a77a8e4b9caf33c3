#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lavit/losses.hpp"
#include "lavit/rng.hpp"

using namespace lavit;

namespace {

ModelConfig probe_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.vocab_size = 12;
  cfg.grid_rows = 2;
  cfg.grid_cols = 2;
  cfg.patch_dim = 6;
  cfg.k_latent = 2;
  cfg.d_teacher = 16;
  cfg.n_question = 3;
  cfg.max_answer_len = 4;
  cfg.boa_id = 0;
  cfg.eoa_id = 1;
  return cfg;
}

ModelInputs probe_inputs(uint64_t seed) {
  Rng rng(seed);
  ModelInputs in;
  in.pixels = rng.randn({4, 6});
  in.question = {2, 3, 4};
  in.answer = {6};
  return in;
}

}  // namespace

TEST_CASE("concept_loss tabulated examples") {
  Tape tp;
  Rng rng(5);
  SUBCASE("targets equal to the vectors give 0") {
    std::vector<Tensor> vecs = {rng.randn({4}), rng.randn({4})};
    std::vector<Tensor> targets = {vecs[0].clone(), vecs[1].clone()};
    CHECK(concept_loss(tp, vecs, targets).item() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("cosines {1, 0} give 0.5") {
    std::vector<Tensor> vecs = {Tensor({2}, {1, 0}), Tensor({2}, {1, 0})};
    std::vector<Tensor> targets = {Tensor({2}, {2, 0}), Tensor({2}, {0, 3})};
    CHECK(concept_loss(tp, vecs, targets).item() == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("anti-aligned pair hits the range maximum 2") {
    std::vector<Tensor> vecs = {Tensor({2}, {1, 1})};
    std::vector<Tensor> targets = {Tensor({2}, {-1, -1})};
    CHECK(concept_loss(tp, vecs, targets).item() == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("zero-norm target excluded with B adjusted") {
    std::vector<Tensor> vecs = {Tensor({2}, {1, 0}), Tensor({2}, {1, 0})};
    std::vector<Tensor> targets = {Tensor({2}, {0, 0}), Tensor({2}, {1, 0})};
    int excluded = 0;
    CHECK(concept_loss(tp, vecs, targets, &excluded).item() ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(excluded == 1);
  }
}

TEST_CASE("concept_loss leaves no gradient on the targets") {
  Tape tp;
  Rng rng(6);
  Tensor target_storage = rng.randn({4});
  Tensor watched_target = tp.watch(target_storage);
  std::vector<Tensor> vecs = {tp.watch(rng.randn({4}))};
  std::vector<Tensor> targets = {watched_target};
  Tensor loss = concept_loss(tp, vecs, targets);
  tp.backward(loss);
  for (double g : tp.grad(watched_target)) CHECK(g == 0.0);
  bool any = false;
  for (double g : tp.grad(vecs[0]))
    if (g != 0.0) any = true;
  CHECK(any);
}

namespace {

// Builds a ForwardOutput stub carrying latent attention rows on the tape.
ForwardOutput stub_output(Tape& tp, const std::vector<std::vector<double>>& rows_per_latent,
                          int64_t n_image) {
  ForwardOutput out;
  out.layout.n_image = n_image;
  out.layout.n_latent = static_cast<int64_t>(rows_per_latent.size());
  for (const auto& row : rows_per_latent) {
    Tensor t({1, static_cast<int64_t>(row.size())}, std::vector<double>(row));
    out.latent_attn.push_back({t});  // single layer/head
  }
  return out;
}

}  // namespace

TEST_CASE("trajectory_loss tabulated examples") {
  SUBCASE("student equal to target for all latents gives 0") {
    Tape tp;
    std::vector<double> row = {0.5, 0.25, 0.25, 0.0, 0.0};  // 4 image keys + 1 other
    ForwardOutput out = stub_output(tp, {row, row}, 4);
    std::vector<double> target = {0.5, 0.25, 0.25, 0.0};
    for (auto& v : target) v /= 1.0;  // already a distribution over image keys
    std::vector<std::vector<std::vector<double>>> targets = {{target}};
    std::vector<const ForwardOutput*> outs = {&out};
    CHECK(trajectory_loss(tp, targets, outs, 4).item() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("point target vs uniform student costs K ln N") {
    Tape tp;
    const int64_t n = 4;
    std::vector<double> uniform = {0.25, 0.25, 0.25, 0.25};
    ForwardOutput out = stub_output(tp, {uniform, uniform, uniform}, n);
    std::vector<double> target = {1, 0, 0, 0};
    std::vector<std::vector<std::vector<double>>> targets = {{target}};
    std::vector<const ForwardOutput*> outs = {&out};
    CHECK(trajectory_loss(tp, targets, outs, n).item() ==
          doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("batch mean over two samples") {
    Tape tp;
    std::vector<double> uniform = {0.25, 0.25, 0.25, 0.25};
    ForwardOutput hit = stub_output(tp, {uniform}, 4);
    ForwardOutput miss = stub_output(tp, {uniform}, 4);
    std::vector<std::vector<std::vector<double>>> targets = {{uniform}, {{1, 0, 0, 0}}};
    std::vector<const ForwardOutput*> outs = {&hit, &miss};
    CHECK(trajectory_loss(tp, targets, outs, 4).item() ==
          doctest::Approx(std::log(4.0) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("trajectory_loss is non-negative and zero only on matching support") {
  Tape tp;
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> row(6);
    double sum = 0;
    for (auto& v : row) {
      v = std::abs(rng.normal()) + 1e-3;
      sum += v;
    }
    for (auto& v : row) v /= sum;
    ForwardOutput out = stub_output(tp, {row}, 6);
    std::vector<double> target = {0.5, 0.5, 0, 0, 0, 0};
    std::vector<std::vector<std::vector<double>>> targets = {{target}};
    std::vector<const ForwardOutput*> outs = {&out};
    CHECK(trajectory_loss(tp, targets, outs, 6).item() >= 0.0);
  }
}

TEST_CASE("ntp_loss tabulated examples") {
  Tape tp;
  SUBCASE("uniform logits cost ln V") {
    Tensor logits = Tensor::zeros({1, 9});
    CHECK(ntp_loss(tp, logits, {4}).item() == doctest::Approx(std::log(9.0)).epsilon(1e-14));
  }
  SUBCASE("large-margin correct logits cost under 1e-3") {
    Tensor logits = Tensor::zeros({1, 9});
    logits.at(0, 4) = 20.0;
    CHECK(ntp_loss(tp, logits, {4}).item() < 1e-3);
  }
  SUBCASE("positional mean") {
    Tensor logits = Tensor::zeros({2, 9});
    logits.at(1, 3) = 60.0;  // second position: ~0 loss
    CHECK(ntp_loss(tp, logits, {4, 3}).item() ==
          doctest::Approx(std::log(9.0) / 2.0).epsilon(1e-9));
  }
}

TEST_CASE("total_loss arithmetic and bundle identity") {
  Tape tp;
  Tensor ntp = Tensor::scalar(2.0);
  Tensor l_c = Tensor::scalar(1.0);
  Tensor traj = Tensor::scalar(0.5);
  Tensor watched_ntp = tp.watch(ntp);
  SUBCASE("components (1.0, 0.5, 2.0) with lambda 0.3 give 2.45") {
    Tensor total = total_loss(tp, watched_ntp, &l_c, &traj, 0.3);
    CHECK(total.item() == doctest::Approx(2.0 + 0.3 * 1.5).epsilon(1e-15));
    LossBundle b = make_bundle(2.0, 1.0, 0.5, 0.3);
    CHECK(b.l_total == 2.0 + 0.3 * (1.0 + 0.5));
  }
  SUBCASE("lambda 0 degenerates to the NTP term") {
    Tensor total = total_loss(tp, watched_ntp, &l_c, &traj, 0.0);
    CHECK(total.item() == 2.0);
  }
  SUBCASE("all-zero components give zero") {
    CHECK(make_bundle(0, 0, 0, 0.3).l_total == 0.0);
  }
  SUBCASE("doubling lambda doubles the distillation excess exactly") {
    LossBundle b1 = make_bundle(2.0, 1.0, 0.5, 0.3);
    LossBundle b2 = make_bundle(2.0, 1.0, 0.5, 0.6);
    CHECK(b2.l_total - b2.l_ntp ==
          doctest::Approx(2.0 * (b1.l_total - b1.l_ntp)).epsilon(1e-14));
  }
  SUBCASE("ablated term logged but excluded") {
    LossBundle b = make_bundle(2.0, 1.0, 0.5, 0.3, true, false);
    CHECK(b.l_traj == 0.5);
    CHECK(b.l_total == 2.0 + 0.3 * 1.0);
  }
}

TEST_CASE("gradient_transition_probe is deterministic and rejects empty input") {
  Model m(probe_config(), 21);
  std::vector<ModelInputs> batch = {probe_inputs(1), probe_inputs(2)};
  CHECK_THROWS_AS(gradient_transition_probe(m, batch, {}), ValueError);

  auto rows = gradient_transition_probe(m, batch, {0.1, 0.1, 1.0});
  CHECK(rows.size() == 3);
  CHECK(rows[0].grad_norm == rows[1].grad_norm);  // duplicated gamma, bit-identical
  CHECK(rows[0].l_ntp == rows[1].l_ntp);
  for (const auto& r : rows) CHECK(std::isfinite(r.grad_norm));
}
