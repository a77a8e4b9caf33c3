#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "lavit/model.hpp"
#include "lavit/rng.hpp"

using namespace lavit;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.vocab_size = 20;
  cfg.grid_rows = 2;
  cfg.grid_cols = 2;
  cfg.patch_dim = 12;
  cfg.k_latent = 3;
  cfg.d_teacher = 24;
  cfg.n_question = 4;
  cfg.max_answer_len = 6;
  cfg.boa_id = 0;
  cfg.eoa_id = 1;
  return cfg;
}

ModelInputs tiny_inputs(uint64_t seed) {
  Rng rng(seed);
  ModelInputs in;
  in.pixels = rng.randn({4, 12});
  in.question = {2, 3, 4, 5};
  in.answer = {7};
  return in;
}

SegmentLayout tiny_layout(int64_t k_latent, int64_t n_answer) {
  SegmentLayout l;
  l.n_image = 4;
  l.n_question = 4;
  l.n_latent = k_latent;
  l.n_answer = n_answer;
  return l;
}

}  // namespace

TEST_CASE("build_attention_bias: gamma=1 is the plain causal mask") {
  SegmentLayout l = tiny_layout(3, 2);
  Tensor bias = build_attention_bias(l, 1.0);
  for (int64_t q = 0; q < l.seq_len(); ++q)
    for (int64_t k = 0; k < l.seq_len(); ++k)
      CHECK(bias.at(q, k) == (k > q ? -kInf : 0.0));
}

TEST_CASE("build_attention_bias: gate writes ln(gamma) on answer->image pairs only") {
  SegmentLayout l = tiny_layout(3, 2);
  const double g = 1e-6;
  Tensor bias = build_attention_bias(l, g);
  const double lg = std::log(g);
  for (int64_t q = 0; q < l.seq_len(); ++q)
    for (int64_t k = 0; k <= q; ++k) {
      const bool gated = l.segment_of(q) == Segment::Answer && l.segment_of(k) == Segment::Image;
      CHECK(bias.at(q, k) == (gated ? lg : 0.0));
    }
  CHECK(bias.at(l.answer_begin(), 0) == doctest::Approx(-13.8155).epsilon(1e-4));
}

TEST_CASE("build_attention_bias: layout without an image segment is unaffected by gamma") {
  SegmentLayout l;
  l.n_image = 0;
  l.n_question = 5;
  l.n_latent = 0;
  l.n_answer = 3;
  Tensor a = build_attention_bias(l, 1.0);
  Tensor b = build_attention_bias(l, 1e-6);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("build_attention_bias: mask_latents hard-masks latent keys for every query") {
  SegmentLayout l = tiny_layout(3, 2);
  ForwardOptions opts;
  opts.mask_latents = true;
  Tensor bias = build_attention_bias(l, 1.0, opts);
  for (int64_t q = 0; q < l.seq_len(); ++q)
    for (int64_t k : l.latent_positions())
      if (k <= q) CHECK(bias.at(q, k) == -kInf);
}

TEST_CASE("forward: attention rows sum to 1 over the causal support") {
  Model m(tiny_config(), 42);
  Tape tape;
  ModelParams bound = m.bind(tape);
  ForwardOutput out = m.forward(tape, bound, tiny_inputs(1), {});
  const int64_t seq = out.layout.seq_len();
  for (const auto& map : out.attn)
    for (int64_t q = 0; q < seq; ++q) {
      double s = 0.0;
      for (int64_t k = 0; k < seq; ++k) s += map[static_cast<size_t>(q * out.attn_dim + k)];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("forward: mask_latents zeroes every latent-key attention entry") {
  Model m(tiny_config(), 42);
  Tape tape;
  ModelParams bound = m.bind(tape);
  ForwardOptions opts;
  opts.mask_latents = true;
  ForwardOutput out = m.forward(tape, bound, tiny_inputs(1), opts);
  for (const auto& map : out.attn)
    for (int64_t q = 0; q < out.layout.seq_len(); ++q)
      for (int64_t k : out.layout.latent_positions())
        CHECK(map[static_cast<size_t>(q * out.attn_dim + k)] == 0.0);
}

TEST_CASE("forward at gamma=1 equals a pass with a hand-built causal bias") {
  Model m(tiny_config(), 42);
  ModelInputs in = tiny_inputs(9);

  Tape t1;
  ForwardOutput a = m.forward(t1, m.bind(t1), in, {});

  SegmentLayout l = a.layout;
  Tensor manual = Tensor::zeros({l.seq_len(), l.seq_len()});
  for (int64_t q = 0; q < l.seq_len(); ++q)
    for (int64_t k = q + 1; k < l.seq_len(); ++k) manual.at(q, k) = -kInf;
  ForwardOptions opts;
  opts.bias_override = &manual;
  Tape t2;
  ForwardOutput b = m.forward(t2, m.bind(t2), in, opts);

  REQUIRE(a.logits.same_shape(b.logits));
  for (int64_t i = 0; i < a.logits.numel(); ++i)
    CHECK(std::abs(a.logits.at(i) - b.logits.at(i)) < 1e-12);
}

TEST_CASE("generate is deterministic and respects the answer cap") {
  Model m(tiny_config(), 7);
  ModelInputs in = tiny_inputs(2);
  in.answer.clear();
  GenerateResult r1 = m.generate(in);
  GenerateResult r2 = m.generate(in);
  CHECK(r1.tokens == r2.tokens);
  CHECK(r1.truncated == r2.truncated);
  CHECK(static_cast<int64_t>(r1.tokens.size()) <= m.config().max_answer_len);
  if (!r1.truncated) CHECK(r1.out.layout.n_answer == static_cast<int64_t>(r1.tokens.size()) + 1);
}

TEST_CASE("k_latent=0 degenerates to plain VQA decoding") {
  ModelConfig cfg = tiny_config();
  cfg.k_latent = 0;
  cfg.d_teacher = 0;
  Model m(cfg, 3);
  ModelInputs in = tiny_inputs(4);
  Tape tape;
  ForwardOutput out = m.forward(tape, m.bind(tape), in, {});
  CHECK(out.layout.n_latent == 0);
  CHECK(out.h_z.numel() == 0);
  CHECK(out.concept_vec.numel() == 0);
  for (int64_t i = 0; i < out.logits.numel(); ++i) CHECK(std::isfinite(out.logits.at(i)));
  GenerateResult gen = m.generate(in);
  for (int tok : gen.tokens) CHECK(tok < cfg.vocab_size);
}

TEST_CASE("latent hidden states and concept vector have the contract shapes") {
  Model m(tiny_config(), 42);
  Tape tape;
  ForwardOutput out = m.forward(tape, m.bind(tape), tiny_inputs(5), {});
  CHECK(out.h_z.shape == std::vector<int64_t>{3, 16});
  CHECK(out.concept_vec.shape == std::vector<int64_t>{1, 24});
  CHECK(out.latent_attn.size() == 3);
  CHECK(out.latent_attn[0].size() == 4);  // layers * heads
}

TEST_CASE("project_concept: zero input returns the head's bias path") {
  Model m(tiny_config(), 42);
  Tape tape;
  ModelParams bound = m.bind(tape);
  Tensor out = m.project_concept(tape, bound, Tensor::zeros({1, 16}));
  // gelu(0 + b1) = gelu(b1); with zero-initialized b1 the output is phi_b2.
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.at(i) == doctest::Approx(m.params().phi_b2.at(i)).epsilon(1e-12));
}

TEST_CASE("checkpoint round-trip preserves the forward pass bit-for-bit") {
  Model m(tiny_config(), 13);
  const std::string path =
      (std::filesystem::temp_directory_path() / "model_roundtrip.lvt").string();
  m.save(path);
  Model r = Model::load(path);
  ModelInputs in = tiny_inputs(6);
  Tape t1(false), t2(false);
  ForwardOutput a = m.forward(t1, m.params(), in, {});
  ForwardOutput b = r.forward(t2, r.params(), in, {});
  for (int64_t i = 0; i < a.logits.numel(); ++i) CHECK(a.logits.at(i) == b.logits.at(i));
}

TEST_CASE("segment layout invariants") {
  SegmentLayout l = tiny_layout(2, 3);
  CHECK(l.seq_len() == 13);
  CHECK(l.segment_of(0) == Segment::Image);
  CHECK(l.segment_of(4) == Segment::Question);
  CHECK(l.segment_of(8) == Segment::Latent);
  CHECK(l.segment_of(10) == Segment::Answer);
  CHECK_THROWS_AS(l.segment_of(13), ValueError);
  // contiguous and ordered
  int64_t pos = 0;
  for (int64_t p : l.image_positions()) CHECK(p == pos++);
  for (int64_t p : {l.question_begin(), l.latent_begin(), l.answer_begin()}) CHECK(p >= 0);
}

TEST_CASE("forward rejects mismatched pixel shapes") {
  Model m(tiny_config(), 1);
  Tape tape;
  ModelInputs in = tiny_inputs(1);
  in.pixels = Tensor::zeros({3, 12});
  CHECK_THROWS_AS(m.forward(tape, m.bind(tape), in, {}), ShapeError);
}
