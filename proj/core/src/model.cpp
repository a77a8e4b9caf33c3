#include "lavit/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lavit/container.hpp"
#include "lavit/rng.hpp"

namespace lavit {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kInitStd = 0.02;
}  // namespace

void ModelConfig::validate() const {
  if (d_model % n_heads != 0) throw ValueError("ModelConfig: d_model must divide by n_heads");
  if (k_latent < 0) throw ValueError("ModelConfig: k_latent must be >= 0");
  if (grid_rows * grid_cols < 1) throw ValueError("ModelConfig: empty patch grid");
  if (vocab_size < 2) throw ValueError("ModelConfig: vocab too small");
}

Segment SegmentLayout::segment_of(int64_t pos) const {
  if (pos < n_image) return Segment::Image;
  if (pos < latent_begin()) return Segment::Question;
  if (pos < answer_begin()) return Segment::Latent;
  if (pos < seq_len()) return Segment::Answer;
  throw ValueError("SegmentLayout: position out of range");
}

static std::vector<int64_t> range(int64_t begin, int64_t n) {
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = begin + i;
  return out;
}

std::vector<int64_t> SegmentLayout::image_positions() const { return range(0, n_image); }
std::vector<int64_t> SegmentLayout::latent_positions() const {
  return range(latent_begin(), n_latent);
}
std::vector<int64_t> SegmentLayout::answer_positions() const {
  return range(answer_begin(), n_answer);
}

Tensor build_attention_bias(const SegmentLayout& layout, double gamma_value,
                            const ForwardOptions& opts) {
  if (gamma_value <= 0.0 || gamma_value > 1.0)
    throw ValueError("build_attention_bias: gamma must be in (0, 1]");
  const int64_t seq = layout.seq_len();
  const double gate = std::log(gamma_value);
  Tensor bias = Tensor::zeros({seq, seq});
  for (int64_t q = 0; q < seq; ++q) {
    const Segment qs = layout.segment_of(q);
    for (int64_t k = 0; k < seq; ++k) {
      if (k > q) {
        bias.at(q, k) = kNegInf;
        continue;
      }
      const Segment ks = layout.segment_of(k);
      if (opts.mask_latents && ks == Segment::Latent) {
        bias.at(q, k) = kNegInf;
      } else if (opts.mask_image && ks == Segment::Image && qs != Segment::Image) {
        bias.at(q, k) = kNegInf;
      } else if (ks == Segment::Image &&
                 (qs == Segment::Answer || (opts.gate_latent_path && qs == Segment::Latent))) {
        bias.at(q, k) = gate;
      }
    }
  }
  return bias;
}

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int64_t d = cfg_.d_model;
  auto w = [&](std::vector<int64_t> shape) { return rng.randn(std::move(shape), kInitStd); };
  auto zeros = [](std::vector<int64_t> shape) { return Tensor::zeros(std::move(shape)); };
  auto ones = [](std::vector<int64_t> shape) { return Tensor::full(std::move(shape), 1.0); };

  p_.tok_embed = w({cfg_.vocab_size, d});
  p_.patch_w = w({cfg_.patch_dim, d});
  p_.patch_b = zeros({1, d});
  p_.pos = w({cfg_.max_seq_len(), d});
  p_.row_embed = w({cfg_.grid_rows, d});
  p_.col_embed = w({cfg_.grid_cols, d});
  p_.latent_start = w({1, d});
  p_.adapter_w = w({d, d});
  p_.adapter_b = zeros({1, d});
  p_.layers.resize(static_cast<size_t>(cfg_.n_layers));
  for (auto& l : p_.layers) {
    l.ln1_g = ones({1, d});
    l.ln1_b = zeros({1, d});
    l.wq = w({d, d});
    l.bq = zeros({1, d});
    l.wk = w({d, d});
    l.bk = zeros({1, d});
    l.wv = w({d, d});
    l.bv = zeros({1, d});
    l.wo = w({d, d});
    l.bo = zeros({1, d});
    l.ln2_g = ones({1, d});
    l.ln2_b = zeros({1, d});
    l.w_up = w({d, 4 * d});
    l.b_up = zeros({1, 4 * d});
    l.w_down = w({4 * d, d});
    l.b_down = zeros({1, d});
  }
  p_.lnf_g = ones({1, d});
  p_.lnf_b = zeros({1, d});
  p_.head_w = w({d, cfg_.vocab_size});
  p_.head_b = zeros({1, cfg_.vocab_size});
  if (cfg_.d_teacher > 0 && cfg_.k_latent > 0) {
    p_.phi_w1 = w({d, d});
    p_.phi_b1 = zeros({1, d});
    p_.phi_w2 = w({d, cfg_.d_teacher});
    p_.phi_b2 = zeros({1, cfg_.d_teacher});
  }
}

void visit_params(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("tok_embed", p.tok_embed);
  fn("patch_w", p.patch_w);
  fn("patch_b", p.patch_b);
  fn("pos", p.pos);
  fn("row_embed", p.row_embed);
  fn("col_embed", p.col_embed);
  fn("latent_start", p.latent_start);
  fn("adapter_w", p.adapter_w);
  fn("adapter_b", p.adapter_b);
  for (size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layers." + std::to_string(i) + ".";
    fn(pre + "ln1_g", l.ln1_g);
    fn(pre + "ln1_b", l.ln1_b);
    fn(pre + "wq", l.wq);
    fn(pre + "bq", l.bq);
    fn(pre + "wk", l.wk);
    fn(pre + "bk", l.bk);
    fn(pre + "wv", l.wv);
    fn(pre + "bv", l.bv);
    fn(pre + "wo", l.wo);
    fn(pre + "bo", l.bo);
    fn(pre + "ln2_g", l.ln2_g);
    fn(pre + "ln2_b", l.ln2_b);
    fn(pre + "w_up", l.w_up);
    fn(pre + "b_up", l.b_up);
    fn(pre + "w_down", l.w_down);
    fn(pre + "b_down", l.b_down);
  }
  fn("lnf_g", p.lnf_g);
  fn("lnf_b", p.lnf_b);
  fn("head_w", p.head_w);
  fn("head_b", p.head_b);
  if (p.phi_w1.numel() > 0) {
    fn("phi_w1", p.phi_w1);
    fn("phi_b1", p.phi_b1);
    fn("phi_w2", p.phi_w2);
    fn("phi_b2", p.phi_b2);
  }
}

bool Model::is_trainable(const std::string& name) const {
  if (cfg_.freeze_patch_embedder && (name == "patch_w" || name == "patch_b")) return false;
  return true;
}

ModelParams Model::bind(Tape& tape) const {
  ModelParams b = p_;
  visit_params(b, [&](const std::string&, Tensor& t) { t = tape.watch(t); });
  return b;
}

Tensor Model::project_concept(Tape& tape, const ModelParams& bound, const Tensor& anchor) const {
  if (bound.phi_w1.numel() == 0) throw ValueError("project_concept: model has no projection head");
  Tensor h = tape.gelu(tape.add(tape.matmul(anchor, bound.phi_w1), bound.phi_b1));
  return tape.add(tape.matmul(h, bound.phi_w2), bound.phi_b2);
}

namespace {

/// Incremental stage executor: processes a block of new positions against the
/// cached keys/values. Causality makes the result identical to a monolithic
/// pass, and every stage stays on the same tape, so gradients flow through
/// the latent roll.
struct StageRunner {
  Tape& tape;
  const ModelConfig& cfg;
  const ModelParams& p;
  const Tensor& bias;  // [bias_dim x bias_dim], constant
  int64_t bias_dim;
  ForwardOutput& out;
  std::vector<Tensor> k_cache, v_cache;  // per layer, [kv x d]
  int64_t kv_len = 0;
  bool record_latent = false;  // stash tape handles of this stage's attention rows
  std::vector<Tensor>* latent_rows = nullptr;

  StageRunner(Tape& t, const ModelConfig& c, const ModelParams& params, const Tensor& b,
              ForwardOutput& o)
      : tape(t), cfg(c), p(params), bias(b), bias_dim(b.shape[0]), out(o) {
    k_cache.resize(static_cast<size_t>(cfg.n_layers));
    v_cache.resize(static_cast<size_t>(cfg.n_layers));
    const size_t maps = static_cast<size_t>(cfg.n_layers * cfg.n_heads);
    out.attn.assign(maps, std::vector<double>(static_cast<size_t>(bias_dim * bias_dim), 0.0));
    out.scores.assign(maps, std::vector<double>(static_cast<size_t>(bias_dim * bias_dim), 0.0));
    out.h_final.assign(static_cast<size_t>(bias_dim * cfg.d_model), 0.0);
    out.attn_dim = bias_dim;
  }

  Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    return tape.add(tape.matmul(x, w), b);
  }

  /// Runs all layers over `x` (rows [row0, row0+ns)); returns final hidden.
  Tensor run(const Tensor& x, int64_t row0) {
    const int64_t ns = x.shape[0];
    const int64_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const int64_t new_kv = kv_len + ns;
    Tensor bias_block = tape.slice_cols(tape.slice_rows(bias, row0, row0 + ns), 0, new_kv);

    Tensor h = x;
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
      const auto& lp = p.layers[static_cast<size_t>(l)];
      Tensor a = tape.layer_norm(h, lp.ln1_g, lp.ln1_b);
      Tensor q = affine(a, lp.wq, lp.bq);
      Tensor k = affine(a, lp.wk, lp.bk);
      Tensor v = affine(a, lp.wv, lp.bv);
      auto& kc = k_cache[static_cast<size_t>(l)];
      auto& vc = v_cache[static_cast<size_t>(l)];
      if (kv_len == 0) {
        kc = k;
        vc = v;
      } else {
        std::vector<Tensor> ks = {kc, k}, vs = {vc, v};
        kc = tape.concat_rows(ks);
        vc = tape.concat_rows(vs);
      }

      std::vector<Tensor> head_ctx;
      head_ctx.reserve(static_cast<size_t>(cfg.n_heads));
      for (int64_t hd = 0; hd < cfg.n_heads; ++hd) {
        Tensor qh = tape.slice_cols(q, hd * dh, (hd + 1) * dh);
        Tensor kh = tape.slice_cols(kc, hd * dh, (hd + 1) * dh);
        Tensor vh = tape.slice_cols(vc, hd * dh, (hd + 1) * dh);
        Tensor scores = tape.scale(tape.matmul(qh, kh, false, true), inv_sqrt_dh);
        Tensor probs = tape.softmax_bias(scores, bias_block);
        const size_t map = static_cast<size_t>(l * cfg.n_heads + hd);
        for (int64_t r = 0; r < ns; ++r)
          for (int64_t c = 0; c < new_kv; ++c) {
            out.attn[map][static_cast<size_t>((row0 + r) * bias_dim + c)] = probs.at(r, c);
            out.scores[map][static_cast<size_t>((row0 + r) * bias_dim + c)] = scores.at(r, c);
          }
        if (record_latent && latent_rows) latent_rows->push_back(probs);
        head_ctx.push_back(tape.matmul(probs, vh));
      }
      Tensor ctx = cfg.n_heads == 1 ? head_ctx[0] : tape.concat_cols(head_ctx);
      h = tape.add(h, affine(ctx, lp.wo, lp.bo));
      Tensor m = tape.layer_norm(h, lp.ln2_g, lp.ln2_b);
      m = affine(tape.gelu(affine(m, lp.w_up, lp.b_up)), lp.w_down, lp.b_down);
      h = tape.add(h, m);
    }
    kv_len = new_kv;
    for (int64_t r = 0; r < ns; ++r)
      for (int64_t c = 0; c < cfg.d_model; ++c)
        out.h_final[static_cast<size_t>((row0 + r) * cfg.d_model + c)] = h.at(r, c);
    return h;
  }
};

}  // namespace

ForwardOutput Model::run(Tape& tape, const ModelParams& p, const ModelInputs& in,
                         const ForwardOptions& opts, bool generating, std::vector<int>* decoded,
                         bool* truncated) const {
  const int64_t n_img = cfg_.n_image();
  const int64_t n_q = static_cast<int64_t>(in.question.size());
  const int64_t n_ans_tokens = static_cast<int64_t>(in.answer.size());
  if (in.pixels.rank() != 2 || in.pixels.shape[0] != n_img || in.pixels.shape[1] != cfg_.patch_dim)
    throw ShapeError("forward: pixels must be [n_image x patch_dim]");
  if (!generating && n_ans_tokens < 1) throw ValueError("forward: teacher forcing needs answer tokens");

  SegmentLayout layout;
  layout.n_image = n_img;
  layout.n_question = n_q;
  layout.n_latent = cfg_.k_latent;
  layout.n_answer = generating ? 1 + cfg_.max_answer_len : 1 + n_ans_tokens;
  if (layout.seq_len() > cfg_.max_seq_len())
    throw ShapeError("forward: sequence exceeds max_seq_len");

  ForwardOutput out;
  out.layout = layout;
  Tensor bias = opts.bias_override ? opts.bias_override->detached()
                                   : build_attention_bias(layout, opts.gamma, opts);
  if (bias.shape != std::vector<int64_t>{layout.seq_len(), layout.seq_len()})
    throw ShapeError("forward: bias must be seq x seq");
  StageRunner runner(tape, cfg_, p, bias, out);

  // Prompt stage: image patches then question tokens.
  Tensor x_img = tape.add(tape.matmul(in.pixels, p.patch_w), p.patch_b);
  out.img_embed = x_img;
  std::vector<int> row_ids(static_cast<size_t>(n_img)), col_ids(static_cast<size_t>(n_img));
  for (int64_t i = 0; i < n_img; ++i) {
    row_ids[static_cast<size_t>(i)] = static_cast<int>(i / cfg_.grid_cols);
    col_ids[static_cast<size_t>(i)] = static_cast<int>(i % cfg_.grid_cols);
  }
  x_img = tape.add(x_img, tape.embedding(row_ids, p.row_embed));
  x_img = tape.add(x_img, tape.embedding(col_ids, p.col_embed));
  x_img = tape.add(x_img, tape.slice_rows(p.pos, 0, n_img));
  Tensor x_q = tape.add(tape.embedding(in.question, p.tok_embed),
                        tape.slice_rows(p.pos, n_img, n_img + n_q));
  std::vector<Tensor> prompt_parts = {x_img, x_q};
  runner.run(tape.concat_rows(prompt_parts), 0);

  // Latent roll: each final-layer latent state feeds the next position
  // through the input adapter.
  out.latent_attn.resize(static_cast<size_t>(cfg_.k_latent));
  std::vector<Tensor> latent_states;
  Tensor prev;
  for (int64_t j = 0; j < cfg_.k_latent; ++j) {
    const int64_t pos = layout.latent_begin() + j;
    Tensor x = (j == 0) ? p.latent_start : tape.add(tape.matmul(prev, p.adapter_w), p.adapter_b);
    x = tape.add(x, tape.slice_rows(p.pos, pos, pos + 1));
    runner.record_latent = true;
    runner.latent_rows = &out.latent_attn[static_cast<size_t>(j)];
    prev = runner.run(x, pos);
    runner.record_latent = false;
    runner.latent_rows = nullptr;
    latent_states.push_back(prev);
  }
  if (cfg_.k_latent > 0) out.h_z = tape.concat_rows(latent_states);
  if (cfg_.k_latent > 0 && p.phi_w1.numel() > 0)
    out.concept_vec = project_concept(tape, p, prev);

  auto logits_of = [&](const Tensor& h) {
    Tensor n = tape.layer_norm(h, p.lnf_g, p.lnf_b);
    return tape.add(tape.matmul(n, p.head_w), p.head_b);
  };

  const int64_t ans0 = layout.answer_begin();
  if (!generating) {
    // Teacher forcing: [BOA, a_1..a_m] in one stage; row i predicts token i+1
    // (the last row predicts EOA).
    std::vector<int> ids = {cfg_.boa_id};
    ids.insert(ids.end(), in.answer.begin(), in.answer.end());
    Tensor x = tape.add(tape.embedding(ids, p.tok_embed),
                        tape.slice_rows(p.pos, ans0, ans0 + layout.n_answer));
    Tensor h = runner.run(x, ans0);
    out.logits = logits_of(h);
  } else {
    std::vector<int> ids = {cfg_.boa_id};
    bool done = false;
    int64_t step = 0;
    std::vector<Tensor> logit_rows;
    while (!done) {
      const int64_t pos = ans0 + step;
      std::vector<int> one = {ids.back()};
      Tensor x = tape.add(tape.embedding(one, p.tok_embed), tape.slice_rows(p.pos, pos, pos + 1));
      Tensor h = runner.run(x, pos);
      Tensor lg = logits_of(h);
      logit_rows.push_back(lg);
      int best = 0;
      for (int64_t c = 1; c < cfg_.vocab_size; ++c)
        if (lg.at(0, c) > lg.at(0, best)) best = static_cast<int>(c);
      ++step;
      if (best == cfg_.eoa_id) {
        done = true;
      } else {
        decoded->push_back(best);
        ids.push_back(best);
        if (step >= cfg_.max_answer_len) {
          done = true;
          if (truncated) *truncated = true;
        }
      }
    }
    out.logits = logit_rows.size() == 1 ? logit_rows[0] : tape.concat_rows(logit_rows);
    out.layout.n_answer = step;  // positions actually processed
  }
  return out;
}

ForwardOutput Model::forward(Tape& tape, const ModelParams& bound, const ModelInputs& in,
                             const ForwardOptions& opts) const {
  return run(tape, bound, in, opts, false, nullptr, nullptr);
}

GenerateResult Model::generate(const ModelInputs& in, const ForwardOptions& opts) const {
  GenerateResult res;
  Tape tape(false);
  res.out = run(tape, p_, in, opts, true, &res.tokens, &res.truncated);
  return res;
}

void Model::save(const std::string& path) const {
  TensorContainer c;
  auto& params = const_cast<ModelParams&>(p_);
  visit_params(params, [&](const std::string& name, Tensor& t) { c.put(name, t); });
  Tensor meta({14}, {static_cast<double>(cfg_.d_model), static_cast<double>(cfg_.n_layers),
                     static_cast<double>(cfg_.n_heads), static_cast<double>(cfg_.vocab_size),
                     static_cast<double>(cfg_.grid_rows), static_cast<double>(cfg_.grid_cols),
                     static_cast<double>(cfg_.patch_dim), static_cast<double>(cfg_.k_latent),
                     static_cast<double>(cfg_.d_teacher), cfg_.freeze_patch_embedder ? 1.0 : 0.0,
                     static_cast<double>(cfg_.n_question), static_cast<double>(cfg_.max_answer_len),
                     static_cast<double>(cfg_.boa_id), static_cast<double>(cfg_.eoa_id)});
  c.put("__config__", meta);
  c.write(path);
}

Model Model::load(const std::string& path) {
  TensorContainer c = TensorContainer::read(path);
  const Tensor& meta = c.get("__config__");
  if (meta.numel() != 14) throw IoError("checkpoint: bad __config__ entry");
  ModelConfig cfg;
  cfg.d_model = static_cast<int64_t>(meta.at(0));
  cfg.n_layers = static_cast<int64_t>(meta.at(1));
  cfg.n_heads = static_cast<int64_t>(meta.at(2));
  cfg.vocab_size = static_cast<int64_t>(meta.at(3));
  cfg.grid_rows = static_cast<int64_t>(meta.at(4));
  cfg.grid_cols = static_cast<int64_t>(meta.at(5));
  cfg.patch_dim = static_cast<int64_t>(meta.at(6));
  cfg.k_latent = static_cast<int64_t>(meta.at(7));
  cfg.d_teacher = static_cast<int64_t>(meta.at(8));
  cfg.freeze_patch_embedder = meta.at(9) != 0.0;
  cfg.n_question = static_cast<int64_t>(meta.at(10));
  cfg.max_answer_len = static_cast<int64_t>(meta.at(11));
  cfg.boa_id = static_cast<int>(meta.at(12));
  cfg.eoa_id = static_cast<int>(meta.at(13));
  Model m(cfg, 0);
  visit_params(m.params(), [&](const std::string& name, Tensor& t) {
    const Tensor& stored = c.get(name);
    if (!stored.same_shape(t))
      throw IoError("checkpoint: shape mismatch for '" + name + "'");
    t = stored.clone();
  });
  return m;
}

}  // namespace lavit
