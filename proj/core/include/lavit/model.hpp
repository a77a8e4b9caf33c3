#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lavit/tape.hpp"
#include "lavit/tensor.hpp"

namespace lavit {

struct ModelConfig {
  int64_t d_model = 64;
  int64_t n_layers = 2;
  int64_t n_heads = 2;
  int64_t vocab_size = 0;
  int64_t grid_rows = 4;
  int64_t grid_cols = 4;
  int64_t patch_dim = 48;  // flattened pixels per patch
  int64_t k_latent = 4;
  int64_t d_teacher = 0;  // width of the reconstruction target; 0 = no projection head
  bool freeze_patch_embedder = false;
  int64_t n_question = 6;  // question tokens incl. the system prefix
  int64_t max_answer_len = 16;
  int boa_id = 0;
  int eoa_id = 0;

  int64_t n_image() const { return grid_rows * grid_cols; }
  int64_t head_dim() const { return d_model / n_heads; }
  /// Longest sequence the position table must cover: prompt, latents, BOA,
  /// then up to max_answer_len generated tokens.
  int64_t max_seq_len() const {
    return n_image() + n_question + k_latent + 1 + max_answer_len;
  }
  void validate() const;
};

enum class Segment { Image, Question, Latent, Answer };

/// Contiguous segment spans in the order IMAGE, QUESTION, LATENT, ANSWER.
/// The ANSWER span opens with the begin-of-answer token, so every
/// answer-token prediction is made from an ANSWER-segment query.
struct SegmentLayout {
  int64_t n_image = 0;
  int64_t n_question = 0;
  int64_t n_latent = 0;
  int64_t n_answer = 0;  // BOA + answer tokens

  int64_t question_begin() const { return n_image; }
  int64_t latent_begin() const { return n_image + n_question; }
  int64_t answer_begin() const { return n_image + n_question + n_latent; }
  int64_t seq_len() const { return n_image + n_question + n_latent + n_answer; }
  Segment segment_of(int64_t pos) const;
  std::vector<int64_t> image_positions() const;
  std::vector<int64_t> latent_positions() const;
  std::vector<int64_t> answer_positions() const;
};

struct ForwardOptions {
  double gamma = 1.0;
  bool mask_latents = false;    // latent keys get -inf from all queries
  bool mask_image = false;      // image keys get -inf from all non-image queries
  bool gate_latent_path = false;  // apply the gate to latent->image attention too
  /// Reference-path hook: bypass build_attention_bias with an explicit bias
  /// matrix (used to compare gated vs ungated passes).
  const Tensor* bias_override = nullptr;
};

/// Additive attention bias: -inf above the diagonal, ln(gamma) on
/// (ANSWER query, IMAGE key) pairs, 0 elsewhere on the causal support.
Tensor build_attention_bias(const SegmentLayout& layout, double gamma_value,
                            const ForwardOptions& opts = {});

/// What the model consumes for one sample; pixels are [n_image x patch_dim].
struct ModelInputs {
  Tensor pixels;
  std::vector<int> question;
  std::vector<int> answer;  // ground-truth ids for teacher forcing (no BOA/EOA)
};

struct ForwardOutput {
  SegmentLayout layout;
  int64_t attn_dim = 0;  // row stride of the dense attention records

  Tensor logits;  // [n_answer x vocab]; row i predicts answer token i (last row: EOA)
  Tensor h_z;     // [k_latent x d_model] final-layer latent states
  Tensor concept_vec;  // [1 x d_teacher] projection of the last latent state
  Tensor img_embed;    // [n_image x d_model] transformer input at image rows

  /// Dense per-layer/head records, index (layer * n_heads + head), row-major
  /// [attn_dim x attn_dim]; rows above the processed length are zero.
  std::vector<std::vector<double>> attn;    // post-softmax probabilities
  std::vector<std::vector<double>> scores;  // pre-bias attention logits
  /// Tape handles of the latent-query attention rows:
  /// latent_attn[j][layer * n_heads + head] is [1 x kv] for latent token j.
  std::vector<std::vector<Tensor>> latent_attn;
  std::vector<double> h_final;  // [seq x d_model] final-layer hidden values
};

struct GenerateResult {
  std::vector<int> tokens;  // decoded answer ids, EOA excluded
  bool truncated = false;
  ForwardOutput out;
};

struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w_up, b_up, w_down, b_down;
};

struct ModelParams {
  Tensor tok_embed;
  Tensor patch_w, patch_b;
  Tensor pos;
  Tensor row_embed, col_embed;
  Tensor latent_start;
  Tensor adapter_w, adapter_b;
  std::vector<LayerParams> layers;
  Tensor lnf_g, lnf_b;
  Tensor head_w, head_b;
  Tensor phi_w1, phi_b1, phi_w2, phi_b2;
};

/// Fixed-order traversal over every present parameter; the single source of
/// truth for init, checkpointing, binding, and optimizer state alignment.
void visit_params(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn);

/// Decoder-only multimodal transformer over [image patches, question tokens,
/// K continuous latent tokens, answer tokens] with segment-aware gated
/// attention. Mutable during training; treat a snapshot as immutable for
/// concurrent inference.
class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return p_; }
  const ModelParams& params() const { return p_; }

  /// Registers every parameter on the tape; forward must use the returned
  /// handles so gradients reach the parameters.
  ModelParams bind(Tape& tape) const;

  /// Teacher-forced pass: latent inputs beyond the first are the model's own
  /// previous-latent final states re-fed through the input adapter within the
  /// same differentiable pass.
  ForwardOutput forward(Tape& tape, const ModelParams& bound, const ModelInputs& in,
                        const ForwardOptions& opts) const;

  /// Greedy decoding at the inference topology (caller picks gamma, normally 1).
  GenerateResult generate(const ModelInputs& in, const ForwardOptions& opts = {}) const;

  /// phi_mlp: d_model -> d_model -> d_teacher with GELU between.
  Tensor project_concept(Tape& tape, const ModelParams& bound, const Tensor& anchor) const;

  bool is_trainable(const std::string& name) const;

  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  ForwardOutput run(Tape& tape, const ModelParams& p, const ModelInputs& in,
                    const ForwardOptions& opts, bool generating, std::vector<int>* decoded,
                    bool* truncated) const;

  ModelConfig cfg_;
  ModelParams p_;
};

}  // namespace lavit
