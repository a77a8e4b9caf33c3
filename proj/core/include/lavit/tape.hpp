#pragma once

#include <functional>
#include <span>
#include <vector>

#include "lavit/tensor.hpp"

namespace lavit {

/// Reverse-mode tape over the closed kernel set the model needs. A tape is
/// built fresh for each forward pass and discarded after backward. Nodes are
/// appended in topological order (an op's inputs always precede it), so
/// backward is a single reverse sweep.
///
/// Kernels ignore inputs with node == -1 (constants); a recording=false tape
/// computes values only and never allocates nodes, which is the inference path.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  /// Register a leaf (parameter or probed input). Returns a handle sharing
  /// the same storage with a fresh node id.
  Tensor watch(const Tensor& t);

  // -- kernel set ----------------------------------------------------------
  Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
  /// b may have the same shape as a, be a [1 x cols] row vector, or a scalar.
  Tensor add(const Tensor& a, const Tensor& b);
  /// b may have the same shape as a or be a scalar.
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  /// Elementwise a / s where s is a 1-element tensor (sum-renormalization).
  Tensor div_scalar(const Tensor& a, const Tensor& s);
  /// Row-wise softmax(logits + bias). Bias entries may be -inf (hard mask);
  /// a row that is entirely masked is a degenerate-row error.
  Tensor softmax_bias(const Tensor& logits, const Tensor& bias);
  /// Row-wise layer normalization with gain/bias [1 x d].
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
  Tensor gelu(const Tensor& x);
  /// Gathers rows of `table` [vocab x d]; backward scatter-adds.
  Tensor embedding(const std::vector<int>& ids, const Tensor& table);
  /// Mean token-level cross-entropy of row-wise softmax(logits) vs target ids.
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
  Tensor cosine_similarity(const Tensor& a, const Tensor& b);
  /// KL(p || q) = sum_{p_i > 0} p_i ln(p_i / q_i). The target slot p is
  /// treated as a fixed constant; gradients flow to q only.
  Tensor kl_divergence(const Tensor& p, const Tensor& q);
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  Tensor concat_rows(std::span<const Tensor> parts);
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1);
  Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);

  // -- backward ------------------------------------------------------------
  /// Populates d(root)/d(node) for every node reachable from the scalar root.
  void backward(const Tensor& root);
  /// Gradient buffer of a watched/op tensor after backward (zeros if the node
  /// was not reached).
  const std::vector<double>& grad(const Tensor& t) const;

 private:
  struct Node {
    int64_t numel;
    std::function<void(Tape&, const std::vector<double>&)> back;
  };

  int push(int64_t numel, std::function<void(Tape&, const std::vector<double>&)> back);
  bool tracked(const Tensor& t) const { return recording_ && t.node >= 0; }
  std::vector<double>& gbuf(int node);

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<char> reached_;
  std::vector<double> empty_;
};

}  // namespace lavit
