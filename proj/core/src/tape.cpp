#include "lavit/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace lavit {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void gemm_into(double* out, const double* a, const double* b, int64_t m, int64_t k, int64_t n,
               bool trans_a, bool trans_b, bool accumulate) {
  CMap A(a, trans_a ? k : m, trans_a ? m : k);
  CMap B(b, trans_b ? n : k, trans_b ? k : n);
  MMap C(out, m, n);
  if (!trans_a && !trans_b) {
    accumulate ? void(C.noalias() += A * B) : void(C.noalias() = A * B);
  } else if (trans_a && !trans_b) {
    accumulate ? void(C.noalias() += A.transpose() * B) : void(C.noalias() = A.transpose() * B);
  } else if (!trans_a && trans_b) {
    accumulate ? void(C.noalias() += A * B.transpose()) : void(C.noalias() = A * B.transpose());
  } else {
    accumulate ? void(C.noalias() += A.transpose() * B.transpose())
               : void(C.noalias() = A.transpose() * B.transpose());
  }
}

}  // namespace

int Tape::push(int64_t numel, std::function<void(Tape&, const std::vector<double>&)> back) {
  nodes_.push_back(Node{numel, std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::gbuf(int node) {
  auto& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].numel), 0.0);
  return g;
}

Tensor Tape::watch(const Tensor& t) {
  Tensor out = t;
  out.node = recording_ ? push(t.numel(), nullptr) : -1;
  return out;
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1) throw ShapeError("backward: root must be a scalar");
  if (!recording_ || root.node < 0) throw ValueError("backward: root is not on the tape");
  grads_.assign(nodes_.size(), {});
  reached_.assign(nodes_.size(), 0);
  reached_[static_cast<size_t>(root.node)] = 1;
  gbuf(root.node)[0] = 1.0;
  for (int i = root.node; i >= 0; --i) {
    if (!reached_[static_cast<size_t>(i)]) continue;
    auto& node = nodes_[static_cast<size_t>(i)];
    if (node.back) node.back(*this, gbuf(i));
  }
}

const std::vector<double>& Tape::grad(const Tensor& t) const {
  if (t.node < 0 || static_cast<size_t>(t.node) >= grads_.size()) return empty_;
  if (grads_[static_cast<size_t>(t.node)].empty()) {
    // Unreached node: report a zero gradient of the right size.
    const_cast<Tape*>(this)->gbuf(t.node);
  }
  return grads_[static_cast<size_t>(t.node)];
}

// Marks `parent` reached and returns its accumulation buffer.
#define PARENT_BUF(tp, parent_node) \
  ((tp).reached_[static_cast<size_t>(parent_node)] = 1, (tp).gbuf(parent_node))

Tensor Tape::matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: rank-2 tensors required");
  const int64_t m = trans_a ? a.shape[1] : a.shape[0];
  const int64_t k = trans_a ? a.shape[0] : a.shape[1];
  const int64_t kb = trans_b ? b.shape[1] : b.shape[0];
  const int64_t n = trans_b ? b.shape[0] : b.shape[1];
  if (k != kb)
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a) + " * " + shape_str(b));
  Tensor out = Tensor::zeros({m, n});
  gemm_into(out.data->data(), a.data->data(), b.data->data(), m, k, n, trans_a, trans_b, false);
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    auto ad = a.data, bd = b.data;
    out.node = push(m * n, [=](Tape& tp, const std::vector<double>& g) {
      // dA = g . B^T (layout depends on the transpose flags), dB = A^T . g
      if (tp.recording_ && na >= 0) {
        auto& ga = PARENT_BUF(tp, na);
        if (!trans_a)
          gemm_into(ga.data(), g.data(), bd->data(), m, n, k, false, !trans_b, true);
        else
          gemm_into(ga.data(), bd->data(), g.data(), k, n, m, trans_b, true, true);
      }
      if (tp.recording_ && nb >= 0) {
        auto& gb = PARENT_BUF(tp, nb);
        if (!trans_b)
          gemm_into(gb.data(), ad->data(), g.data(), k, m, n, !trans_a, false, true);
        else
          gemm_into(gb.data(), g.data(), ad->data(), n, m, k, true, trans_a, true);
      }
    });
  }
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  const int64_t n = a.numel();
  const int64_t rows = a.rows(), cols = a.cols();
  enum class Mode { Same, RowVec, Scalar } mode;
  if (b.same_shape(a))
    mode = Mode::Same;
  else if (b.numel() == 1)
    mode = Mode::Scalar;
  else if (b.rank() == 2 && b.shape[0] == 1 && b.shape[1] == cols && a.rank() == 2)
    mode = Mode::RowVec;
  else
    throw ShapeError("add: incompatible shapes " + shape_str(a) + " + " + shape_str(b));

  Tensor out = Tensor::zeros(a.shape);
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  double* po = out.data->data();
  switch (mode) {
    case Mode::Same:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case Mode::Scalar:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[0];
      break;
    case Mode::RowVec:
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) po[r * cols + c] = pa[r * cols + c] + pb[c];
      break;
  }
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    out.node = push(n, [=](Tape& tp, const std::vector<double>& g) {
      if (na >= 0) {
        auto& ga = PARENT_BUF(tp, na);
        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
      }
      if (nb >= 0) {
        auto& gb = PARENT_BUF(tp, nb);
        switch (mode) {
          case Mode::Same:
            for (int64_t i = 0; i < n; ++i) gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
            break;
          case Mode::Scalar:
            for (int64_t i = 0; i < n; ++i) gb[0] += g[static_cast<size_t>(i)];
            break;
          case Mode::RowVec:
            for (int64_t r = 0; r < rows; ++r)
              for (int64_t c = 0; c < cols; ++c)
                gb[static_cast<size_t>(c)] += g[static_cast<size_t>(r * cols + c)];
            break;
        }
      }
    });
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  const int64_t n = a.numel();
  const bool scalar_b = b.numel() == 1 && !b.same_shape(a);
  if (!scalar_b && !b.same_shape(a))
    throw ShapeError("mul: incompatible shapes " + shape_str(a) + " * " + shape_str(b));
  Tensor out = Tensor::zeros(a.shape);
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  double* po = out.data->data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * (scalar_b ? pb[0] : pb[i]);
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    auto ad = a.data, bd = b.data;
    out.node = push(n, [=](Tape& tp, const std::vector<double>& g) {
      if (na >= 0) {
        auto& ga = PARENT_BUF(tp, na);
        for (int64_t i = 0; i < n; ++i)
          ga[static_cast<size_t>(i)] +=
              g[static_cast<size_t>(i)] * (scalar_b ? (*bd)[0] : (*bd)[static_cast<size_t>(i)]);
      }
      if (nb >= 0) {
        auto& gb = PARENT_BUF(tp, nb);
        if (scalar_b) {
          for (int64_t i = 0; i < n; ++i)
            gb[0] += g[static_cast<size_t>(i)] * (*ad)[static_cast<size_t>(i)];
        } else {
          for (int64_t i = 0; i < n; ++i)
            gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * (*ad)[static_cast<size_t>(i)];
        }
      }
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * c;
  if (tracked(a)) {
    int na = a.node;
    out.node = push(n, [=](Tape& tp, const std::vector<double>& g) {
      auto& ga = PARENT_BUF(tp, na);
      for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * c;
    });
  }
  return out;
}

Tensor Tape::div_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("div_scalar: divisor must be a 1-element tensor");
  const double sv = s.at(0);
  if (sv == 0.0) throw ValueError("div_scalar: division by zero");
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) / sv;
  if (tracked(a) || tracked(s)) {
    int na = a.node, ns = s.node;
    auto ad = a.data;
    out.node = push(n, [=](Tape& tp, const std::vector<double>& g) {
      if (na >= 0) {
        auto& ga = PARENT_BUF(tp, na);
        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] / sv;
      }
      if (ns >= 0) {
        auto& gs = PARENT_BUF(tp, ns);
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i)
          acc += g[static_cast<size_t>(i)] * (*ad)[static_cast<size_t>(i)];
        gs[0] += -acc / (sv * sv);
      }
    });
  }
  return out;
}

Tensor Tape::softmax_bias(const Tensor& logits, const Tensor& bias) {
  if (!logits.same_shape(bias))
    throw ShapeError("softmax_bias: logits " + shape_str(logits) + " vs bias " + shape_str(bias));
  if (logits.rank() != 2) throw ShapeError("softmax_bias: rank-2 tensor required");
  const int64_t rows = logits.shape[0], cols = logits.shape[1];
  Tensor out = Tensor::zeros(logits.shape);
  for (int64_t r = 0; r < rows; ++r) {
    double m = kNegInf;
    for (int64_t c = 0; c < cols; ++c) {
      const double b = bias.at(r, c);
      if (std::isnan(b) || b == std::numeric_limits<double>::infinity())
        throw ValueError("softmax_bias: bias entries must be finite or -inf");
      const double z = logits.at(r, c) + b;
      if (z > m) m = z;
    }
    if (m == kNegInf)
      throw ValueError("softmax_bias: degenerate row " + std::to_string(r) + " (all entries masked)");
    double denom = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      const double z = logits.at(r, c) + bias.at(r, c);
      const double e = (z == kNegInf) ? 0.0 : std::exp(z - m);
      out.at(r, c) = e;
      denom += e;
    }
    for (int64_t c = 0; c < cols; ++c) out.at(r, c) /= denom;
  }
  if (tracked(logits) || tracked(bias)) {
    int nl = logits.node, nb = bias.node;
    auto od = out.data;
    out.node = push(rows * cols, [=](Tape& tp, const std::vector<double>& g) {
      // dz_j = y_j * (g_j - sum_k g_k y_k), identical for logits and bias.
      std::vector<double> dz(static_cast<size_t>(rows * cols));
      for (int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (int64_t c = 0; c < cols; ++c)
          dot += g[static_cast<size_t>(r * cols + c)] * (*od)[static_cast<size_t>(r * cols + c)];
        for (int64_t c = 0; c < cols; ++c) {
          const size_t i = static_cast<size_t>(r * cols + c);
          dz[i] = (*od)[i] * (g[i] - dot);
        }
      }
      for (int parent : {nl, nb}) {
        if (parent < 0) continue;
        auto& gp = PARENT_BUF(tp, parent);
        for (size_t i = 0; i < dz.size(); ++i) gp[i] += dz[i];
      }
    });
  }
  return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2) throw ShapeError("layer_norm: rank-2 tensor required");
  const int64_t rows = x.shape[0], d = x.shape[1];
  if (gain.numel() != d || bias.numel() != d)
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  Tensor out = Tensor::zeros(x.shape);
  std::vector<double> inv_sigma(static_cast<size_t>(rows));
  auto norm = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * d));
  for (int64_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (int64_t c = 0; c < d; ++c) mu += x.at(r, c);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t c = 0; c < d; ++c) {
      const double t = x.at(r, c) - mu;
      var += t * t;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (int64_t c = 0; c < d; ++c) {
      const double y = (x.at(r, c) - mu) * is;
      (*norm)[static_cast<size_t>(r * d + c)] = y;
      out.at(r, c) = y * gain.at(c) + bias.at(c);
    }
  }
  if (tracked(x) || tracked(gain) || tracked(bias)) {
    int nx = x.node, ng = gain.node, nb = bias.node;
    auto gd = gain.data;
    auto is_v = std::make_shared<std::vector<double>>(std::move(inv_sigma));
    out.node = push(rows * d, [=](Tape& tp, const std::vector<double>& g) {
      for (int64_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * d;
        const double* yr = norm->data() + r * d;
        if (nx >= 0) {
          auto& gx = PARENT_BUF(tp, nx);
          double mean_dy = 0.0, mean_dyy = 0.0;
          for (int64_t c = 0; c < d; ++c) {
            const double dy = gr[c] * (*gd)[static_cast<size_t>(c)];
            mean_dy += dy;
            mean_dyy += dy * yr[c];
          }
          mean_dy /= static_cast<double>(d);
          mean_dyy /= static_cast<double>(d);
          const double is = (*is_v)[static_cast<size_t>(r)];
          for (int64_t c = 0; c < d; ++c) {
            const double dy = gr[c] * (*gd)[static_cast<size_t>(c)];
            gx[static_cast<size_t>(r * d + c)] += is * (dy - mean_dy - yr[c] * mean_dyy);
          }
        }
        if (ng >= 0) {
          auto& gg = PARENT_BUF(tp, ng);
          for (int64_t c = 0; c < d; ++c) gg[static_cast<size_t>(c)] += gr[c] * yr[c];
        }
        if (nb >= 0) {
          auto& gb = PARENT_BUF(tp, nb);
          for (int64_t c = 0; c < d; ++c) gb[static_cast<size_t>(c)] += gr[c];
        }
      }
    });
  }
  return out;
}

Tensor Tape::gelu(const Tensor& x) {
  const int64_t n = x.numel();
  Tensor out = Tensor::zeros(x.shape);
  for (int64_t i = 0; i < n; ++i) {
    const double v = x.at(i);
    out.at(i) = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  }
  if (tracked(x)) {
    int nx = x.node;
    auto xd = x.data;
    out.node = push(n, [=](Tape& tp, const std::vector<double>& g) {
      auto& gx = PARENT_BUF(tp, nx);
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (int64_t i = 0; i < n; ++i) {
        const double v = (*xd)[static_cast<size_t>(i)];
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor Tape::embedding(const std::vector<int>& ids, const Tensor& table) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank-2");
  const int64_t vocab = table.shape[0], d = table.shape[1];
  const int64_t n = static_cast<int64_t>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= vocab) throw ValueError("embedding: id " + std::to_string(id) + " out of range");
  Tensor out = Tensor::zeros({n, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < d; ++c) out.at(i, c) = table.at(ids[static_cast<size_t>(i)], c);
  if (tracked(table)) {
    int nt = table.node;
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    out.node = push(n * d, [=](Tape& tp, const std::vector<double>& g) {
      auto& gt = PARENT_BUF(tp, nt);
      for (int64_t i = 0; i < n; ++i) {
        const int64_t row = (*ids_copy)[static_cast<size_t>(i)];
        for (int64_t c = 0; c < d; ++c)
          gt[static_cast<size_t>(row * d + c)] += g[static_cast<size_t>(i * d + c)];
      }
    });
  }
  return out;
}

Tensor Tape::cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: rank-2 logits required");
  const int64_t rows = logits.shape[0], vocab = logits.shape[1];
  if (static_cast<int64_t>(targets.size()) != rows)
    throw ShapeError("cross_entropy: one target per logit row required");
  for (int t : targets)
    if (t < 0 || t >= vocab) throw ValueError("cross_entropy: token id out of vocab");
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * vocab));
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    double m = kNegInf;
    for (int64_t c = 0; c < vocab; ++c) m = std::max(m, logits.at(r, c));
    double denom = 0.0;
    for (int64_t c = 0; c < vocab; ++c) {
      const double e = std::exp(logits.at(r, c) - m);
      (*probs)[static_cast<size_t>(r * vocab + c)] = e;
      denom += e;
    }
    for (int64_t c = 0; c < vocab; ++c) (*probs)[static_cast<size_t>(r * vocab + c)] /= denom;
    loss -= std::log((*probs)[static_cast<size_t>(r * vocab + targets[static_cast<size_t>(r)])]);
  }
  loss /= static_cast<double>(rows);
  Tensor out = Tensor::scalar(loss);
  if (tracked(logits)) {
    int nl = logits.node;
    auto tg = std::make_shared<std::vector<int>>(targets);
    out.node = push(1, [=](Tape& tp, const std::vector<double>& g) {
      auto& gl = PARENT_BUF(tp, nl);
      const double s = g[0] / static_cast<double>(rows);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < vocab; ++c) {
          const size_t i = static_cast<size_t>(r * vocab + c);
          const double onehot = (c == (*tg)[static_cast<size_t>(r)]) ? 1.0 : 0.0;
          gl[i] += s * ((*probs)[i] - onehot);
        }
    });
  }
  return out;
}

Tensor Tape::cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeError("cosine_similarity: length mismatch");
  const int64_t n = a.numel();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    dot += a.at(i) * b.at(i);
    na2 += a.at(i) * a.at(i);
    nb2 += b.at(i) * b.at(i);
  }
  if (na2 == 0.0 || nb2 == 0.0) throw ValueError("cosine_similarity: zero-norm vector");
  const double norm_a = std::sqrt(na2), norm_b = std::sqrt(nb2);
  const double s = dot / (norm_a * norm_b);
  Tensor out = Tensor::scalar(s);
  if (tracked(a) || tracked(b)) {
    int nna = a.node, nnb = b.node;
    auto ad = a.data, bd = b.data;
    out.node = push(1, [=](Tape& tp, const std::vector<double>& g) {
      if (nna >= 0) {
        auto& ga = PARENT_BUF(tp, nna);
        for (int64_t i = 0; i < n; ++i)
          ga[static_cast<size_t>(i)] +=
              g[0] * ((*bd)[static_cast<size_t>(i)] / (norm_a * norm_b) -
                      s * (*ad)[static_cast<size_t>(i)] / na2);
      }
      if (nnb >= 0) {
        auto& gb = PARENT_BUF(tp, nnb);
        for (int64_t i = 0; i < n; ++i)
          gb[static_cast<size_t>(i)] +=
              g[0] * ((*ad)[static_cast<size_t>(i)] / (norm_a * norm_b) -
                      s * (*bd)[static_cast<size_t>(i)] / nb2);
      }
    });
  }
  return out;
}

Tensor Tape::kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.numel() != q.numel()) throw ShapeError("kl_divergence: length mismatch");
  const int64_t n = p.numel();
  double sp = 0.0, sq = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (p.at(i) < 0.0) throw ValueError("kl_divergence: negative entry in p");
    sp += p.at(i);
    sq += q.at(i);
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
    throw ValueError("kl_divergence: inputs must sum to 1 within 1e-9");
  double kl = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (p.at(i) > 0.0) {
      if (q.at(i) <= 0.0)
        throw ValueError("kl_divergence: support violation (p>0 with q=0) at index " +
                         std::to_string(i));
      kl += p.at(i) * std::log(p.at(i) / q.at(i));
    }
  }
  Tensor out = Tensor::scalar(kl);
  if (tracked(q)) {
    int nq = q.node;
    auto pd = p.data, qd = q.data;
    out.node = push(1, [=](Tape& tp, const std::vector<double>& g) {
      auto& gq = PARENT_BUF(tp, nq);
      for (int64_t i = 0; i < n; ++i) {
        const double pv = (*pd)[static_cast<size_t>(i)];
        if (pv > 0.0) gq[static_cast<size_t>(i)] += -g[0] * pv / (*qd)[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor& a) {
  const int64_t n = a.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a.at(i);
  Tensor out = Tensor::scalar(s);
  if (tracked(a)) {
    int na = a.node;
    out.node = push(1, [=](Tape& tp, const std::vector<double>& g) {
      auto& ga = PARENT_BUF(tp, na);
      for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[0];
    });
  }
  return out;
}

Tensor Tape::mean(const Tensor& a) {
  const int64_t n = a.numel();
  Tensor s = sum(a);
  return scale(s, 1.0 / static_cast<double>(n));
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  const int64_t cols = parts[0].cols();
  int64_t rows = 0;
  bool any_tracked = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.shape[0];
    any_tracked |= tracked(p);
  }
  Tensor out = Tensor::zeros({rows, cols});
  int64_t r = 0;
  for (const auto& p : parts) {
    std::copy(p.data->begin(), p.data->end(), out.data->begin() + r * cols);
    r += p.shape[0];
  }
  if (any_tracked) {
    struct Piece {
      int node;
      int64_t r0, nrows;
    };
    auto pieces = std::make_shared<std::vector<Piece>>();
    int64_t off = 0;
    for (const auto& p : parts) {
      pieces->push_back({p.node, off, p.shape[0]});
      off += p.shape[0];
    }
    out.node = push(rows * cols, [=](Tape& tp, const std::vector<double>& g) {
      for (const auto& pc : *pieces) {
        if (pc.node < 0) continue;
        auto& gp = PARENT_BUF(tp, pc.node);
        for (int64_t i = 0; i < pc.nrows * cols; ++i)
          gp[static_cast<size_t>(i)] += g[static_cast<size_t>(pc.r0 * cols + i)];
      }
    });
  }
  return out;
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  const int64_t rows = parts[0].rows();
  int64_t cols = 0;
  bool any_tracked = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.shape[0] != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.shape[1];
    any_tracked |= tracked(p);
  }
  Tensor out = Tensor::zeros({rows, cols});
  int64_t c0 = 0;
  for (const auto& p : parts) {
    const int64_t pc = p.shape[1];
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < pc; ++c) out.at(r, c0 + c) = p.at(r, c);
    c0 += pc;
  }
  if (any_tracked) {
    struct Piece {
      int node;
      int64_t c0, ncols;
    };
    auto pieces = std::make_shared<std::vector<Piece>>();
    int64_t off = 0;
    for (const auto& p : parts) {
      pieces->push_back({p.node, off, p.shape[1]});
      off += p.shape[1];
    }
    out.node = push(rows * cols, [=](Tape& tp, const std::vector<double>& g) {
      for (const auto& pc : *pieces) {
        if (pc.node < 0) continue;
        auto& gp = PARENT_BUF(tp, pc.node);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < pc.ncols; ++c)
            gp[static_cast<size_t>(r * pc.ncols + c)] +=
                g[static_cast<size_t>(r * cols + pc.c0 + c)];
      }
    });
  }
  return out;
}

Tensor Tape::slice_rows(const Tensor& a, int64_t r0, int64_t r1) {
  if (a.rank() != 2) throw ShapeError("slice_rows: rank-2 tensor required");
  const int64_t rows = a.shape[0], cols = a.shape[1];
  if (r0 < 0 || r1 > rows || r0 >= r1) throw ShapeError("slice_rows: bad range");
  Tensor out = Tensor::zeros({r1 - r0, cols});
  std::copy(a.data->begin() + r0 * cols, a.data->begin() + r1 * cols, out.data->begin());
  if (tracked(a)) {
    int na = a.node;
    out.node = push((r1 - r0) * cols, [=](Tape& tp, const std::vector<double>& g) {
      auto& ga = PARENT_BUF(tp, na);
      for (int64_t i = 0; i < (r1 - r0) * cols; ++i)
        ga[static_cast<size_t>(r0 * cols + i)] += g[static_cast<size_t>(i)];
    });
  }
  return out;
}

Tensor Tape::slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
  if (a.rank() != 2) throw ShapeError("slice_cols: rank-2 tensor required");
  const int64_t rows = a.shape[0], cols = a.shape[1];
  if (c0 < 0 || c1 > cols || c0 >= c1) throw ShapeError("slice_cols: bad range");
  const int64_t w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < w; ++c) out.at(r, c) = a.at(r, c0 + c);
  if (tracked(a)) {
    int na = a.node;
    out.node = push(rows * w, [=](Tape& tp, const std::vector<double>& g) {
      auto& ga = PARENT_BUF(tp, na);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < w; ++c)
          ga[static_cast<size_t>(r * cols + c0 + c)] += g[static_cast<size_t>(r * w + c)];
    });
  }
  return out;
}

#undef PARENT_BUF

}  // namespace lavit
