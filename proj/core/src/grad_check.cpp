#include "lavit/grad_check.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "lavit/rng.hpp"

namespace lavit {

namespace {

std::vector<Tensor> default_inputs(const std::vector<std::vector<int64_t>>& shapes, uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (const auto& s : shapes) out.push_back(rng.randn(s));
  return out;
}

// Positive distribution summing to 1 (softmax of normals).
Tensor random_distribution(Rng& rng, int64_t n) {
  Tensor t = rng.randn({n});
  double m = t.at(0);
  for (int64_t i = 1; i < n; ++i) m = std::max(m, t.at(i));
  double denom = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    t.at(i) = std::exp(t.at(i) - m);
    denom += t.at(i);
  }
  for (int64_t i = 0; i < n; ++i) t.at(i) /= denom;
  return t;
}

// Random weights folding a non-scalar kernel output into a scalar, so the
// check exercises the whole Jacobian.
Tensor fold(Tape& tp, const Tensor& y, uint64_t seed) {
  if (y.numel() == 1) return y;
  Rng rng(derive_seed(seed, 0xf01d));
  Tensor w = rng.randn(y.shape);
  return tp.sum(tp.mul(y, w.detached()));
}

const std::map<std::string, CheckCase>& registry() {
  static const std::map<std::string, CheckCase> cases = [] {
    std::map<std::string, CheckCase> m;

    m["matmul"] = {{{3, 4}, {4, 2}},
                   {true, true},
                   nullptr,
                   [](Tape& tp, const std::vector<Tensor>& in) {
                     return fold(tp, tp.matmul(in[0], in[1]), 1);
                   }};
    m["matmul_tt"] = {{{4, 3}, {2, 4}},
                      {true, true},
                      nullptr,
                      [](Tape& tp, const std::vector<Tensor>& in) {
                        return fold(tp, tp.matmul(in[0], in[1], true, true), 2);
                      }};
    m["add"] = {{{3, 5}, {3, 5}},
                {true, true},
                nullptr,
                [](Tape& tp, const std::vector<Tensor>& in) {
                  return fold(tp, tp.add(in[0], in[1]), 3);
                }};
    m["add_rowvec"] = {{{3, 5}, {1, 5}},
                       {true, true},
                       nullptr,
                       [](Tape& tp, const std::vector<Tensor>& in) {
                         return fold(tp, tp.add(in[0], in[1]), 4);
                       }};
    m["mul"] = {{{3, 5}, {3, 5}},
                {true, true},
                nullptr,
                [](Tape& tp, const std::vector<Tensor>& in) {
                  return fold(tp, tp.mul(in[0], in[1]), 5);
                }};
    m["scale"] = {{{3, 5}},
                  {true},
                  nullptr,
                  [](Tape& tp, const std::vector<Tensor>& in) {
                    return fold(tp, tp.scale(in[0], -1.7), 6);
                  }};
    m["div_scalar"] = {{{3, 5}, {1}},
                       {true, true},
                       [](const std::vector<std::vector<int64_t>>& shapes, uint64_t seed) {
                         auto in = default_inputs(shapes, seed);
                         in[1].at(0) = 1.5 + std::abs(in[1].at(0));  // keep away from zero
                         return in;
                       },
                       [](Tape& tp, const std::vector<Tensor>& in) {
                         return fold(tp, tp.div_scalar(in[0], in[1]), 7);
                       }};
    m["softmax_with_bias"] = {{{2, 5}, {2, 5}},
                              {true, true},
                              nullptr,
                              [](Tape& tp, const std::vector<Tensor>& in) {
                                return fold(tp, tp.softmax_bias(in[0], in[1]), 8);
                              }};
    m["layer_norm"] = {{{4, 8}, {1, 8}, {1, 8}},
                       {true, true, true},
                       nullptr,
                       [](Tape& tp, const std::vector<Tensor>& in) {
                         return fold(tp, tp.layer_norm(in[0], in[1], in[2]), 9);
                       }};
    m["gelu"] = {{{3, 6}},
                 {true},
                 nullptr,
                 [](Tape& tp, const std::vector<Tensor>& in) { return fold(tp, tp.gelu(in[0]), 10); }};
    m["embedding"] = {{{6, 4}},
                      {true},
                      nullptr,
                      [](Tape& tp, const std::vector<Tensor>& in) {
                        return fold(tp, tp.embedding({1, 3, 3, 0, 5}, in[0]), 11);
                      }};
    m["cross_entropy"] = {{{4, 7}},
                          {true},
                          nullptr,
                          [](Tape& tp, const std::vector<Tensor>& in) {
                            return tp.cross_entropy(in[0], {2, 0, 6, 3});
                          }};
    m["cosine_similarity"] = {{{5}, {5}},
                              {true, true},
                              nullptr,
                              [](Tape& tp, const std::vector<Tensor>& in) {
                                return tp.cosine_similarity(in[0], in[1]);
                              }};
    m["kl_divergence"] = {{{6}, {6}},
                          {false, true},
                          [](const std::vector<std::vector<int64_t>>& shapes, uint64_t seed) {
                            Rng rng(seed);
                            std::vector<Tensor> in;
                            in.push_back(random_distribution(rng, shapes[0][0]));
                            in.push_back(random_distribution(rng, shapes[1][0]));
                            return in;
                          },
                          [](Tape& tp, const std::vector<Tensor>& in) {
                            // The kernel requires sum(q) == 1; renormalize through the
                            // tape so perturbed entries stay a valid distribution.
                            Tensor q = tp.div_scalar(in[1], tp.sum(in[1]));
                            return tp.kl_divergence(in[0], q);
                          }};
    m["sum"] = {{{4, 3}},
                {true},
                nullptr,
                [](Tape& tp, const std::vector<Tensor>& in) { return tp.sum(in[0]); }};
    m["mean"] = {{{4, 3}},
                 {true},
                 nullptr,
                 [](Tape& tp, const std::vector<Tensor>& in) { return tp.mean(in[0]); }};
    m["concat"] = {{{2, 4}, {3, 4}, {2, 3}},
                   {true, true, true},
                   nullptr,
                   [](Tape& tp, const std::vector<Tensor>& in) {
                     std::vector<Tensor> rows = {in[0], in[1]};
                     Tensor r = tp.concat_rows(rows);
                     std::vector<Tensor> cols = {tp.slice_rows(r, 1, 3), in[2]};
                     return fold(tp, tp.concat_cols(cols), 12);
                   }};
    m["slice"] = {{{5, 6}},
                  {true},
                  nullptr,
                  [](Tape& tp, const std::vector<Tensor>& in) {
                    Tensor r = tp.slice_rows(in[0], 1, 4);
                    return fold(tp, tp.slice_cols(r, 2, 5), 13);
                  }};

    // Composed pathways mirrored from the training losses.

    // Projection head (two-layer GELU MLP) into a cosine reconstruction loss.
    m["concept_path"] = {{{1, 6}, {6, 6}, {1, 6}, {6, 4}, {1, 4}},
                         {true, true, true, true, true},
                         nullptr,
                         [](Tape& tp, const std::vector<Tensor>& in) {
                           Rng rng(0xc0ffee);
                           Tensor target = rng.randn({4}).detached();
                           Tensor h = tp.gelu(tp.add(tp.matmul(in[0], in[1]), in[2]));
                           Tensor v = tp.add(tp.matmul(h, in[3]), in[4]);
                           Tensor cos = tp.cosine_similarity(v, target);
                           return tp.add(tp.scale(cos, -1.0), Tensor::scalar(1.0));
                         }};

    // Latent-row attention (softmax over gated scores), layer/head averaged,
    // renormalized over image keys, matched to a sparse target through KL.
    m["traj_path"] = {{{1, 8}, {1, 8}},
                      {true, true},
                      nullptr,
                      [](Tape& tp, const std::vector<Tensor>& in) {
                        Tensor bias = Tensor::zeros({1, 8});
                        Tensor target({4}, {0.5, 0.25, 0.25, 0.0});
                        Tensor acc;
                        for (size_t h = 0; h < in.size(); ++h) {
                          Tensor a = tp.softmax_bias(in[h], bias);
                          Tensor img = tp.slice_cols(a, 0, 4);
                          acc = (h == 0) ? img : tp.add(acc, img);
                        }
                        acc = tp.scale(acc, 1.0 / static_cast<double>(in.size()));
                        Tensor q = tp.div_scalar(acc, tp.sum(acc));
                        return tp.kl_divergence(target, q);
                      }};

    // Gated attention row feeding a value mix and a linear head into
    // next-token cross-entropy.
    m["ntp_path"] = {{{2, 5}, {5, 6}, {6, 9}},
                     {true, true, true},
                     nullptr,
                     [](Tape& tp, const std::vector<Tensor>& in) {
                       Tensor bias = Tensor::zeros({2, 5});
                       const double g = std::log(0.3);  // partially closed gate
                       for (int64_t r = 0; r < 2; ++r)
                         for (int64_t c = 0; c < 2; ++c) bias.at(r, c) = g;
                       Tensor attn = tp.softmax_bias(in[0], bias);
                       Tensor ctx = tp.matmul(attn, in[1]);
                       Tensor logits = tp.matmul(ctx, in[2]);
                       return tp.cross_entropy(logits, {4, 7});
                     }};

    return m;
  }();
  return cases;
}

double run_once(const CheckCase& c, const std::vector<std::vector<int64_t>>& shapes, uint64_t seed) {
  auto inputs = c.make_inputs ? c.make_inputs(shapes, seed) : default_inputs(shapes, seed);

  Tape tape;
  std::vector<Tensor> watched;
  watched.reserve(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i)
    watched.push_back(c.differentiable[i] ? tape.watch(inputs[i]) : inputs[i].detached());
  Tensor y = c.run(tape, watched);
  tape.backward(y);

  const double h = 1e-5;
  double max_rel = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!c.differentiable[i]) continue;
    const auto& analytic = tape.grad(watched[i]);
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      const double orig = inputs[i].at(j);
      auto eval = [&](double v) {
        inputs[i].at(j) = v;
        Tape t2(false);
        std::vector<Tensor> det;
        det.reserve(inputs.size());
        for (const auto& t : inputs) det.push_back(t.detached());
        double out = c.run(t2, det).item();
        inputs[i].at(j) = orig;
        return out;
      };
      const double numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
      const double rel =
          std::abs(analytic[static_cast<size_t>(j)] - numeric) / std::max(1.0, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace

std::vector<std::string> grad_check_cases() {
  std::vector<std::string> names;
  for (const auto& [k, v] : registry()) names.push_back(k);
  return names;
}

double grad_check(const std::string& op, const std::vector<std::vector<int64_t>>& shapes,
                  uint64_t seed) {
  auto it = registry().find(op);
  if (it == registry().end()) throw ValueError("grad_check: unknown kernel '" + op + "'");
  const auto& c = it->second;
  const auto& use_shapes = shapes.empty() ? c.shapes : shapes;
  if (use_shapes.size() != c.differentiable.size())
    throw ShapeError("grad_check: case '" + op + "' expects " +
                     std::to_string(c.differentiable.size()) + " inputs");

  double best = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 3; ++attempt) {
    best = std::min(best, run_once(c, use_shapes, seed + static_cast<uint64_t>(attempt)));
    if (best <= 1e-3) break;  // no non-differentiable point suspected
  }
  return best;
}

}  // namespace lavit
