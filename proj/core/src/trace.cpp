#include "lavit/trace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lavit {

std::vector<double> aggregate_gaze(const std::vector<std::vector<double>>& attn, int64_t seq,
                                   const std::vector<int64_t>& text_positions,
                                   const std::vector<int64_t>& image_positions) {
  if (text_positions.empty()) throw ValueError("aggregate_gaze: no text positions");
  if (attn.empty()) throw ValueError("aggregate_gaze: no attention maps");
  std::vector<double> gaze(image_positions.size(), 0.0);
  for (const auto& map : attn) {
    if (static_cast<int64_t>(map.size()) != seq * seq)
      throw ShapeError("aggregate_gaze: map is not seq x seq");
    for (int64_t i : text_positions)
      for (size_t j = 0; j < image_positions.size(); ++j)
        gaze[j] += map[static_cast<size_t>(i * seq + image_positions[j])];
  }
  const double denom =
      static_cast<double>(attn.size()) * static_cast<double>(text_positions.size());
  for (auto& v : gaze) v /= denom;
  return gaze;
}

std::vector<double> minmax_normalize(const std::vector<double>& gaze, double eps_norm) {
  if (gaze.empty()) throw ValueError("minmax_normalize: empty gaze");
  const auto [mn_it, mx_it] = std::minmax_element(gaze.begin(), gaze.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!std::isfinite(mn) || !std::isfinite(mx))
    throw ValueError("minmax_normalize: non-finite gaze entry");
  std::vector<double> out(gaze.size());
  const double denom = mx - mn + eps_norm;
  for (size_t i = 0; i < gaze.size(); ++i) out[i] = (gaze[i] - mn) / denom;
  return out;
}

std::vector<double> topk_sparsify(const std::vector<double>& a_traj, int64_t k, bool* degenerate) {
  const int64_t n = static_cast<int64_t>(a_traj.size());
  if (k < 1 || k > n) throw ValueError("topk_sparsify: k out of range");
  if (degenerate) *degenerate = false;

  std::vector<int64_t> idx(a_traj.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    return a_traj[static_cast<size_t>(a)] > a_traj[static_cast<size_t>(b)];
  });

  std::vector<double> out(a_traj.size(), 0.0);
  double mass = 0.0;
  for (int64_t i = 0; i < k; ++i) mass += a_traj[static_cast<size_t>(idx[static_cast<size_t>(i)])];
  if (mass <= 0.0) {
    // No signal to keep: fall back to uniform over the first k patches.
    if (degenerate) *degenerate = true;
    for (int64_t i = 0; i < k; ++i) out[static_cast<size_t>(i)] = 1.0 / static_cast<double>(k);
    return out;
  }
  for (int64_t i = 0; i < k; ++i) {
    const size_t j = static_cast<size_t>(idx[static_cast<size_t>(i)]);
    out[j] = a_traj[j] / mass;
  }
  return out;
}

double focusing_score(const std::vector<double>& a_traj, int64_t grid_rows, int64_t grid_cols,
                      const BBox& bbox) {
  bbox.validate(grid_rows, grid_cols);
  if (static_cast<int64_t>(a_traj.size()) != grid_rows * grid_cols)
    throw ShapeError("focusing_score: trajectory does not match grid");
  double total = 0.0, inside = 0.0;
  for (int64_t r = 0; r < grid_rows; ++r)
    for (int64_t c = 0; c < grid_cols; ++c) {
      const double v = a_traj[static_cast<size_t>(r * grid_cols + c)];
      total += v;
      if (bbox.contains(r, c)) inside += v;
    }
  if (total <= 0.0) throw ValueError("focusing_score: zero total trajectory mass");
  return inside / total;
}

Tensor resize_map_bilinear(const Tensor& map, int64_t out_rows, int64_t out_cols) {
  if (map.rank() != 2) throw ShapeError("resize_map_bilinear: rank-2 map required");
  const int64_t in_rows = map.shape[0], in_cols = map.shape[1];
  if (in_rows < 1 || in_cols < 1 || out_rows < 1 || out_cols < 1)
    throw ShapeError("resize_map_bilinear: extents must be >= 1");
  Tensor out = Tensor::zeros({out_rows, out_cols});
  const double sr =
      out_rows > 1 ? static_cast<double>(in_rows - 1) / static_cast<double>(out_rows - 1) : 0.0;
  const double sc =
      out_cols > 1 ? static_cast<double>(in_cols - 1) / static_cast<double>(out_cols - 1) : 0.0;
  for (int64_t r = 0; r < out_rows; ++r) {
    const double u = static_cast<double>(r) * sr;
    const int64_t r0 = std::min(static_cast<int64_t>(u), in_rows - 1);
    const int64_t r1 = std::min(r0 + 1, in_rows - 1);
    const double fu = u - static_cast<double>(r0);
    for (int64_t c = 0; c < out_cols; ++c) {
      const double v = static_cast<double>(c) * sc;
      const int64_t c0 = std::min(static_cast<int64_t>(v), in_cols - 1);
      const int64_t c1 = std::min(c0 + 1, in_cols - 1);
      const double fv = v - static_cast<double>(c0);
      out.at(r, c) = map.at(r0, c0) * (1.0 - fu) * (1.0 - fv) + map.at(r0, c1) * (1.0 - fu) * fv +
                     map.at(r1, c0) * fu * (1.0 - fv) + map.at(r1, c1) * fu * fv;
    }
  }
  return out;
}

}  // namespace lavit
