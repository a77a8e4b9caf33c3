#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lavit/tensor.hpp"

namespace lavit {

/// Ground-truth region in patch-grid coordinates, half-open.
struct BBox {
  int64_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;

  BBox() = default;
  BBox(int64_t r0, int64_t c0, int64_t r1, int64_t c1) : row0(r0), col0(c0), row1(r1), col1(c1) {}

  void validate(int64_t grid_rows, int64_t grid_cols) const {
    if (!(0 <= row0 && row0 < row1 && row1 <= grid_rows && 0 <= col0 && col0 < col1 &&
          col1 <= grid_cols))
      throw ValueError("BBox: invalid box for grid");
  }
  bool covers_grid(int64_t grid_rows, int64_t grid_cols) const {
    return row0 == 0 && col0 == 0 && row1 == grid_rows && col1 == grid_cols;
  }
  bool contains(int64_t r, int64_t c) const {
    return row0 <= r && r < row1 && col0 <= c && c < col1;
  }
};

/// Per-sample white-box supervision extracted from attention records.
struct TraceRecord {
  std::vector<double> gaze;          // S_j per image patch
  std::vector<double> a_traj;        // min-max normalized gaze in [0, 1]
  std::vector<double> sparse_target; // top-k renormalized distribution
  double focus_score = 0.0;
  bool degenerate = false;           // zero total mass or all-zero trajectory
};

/// Layer/head/text-query averaged attention mass per image position:
/// S_j = 1/(L*H*|T|) sum_l sum_h sum_{i in T} A^(l,h)(i, j).
/// `attn` holds L*H dense [seq x seq] row-major maps.
std::vector<double> aggregate_gaze(const std::vector<std::vector<double>>& attn, int64_t seq,
                                   const std::vector<int64_t>& text_positions,
                                   const std::vector<int64_t>& image_positions);

/// (S_j - min S) / (max S - min S + eps_norm); constant input collapses to zeros.
std::vector<double> minmax_normalize(const std::vector<double>& gaze, double eps_norm = 1e-8);

/// Keeps the k largest entries (ties broken by lower index), renormalized to
/// sum 1. An all-zero input yields a uniform distribution over the first k
/// entries with `degenerate` set.
std::vector<double> topk_sparsify(const std::vector<double>& a_traj, int64_t k,
                                  bool* degenerate = nullptr);

/// Fraction of total trajectory mass inside the box (Def of the visual
/// focusing score). Zero total mass is a degenerate-trace error.
double focusing_score(const std::vector<double>& a_traj, int64_t grid_rows, int64_t grid_cols,
                      const BBox& bbox);

/// Corner-aligned bilinear resampling; identity when target matches source.
Tensor resize_map_bilinear(const Tensor& map, int64_t out_rows, int64_t out_cols);

}  // namespace lavit
