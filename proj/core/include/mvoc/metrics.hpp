#pragma once

#include <cstdint>
#include <vector>

#include "mvoc/tensor.hpp"

namespace mvoc {

// Per-scene label stack: one label per pixel across all V views. Metrics
// treat the concatenated pixels as a single clustering problem so that
// cross-view identity swaps are penalized.
struct MaskStack {
  int V = 0, H = 0, W = 0;
  std::vector<int> ids;  // V*H*W, view-major

  std::int64_t numel() const { return static_cast<std::int64_t>(V) * H * W; }
  int at(int v, std::int64_t p) const {
    return ids[static_cast<std::size_t>(v) * H * W + static_cast<std::size_t>(p)];
  }
  static MaskStack from_bytes(const std::vector<std::vector<std::uint8_t>>& masks, int h, int w);
};

enum class AriMode { All, Objects };

// Adjusted Rand index over concatenated views. Mode Objects restricts to
// pixels whose ground truth is non-background. If the adjustment denominator
// vanishes (e.g. both sides a single cluster), returns 1 when the two
// partitions are identical up to relabeling and 0 otherwise.
double ari(const MaskStack& pred, const MaskStack& truth, AriMode mode);

// Mean IoU under the optimal one-to-one slot-to-segment assignment
// (background counts as a segment). Unmatched ground-truth segments score 0;
// empty predicted slots are excluded from the assignment pool. Exhaustive
// search for small problems, Hungarian assignment otherwise.
double miou(const MaskStack& pred, const MaskStack& truth);

double recon_error(const std::vector<Tensor>& pred_images,
                   const std::vector<Tensor>& true_images);

// Converts per-view patch attention maps ([N, K] with N = grid*grid,
// row-major patches) into pixel masks: bilinear upsampling to out_h x out_w
// followed by per-pixel argmax over slots (first slot wins ties).
MaskStack masks_from_attention(const std::vector<Tensor>& attention, int grid, int out_h,
                               int out_w);

// Maximum-total-IoU assignment value for a given IoU matrix [rows=truth
// segments, cols=predicted slots]; exposed for oracle comparison tests.
double max_assignment_total(const std::vector<std::vector<double>>& iou, bool force_hungarian);

}  // namespace mvoc
