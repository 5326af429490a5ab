#pragma once

#include <vector>

#include "savos/grid.hpp"

namespace savos {

struct LossWeights {
  double lambda1 = 1.0;  // mask-transport term
  double lambda2 = 1.0;  // temporal-consistency term

  void validate() const;  // nonnegative, not both zero
};

/// Diagnostics for one (target frame, object) pair. d_m compares the warped
/// previous prediction against the visible mask at frame t; d_c compares the
/// current prediction against that same warped field. t runs over 1..T-1.
struct FrameLoss {
  int t = 0;
  int k = 0;
  double d_m = 0.0;
  double d_c = 0.0;
};

struct LossReport {
  double total = 0.0;
  double l_m = 0.0;
  double l_c = 0.0;
  std::vector<FrameLoss> per_frame;
};

/// W = (1 - sum_i V^i) + V^k: on with the background and object k's own
/// visible pixels, off wherever another object is visible. Inputs must be
/// binary and pairwise disjoint.
template <typename T>
Grid<T> occlusion_weight(const std::vector<Grid<T>>& visibles, int k);

/// Mean over all pixels of weight * BCE(pred, target), with predictions
/// clamped to [1e-6, 1 - 1e-6]. Zero-weight pixels contribute nothing and
/// receive zero gradient.
template <typename T>
T masked_bce(const Grid<T>& pred, const Grid<T>& target, const Grid<T>& weight);

template <typename T>
Grid<T> masked_bce_grad_pred(const Grid<T>& pred, const Grid<T>& target, const Grid<T>& weight);

/// 1 - sum(a*b) / sum(a + b - a*b); exactly symmetric; 0 when both fields are
/// identically zero (in that degenerate case the gradient is zero too).
template <typename T>
T soft_iou_distance(const Grid<T>& a, const Grid<T>& b);

template <typename T>
void soft_iou_distance_grads(const Grid<T>& a, const Grid<T>& b, Grid<T>& grad_a,
                             Grid<T>& grad_b);

/// One object's predicted amodal track: per-frame mask probabilities and the
/// dense amodal motion carrying frame t onto frame t+1. object_index selects
/// the matching column of the visible-mask array.
template <typename T>
struct ObjectPrediction {
  int object_index = 0;
  std::vector<Grid<T>> masks;          // [T]
  std::vector<FlowFieldT<T>> motions;  // [T] (the last entry is unused)
};

template <typename T>
struct ObjectGrads {
  std::vector<Grid<T>> masks;
  std::vector<FlowFieldT<T>> motions;
};

/// The self-supervised objective. For every object and target frame t:
///   H_t   = forward_warp(mask_{t-1}, motion_{t-1})
///   d_m,t = masked_bce(H_t, V_t^k, occlusion_weight(V_t, k))
///   d_c,t = soft_iou_distance(mask_t, H_t)
/// l_m sums d_m, l_c sums d_c, total = lambda1*l_m + lambda2*l_c.
/// When `grads` is given it is filled with d(total)/d(mask) and
/// d(total)/d(motion), aligned with `preds`.
template <typename T>
LossReport total_loss(const std::vector<ObjectPrediction<T>>& preds,
                      const std::vector<std::vector<Grid<T>>>& visibles,  // [T][K]
                      const LossWeights& weights,
                      std::vector<ObjectGrads<T>>* grads = nullptr);

/// Per-pixel softmax over the two alpha logits blends the two masks:
/// out = sigma(fa - ba) * fwd + (1 - sigma(fa - ba)) * bwd.
template <typename T>
Grid<T> merge_bidirectional(const Grid<T>& fwd_mask, const Grid<T>& fwd_alpha,
                            const Grid<T>& bwd_mask, const Grid<T>& bwd_alpha);

template <typename T>
struct MergeGrads {
  Grid<T> fwd_mask, fwd_alpha, bwd_mask, bwd_alpha;
};

template <typename T>
MergeGrads<T> merge_bidirectional_vjp(const Grid<T>& fwd_mask, const Grid<T>& fwd_alpha,
                                      const Grid<T>& bwd_mask, const Grid<T>& bwd_alpha,
                                      const Grid<T>& grad_out);

}  // namespace savos
