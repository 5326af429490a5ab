#pragma once

#include "savos/grid.hpp"

namespace savos {

/// Forward (push) warp: each source pixel's mass lands at its flow-displaced
/// position, split bilinearly over the four surrounding grid points. The
/// accumulated field is clamped to [0, 1]; mass pushed off the canvas is
/// dropped. Differentiable in both the mask and the flow.
template <typename T>
Grid<T> forward_warp(const Grid<T>& mask, const FlowFieldT<T>& flow);

template <typename T>
struct WarpGrads {
  Grid<T> mask;
  FlowFieldT<T> flow;
};

/// Vector-Jacobian product of forward_warp: gradients of a scalar with
/// respect to the mask and flow, given its gradient at the output. The clamp
/// passes gradient wherever the accumulated (pre-clamp) value is <= 1.
template <typename T>
WarpGrads<T> forward_warp_vjp(const Grid<T>& mask, const FlowFieldT<T>& flow,
                              const Grid<T>& grad_out);

/// Compares the analytic gradients of a fixed pseudo-random linear functional
/// of forward_warp against central finite differences over the mask and flow
/// components. Components whose probe would straddle a genuine kink — a
/// bilinear cell boundary or the clamp boundary — are excluded, since the
/// two-sided difference is meaningless there. Returns the worst relative
/// error, with rel(a, n) = |a - n| / max(|a|, |n|, 1).
double grad_check(const GridD& mask, const FlowFieldT<double>& flow, double epsilon);

}  // namespace savos
