#include "savos/losses.hpp"

#include <algorithm>
#include <cmath>

#include "savos/common.hpp"
#include "savos/warp.hpp"

namespace savos {

namespace {
constexpr double kBceEps = 1e-6;
}

void LossWeights::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("loss weights must be nonnegative");
  if (lambda1 + lambda2 <= 0.0) throw ConfigError("loss weights must not both be zero");
}

template <typename T>
Grid<T> occlusion_weight(const std::vector<Grid<T>>& visibles, int k) {
  require(!visibles.empty(), "occlusion_weight: no visible masks");
  require(k >= 0 && k < static_cast<int>(visibles.size()), "occlusion_weight: bad object index");
  Grid<T> sum(visibles[0].h, visibles[0].w, T(0));
  for (const auto& v : visibles) {
    require(v.same_shape(sum), "occlusion_weight: shape mismatch");
    for (std::size_t i = 0; i < sum.size(); ++i) {
      require(v.v[i] == T(0) || v.v[i] == T(1), "occlusion_weight: non-binary visible mask");
      sum.v[i] += v.v[i];
    }
  }
  Grid<T> w(sum.h, sum.w);
  for (std::size_t i = 0; i < w.size(); ++i) {
    require(sum.v[i] <= T(1), "occlusion_weight: visible masks overlap");
    w.v[i] = (T(1) - sum.v[i]) + visibles[k].v[i];
  }
  return w;
}

template <typename T>
T masked_bce(const Grid<T>& pred, const Grid<T>& target, const Grid<T>& weight) {
  require(pred.same_shape(target) && pred.same_shape(weight), "masked_bce: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (weight.v[i] == T(0)) continue;
    const double p = std::clamp(static_cast<double>(pred.v[i]), kBceEps, 1.0 - kBceEps);
    const double y = static_cast<double>(target.v[i]);
    acc += static_cast<double>(weight.v[i]) * -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return static_cast<T>(acc / static_cast<double>(pred.size()));
}

template <typename T>
Grid<T> masked_bce_grad_pred(const Grid<T>& pred, const Grid<T>& target, const Grid<T>& weight) {
  require(pred.same_shape(target) && pred.same_shape(weight), "masked_bce: shape mismatch");
  Grid<T> g(pred.h, pred.w, T(0));
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (weight.v[i] == T(0)) continue;
    const double p = static_cast<double>(pred.v[i]);
    if (p <= kBceEps || p >= 1.0 - kBceEps) continue;  // clamp region: flat
    const double y = static_cast<double>(target.v[i]);
    g.v[i] = static_cast<T>(static_cast<double>(weight.v[i]) * (-y / p + (1.0 - y) / (1.0 - p)) / n);
  }
  return g;
}

template <typename T>
T soft_iou_distance(const Grid<T>& a, const Grid<T>& b) {
  require(a.same_shape(b), "soft_iou_distance: shape mismatch");
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a.v[i]), y = static_cast<double>(b.v[i]);
    require(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0,
            "soft_iou_distance: values outside [0,1]");
    inter += x * y;
    uni += x + y - x * y;
  }
  if (uni == 0.0) return T(0);  // both empty: no disagreement to measure
  return static_cast<T>(1.0 - inter / uni);
}

template <typename T>
void soft_iou_distance_grads(const Grid<T>& a, const Grid<T>& b, Grid<T>& grad_a,
                             Grid<T>& grad_b) {
  require(a.same_shape(b), "soft_iou_distance: shape mismatch");
  grad_a = Grid<T>(a.h, a.w, T(0));
  grad_b = Grid<T>(a.h, a.w, T(0));
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a.v[i]), y = static_cast<double>(b.v[i]);
    inter += x * y;
    uni += x + y - x * y;
  }
  if (uni == 0.0) return;  // degenerate convention: zero distance, zero slope
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a.v[i]), y = static_cast<double>(b.v[i]);
    // d = 1 - I/U; dd/dx = (I*(1-y) - y*U) / U^2, symmetrically for y.
    grad_a.v[i] = static_cast<T>((inter * (1.0 - y) - y * uni) / (uni * uni));
    grad_b.v[i] = static_cast<T>((inter * (1.0 - x) - x * uni) / (uni * uni));
  }
}

template <typename T>
LossReport total_loss(const std::vector<ObjectPrediction<T>>& preds,
                      const std::vector<std::vector<Grid<T>>>& visibles,
                      const LossWeights& weights, std::vector<ObjectGrads<T>>* grads) {
  weights.validate();
  const int frames = static_cast<int>(visibles.size());
  require(frames >= 2, "total_loss: needs at least two frames");
  require(!preds.empty(), "total_loss: no predictions");
  const int num_objects = static_cast<int>(visibles[0].size());

  if (grads) {
    grads->assign(preds.size(), {});
    for (std::size_t j = 0; j < preds.size(); ++j) {
      (*grads)[j].masks.assign(preds[j].masks.size(),
                               Grid<T>(visibles[0][0].h, visibles[0][0].w, T(0)));
      (*grads)[j].motions.assign(preds[j].motions.size(),
                                 FlowFieldT<T>(visibles[0][0].h, visibles[0][0].w));
    }
  }

  LossReport report;
  for (std::size_t j = 0; j < preds.size(); ++j) {
    const auto& pred = preds[j];
    const int k = pred.object_index;
    require(k >= 0 && k < num_objects, "total_loss: object index out of range");
    require(static_cast<int>(pred.masks.size()) == frames &&
                static_cast<int>(pred.motions.size()) == frames,
            "total_loss: prediction length disagrees with the visible masks");

    for (int t = 1; t < frames; ++t) {
      const Grid<T>& prev_mask = pred.masks[t - 1];
      const FlowFieldT<T>& prev_motion = pred.motions[t - 1];
      const Grid<T> warped = forward_warp(prev_mask, prev_motion);
      const Grid<T> w = occlusion_weight(visibles[t], k);

      const double d_m = static_cast<double>(masked_bce(warped, visibles[t][k], w));
      const double d_c = static_cast<double>(soft_iou_distance(pred.masks[t], warped));
      report.l_m += d_m;
      report.l_c += d_c;
      report.per_frame.push_back({t, k, d_m, d_c});

      if (!grads) continue;
      Grid<T> g_warped = masked_bce_grad_pred(warped, visibles[t][k], w);
      for (auto& v : g_warped.v) v *= static_cast<T>(weights.lambda1);
      Grid<T> g_cur, g_warped_iou;
      soft_iou_distance_grads(pred.masks[t], warped, g_cur, g_warped_iou);
      for (std::size_t i = 0; i < g_warped.size(); ++i) {
        g_warped.v[i] += static_cast<T>(weights.lambda2) * g_warped_iou.v[i];
        (*grads)[j].masks[t].v[i] += static_cast<T>(weights.lambda2) * g_cur.v[i];
      }
      const WarpGrads<T> wg = forward_warp_vjp(prev_mask, prev_motion, g_warped);
      for (std::size_t i = 0; i < wg.mask.size(); ++i) {
        (*grads)[j].masks[t - 1].v[i] += wg.mask.v[i];
        (*grads)[j].motions[t - 1].dx.v[i] += wg.flow.dx.v[i];
        (*grads)[j].motions[t - 1].dy.v[i] += wg.flow.dy.v[i];
      }
    }
  }
  report.total = weights.lambda1 * report.l_m + weights.lambda2 * report.l_c;
  return report;
}

template <typename T>
Grid<T> merge_bidirectional(const Grid<T>& fwd_mask, const Grid<T>& fwd_alpha,
                            const Grid<T>& bwd_mask, const Grid<T>& bwd_alpha) {
  require(fwd_mask.same_shape(fwd_alpha) && fwd_mask.same_shape(bwd_mask) &&
              fwd_mask.same_shape(bwd_alpha),
          "merge_bidirectional: shape mismatch");
  Grid<T> out(fwd_mask.h, fwd_mask.w);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = static_cast<double>(fwd_alpha.v[i]) - static_cast<double>(bwd_alpha.v[i]);
    const double a = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.v[i] = static_cast<T>(a * fwd_mask.v[i] + (1.0 - a) * bwd_mask.v[i]);
  }
  return out;
}

template <typename T>
MergeGrads<T> merge_bidirectional_vjp(const Grid<T>& fwd_mask, const Grid<T>& fwd_alpha,
                                      const Grid<T>& bwd_mask, const Grid<T>& bwd_alpha,
                                      const Grid<T>& grad_out) {
  require(grad_out.same_shape(fwd_mask), "merge_bidirectional_vjp: grad shape mismatch");
  MergeGrads<T> g{Grid<T>(fwd_mask.h, fwd_mask.w), Grid<T>(fwd_mask.h, fwd_mask.w),
                  Grid<T>(fwd_mask.h, fwd_mask.w), Grid<T>(fwd_mask.h, fwd_mask.w)};
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const double z = static_cast<double>(fwd_alpha.v[i]) - static_cast<double>(bwd_alpha.v[i]);
    const double a = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    const double up = static_cast<double>(grad_out.v[i]);
    g.fwd_mask.v[i] = static_cast<T>(up * a);
    g.bwd_mask.v[i] = static_cast<T>(up * (1.0 - a));
    const double d_alpha =
        up * (static_cast<double>(fwd_mask.v[i]) - static_cast<double>(bwd_mask.v[i])) * a *
        (1.0 - a);
    g.fwd_alpha.v[i] = static_cast<T>(d_alpha);
    g.bwd_alpha.v[i] = static_cast<T>(-d_alpha);
  }
  return g;
}

#define SAVOS_INSTANTIATE_LOSSES(T)                                                          \
  template Grid<T> occlusion_weight<T>(const std::vector<Grid<T>>&, int);                    \
  template T masked_bce<T>(const Grid<T>&, const Grid<T>&, const Grid<T>&);                  \
  template Grid<T> masked_bce_grad_pred<T>(const Grid<T>&, const Grid<T>&, const Grid<T>&);  \
  template T soft_iou_distance<T>(const Grid<T>&, const Grid<T>&);                           \
  template void soft_iou_distance_grads<T>(const Grid<T>&, const Grid<T>&, Grid<T>&,         \
                                           Grid<T>&);                                        \
  template LossReport total_loss<T>(const std::vector<ObjectPrediction<T>>&,                 \
                                    const std::vector<std::vector<Grid<T>>>&,                \
                                    const LossWeights&, std::vector<ObjectGrads<T>>*);       \
  template Grid<T> merge_bidirectional<T>(const Grid<T>&, const Grid<T>&, const Grid<T>&,    \
                                          const Grid<T>&);                                   \
  template MergeGrads<T> merge_bidirectional_vjp<T>(const Grid<T>&, const Grid<T>&,          \
                                                    const Grid<T>&, const Grid<T>&,          \
                                                    const Grid<T>&);

SAVOS_INSTANTIATE_LOSSES(float)
SAVOS_INSTANTIATE_LOSSES(double)

#undef SAVOS_INSTANTIATE_LOSSES

}  // namespace savos
