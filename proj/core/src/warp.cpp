#include "savos/warp.hpp"

#include <algorithm>
#include <cmath>

#include "savos/common.hpp"
#include "savos/rng.hpp"

namespace savos {

namespace {

template <typename T>
void check_inputs(const Grid<T>& mask, const FlowFieldT<T>& flow) {
  require(flow.dx.same_shape(flow.dy), "forward_warp: flow channels disagree in shape");
  require(mask.h == flow.h() && mask.w == flow.w(), "forward_warp: mask/flow shape mismatch");
  for (std::size_t i = 0; i < flow.dx.size(); ++i)
    require(std::isfinite(flow.dx.v[i]) && std::isfinite(flow.dy.v[i]),
            "forward_warp: non-finite flow");
  // Small slack keeps finite-difference probes of boundary values legal.
  for (std::size_t i = 0; i < mask.size(); ++i)
    require(mask.v[i] >= T(-1e-3) && mask.v[i] <= T(1) + T(1e-3),
            "forward_warp: mask outside [0,1]");
}

// Pre-clamp accumulation of the bilinear splat.
template <typename T>
Grid<T> accumulate(const Grid<T>& mask, const FlowFieldT<T>& flow) {
  Grid<T> acc(mask.h, mask.w, T(0));
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      const T m = mask.at(y, x);
      if (m == T(0)) continue;
      // Clamped before the int cast: a target anywhere past the border band
      // contributes nothing either way, and casting an unbounded coordinate
      // is undefined.
      const T tx = std::clamp(T(x) + flow.dx.at(y, x), T(-2), T(mask.w + 1));
      const T ty = std::clamp(T(y) + flow.dy.at(y, x), T(-2), T(mask.h + 1));
      const int x0 = static_cast<int>(std::floor(tx));
      const int y0 = static_cast<int>(std::floor(ty));
      const T fx = tx - T(x0), fy = ty - T(y0);
      const T w[4] = {(T(1) - fx) * (T(1) - fy), fx * (T(1) - fy), (T(1) - fx) * fy, fx * fy};
      const int cx[4] = {x0, x0 + 1, x0, x0 + 1};
      const int cy[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int c = 0; c < 4; ++c) {
        if (cx[c] < 0 || cx[c] >= mask.w || cy[c] < 0 || cy[c] >= mask.h) continue;
        acc.at(cy[c], cx[c]) += m * w[c];
      }
    }
  return acc;
}

}  // namespace

template <typename T>
Grid<T> forward_warp(const Grid<T>& mask, const FlowFieldT<T>& flow) {
  check_inputs(mask, flow);
  Grid<T> out = accumulate(mask, flow);
  for (auto& v : out.v) v = std::min(v, T(1));
  return out;
}

template <typename T>
WarpGrads<T> forward_warp_vjp(const Grid<T>& mask, const FlowFieldT<T>& flow,
                              const Grid<T>& grad_out) {
  check_inputs(mask, flow);
  require(grad_out.same_shape(mask), "forward_warp_vjp: grad shape mismatch");
  const Grid<T> acc = accumulate(mask, flow);
  Grid<T> g(mask.h, mask.w, T(0));  // gradient at the pre-clamp accumulator
  for (std::size_t i = 0; i < g.size(); ++i)
    g.v[i] = acc.v[i] <= T(1) ? grad_out.v[i] : T(0);

  WarpGrads<T> grads{Grid<T>(mask.h, mask.w, T(0)), FlowFieldT<T>(mask.h, mask.w)};
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      const T m = mask.at(y, x);
      const T tx = std::clamp(T(x) + flow.dx.at(y, x), T(-2), T(mask.w + 1));
      const T ty = std::clamp(T(y) + flow.dy.at(y, x), T(-2), T(mask.h + 1));
      const int x0 = static_cast<int>(std::floor(tx));
      const int y0 = static_cast<int>(std::floor(ty));
      const T fx = tx - T(x0), fy = ty - T(y0);
      const T w[4] = {(T(1) - fx) * (T(1) - fy), fx * (T(1) - fy), (T(1) - fx) * fy, fx * fy};
      const T dwdx[4] = {-(T(1) - fy), T(1) - fy, -fy, fy};
      const T dwdy[4] = {-(T(1) - fx), -fx, T(1) - fx, fx};
      const int cx[4] = {x0, x0 + 1, x0, x0 + 1};
      const int cy[4] = {y0, y0, y0 + 1, y0 + 1};
      T gm = T(0), gdx = T(0), gdy = T(0);
      for (int c = 0; c < 4; ++c) {
        if (cx[c] < 0 || cx[c] >= mask.w || cy[c] < 0 || cy[c] >= mask.h) continue;
        const T up = g.at(cy[c], cx[c]);
        gm += up * w[c];
        gdx += up * m * dwdx[c];
        gdy += up * m * dwdy[c];
      }
      grads.mask.at(y, x) = gm;
      grads.flow.dx.at(y, x) = gdx;
      grads.flow.dy.at(y, x) = gdy;
    }
  return grads;
}

template Grid<float> forward_warp<float>(const Grid<float>&, const FlowFieldT<float>&);
template Grid<double> forward_warp<double>(const Grid<double>&, const FlowFieldT<double>&);
template WarpGrads<float> forward_warp_vjp<float>(const Grid<float>&, const FlowFieldT<float>&,
                                                  const Grid<float>&);
template WarpGrads<double> forward_warp_vjp<double>(const Grid<double>&,
                                                    const FlowFieldT<double>&,
                                                    const Grid<double>&);

double grad_check(const GridD& mask, const FlowFieldT<double>& flow, double epsilon) {
  require(epsilon >= 1e-7 && epsilon <= 1e-3, "grad_check: epsilon out of [1e-7, 1e-3]");
  // Fixed pseudo-random linear functional L = sum(c * warp(mask, flow)).
  Rng rng(splitmix64(0x77A5 ^ (static_cast<std::uint64_t>(mask.h) << 16 | mask.w)));
  GridD c(mask.h, mask.w);
  for (auto& v : c.v) v = rng.uniform(-1.0, 1.0);

  const auto loss = [&](const GridD& m, const FlowFieldT<double>& f) {
    const GridD out = forward_warp(m, f);
    double L = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) L += c.v[i] * out.v[i];
    return L;
  };
  const WarpGrads<double> analytic = forward_warp_vjp(mask, flow, c);

  // A probe that straddles a kink — a bilinear cell boundary or the clamp
  // boundary — compares two different linear pieces, so those components are
  // excluded rather than reported as gradient errors.
  const GridD acc = accumulate(mask, flow);
  const double guard = 8.0 * epsilon;
  const auto clamp_safe = [&](int y, int x) {
    const double tx = x + flow.dx.at(y, x), ty = y + flow.dy.at(y, x);
    const int x0 = static_cast<int>(std::floor(tx)), y0 = static_cast<int>(std::floor(ty));
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const int cy = y0 + dy, cx = x0 + dx;
        if (cy < 0 || cy >= mask.h || cx < 0 || cx >= mask.w) continue;
        if (std::abs(acc.at(cy, cx) - 1.0) < guard) return false;
      }
    return true;
  };
  const auto cell_safe = [&](double t) {
    const double frac = t - std::floor(t);
    return frac > guard && frac < 1.0 - guard;
  };

  double worst = 0.0;
  const auto compare = [&](double a, double n) {
    const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1.0});
    worst = std::max(worst, rel);
  };
  GridD m = mask;
  FlowFieldT<double> f = flow;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!clamp_safe(y, x)) continue;
      const std::size_t i = static_cast<std::size_t>(y) * m.w + x;
      const double keep = m.v[i];
      m.v[i] = keep + epsilon;
      const double up = loss(m, f);
      m.v[i] = keep - epsilon;
      const double dn = loss(m, f);
      m.v[i] = keep;
      compare(analytic.mask.v[i], (up - dn) / (2 * epsilon));
    }
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!clamp_safe(y, x)) continue;
      const std::size_t i = static_cast<std::size_t>(y) * m.w + x;
      if (cell_safe(x + f.dx.v[i])) {
        const double keep = f.dx.v[i];
        f.dx.v[i] = keep + epsilon;
        const double up = loss(m, f);
        f.dx.v[i] = keep - epsilon;
        const double dn = loss(m, f);
        f.dx.v[i] = keep;
        compare(analytic.flow.dx.v[i], (up - dn) / (2 * epsilon));
      }
      if (cell_safe(y + f.dy.v[i])) {
        const double keep = f.dy.v[i];
        f.dy.v[i] = keep + epsilon;
        const double up = loss(m, f);
        f.dy.v[i] = keep - epsilon;
        const double dn = loss(m, f);
        f.dy.v[i] = keep;
        compare(analytic.flow.dy.v[i], (up - dn) / (2 * epsilon));
      }
    }
  return worst;
}

}  // namespace savos
