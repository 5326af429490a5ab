#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "savos/common.hpp"

namespace savos {

/// Dense 2-D field, row-major. Pixel (x, y) has its center at integer
/// coordinates (x, y); x indexes columns, y indexes rows.
template <typename T>
struct Grid {
  int h = 0, w = 0;
  std::vector<T> v;

  Grid() = default;
  Grid(int h_, int w_, T fill = T{}) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

  T& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }

  bool operator==(const Grid& o) const { return h == o.h && w == o.w && v == o.v; }
};

using MaskU8 = Grid<std::uint8_t>;
using GridF = Grid<float>;
using GridD = Grid<double>;

/// Dense per-pixel displacement field in pixels/frame.
template <typename T>
struct FlowFieldT {
  Grid<T> dx, dy;

  FlowFieldT() = default;
  FlowFieldT(int h, int w, T fx = T{}, T fy = T{}) : dx(h, w, fx), dy(h, w, fy) {}

  int h() const { return dx.h; }
  int w() const { return dx.w; }
  bool same_shape(const FlowFieldT& o) const { return dx.same_shape(o.dx); }
};

using FlowField = FlowFieldT<float>;

template <typename T, typename U>
Grid<T> grid_cast(const Grid<U>& g) {
  Grid<T> out(g.h, g.w);
  for (std::size_t i = 0; i < g.size(); ++i) out.v[i] = static_cast<T>(g.v[i]);
  return out;
}

inline std::size_t mask_area(const MaskU8& m) {
  std::size_t n = 0;
  for (auto p : m.v) n += (p != 0);
  return n;
}

/// pointwise a <= b
inline bool mask_subset(const MaskU8& a, const MaskU8& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.v[i] && !b.v[i]) return false;
  return true;
}

inline bool masks_disjoint(const MaskU8& a, const MaskU8& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.v[i] && b.v[i]) return false;
  return true;
}

/// Translate by an integer offset; pixels shifted outside are dropped,
/// vacated pixels are zero.
inline MaskU8 mask_shift(const MaskU8& m, int dx, int dy) {
  MaskU8 out(m.h, m.w, 0);
  for (int y = 0; y < m.h; ++y) {
    const int ty = y + dy;
    if (ty < 0 || ty >= m.h) continue;
    for (int x = 0; x < m.w; ++x) {
      if (!m.at(y, x)) continue;
      const int tx = x + dx;
      if (tx < 0 || tx >= m.w) continue;
      out.at(ty, tx) = 1;
    }
  }
  return out;
}

}  // namespace savos
