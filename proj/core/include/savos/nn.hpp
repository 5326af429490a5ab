#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "savos/common.hpp"
#include "savos/grid.hpp"
#include "savos/rng.hpp"

namespace savos {

/// Channel-major dense activation tensor (C x H x W), row-major within a
/// channel.
template <typename T>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, T fill = T{})
      : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, fill) {}

  T& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  const T& at(int ch, int y, int x) const {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Copies channels [from, from+n) into a new tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int from, int n);

template <typename T>
Tensor<T> tensor_from_grid(const Grid<T>& g);

template <typename T>
Grid<T> grid_from_channel(const Tensor<T>& x, int ch);

/// One learnable array plus its gradient accumulator, addressable by a
/// stable name for checkpointing and optimizer state.
template <typename T>
struct ParamRef {
  std::string name;
  std::vector<T>* value = nullptr;
  std::vector<T>* grad = nullptr;
};

template <typename T>
using ParamRegistry = std::vector<ParamRef<T>>;

template <typename T>
void zero_grads(const ParamRegistry<T>& params);

/// Euclidean norm over every gradient entry in the registry.
template <typename T>
double grad_norm(const ParamRegistry<T>& params);

/// 2-D convolution, stride s, symmetric zero padding p. Weights are stored
/// flat as [out_c][in_c][k][k].
template <typename T>
struct Conv2d {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
  std::vector<T> w, b;
  std::vector<T> gw, gb;

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_);

  void init(Rng& rng);  // fan-in scaled uniform weights, zero bias
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);

  int out_h(int in_h) const { return (in_h + 2 * pad - k) / stride + 1; }
  int out_w(int in_w) const { return (in_w + 2 * pad - k) / stride + 1; }

  Tensor<T> forward(const Tensor<T>& x) const;
  /// Accumulates gw/gb and returns the gradient with respect to x.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy);
};

/// Transposed convolution: the exact adjoint of Conv2d with the same
/// geometry on outputs of size stride*N, so a (k=3, s=2, p=1) pair maps
/// N -> 2N and back (output padding is fixed at stride-1). Weights are
/// stored flat as [in_c][out_c][k][k] (the underlying conv's layout).
template <typename T>
struct ConvT2d {
  int in_c = 0, out_c = 0, k = 3, stride = 2, pad = 1;
  std::vector<T> w, b;
  std::vector<T> gw, gb;

  ConvT2d() = default;
  ConvT2d(int in_channels, int out_channels, int kernel, int stride_, int pad_);

  void init(Rng& rng);
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);

  int out_h(int in_h) const { return (in_h - 1) * stride - 2 * pad + k + (stride - 1); }
  int out_w(int in_w) const { return (in_w - 1) * stride - 2 * pad + k + (stride - 1); }

  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy);
};

template <typename T>
void relu_inplace(Tensor<T>& x);
/// dx = dy gated by the stored post-activation y.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy);

template <typename T>
void sigmoid_inplace(Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy);

template <typename T>
void tanh_inplace(Tensor<T>& x);
template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy);

/// Adam with optional global-norm gradient clipping. Moment buffers align
/// with the registry by position, so the registry must be rebuilt in the
/// same order every time (layer construction order guarantees this).
template <typename T>
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip_norm = 0.0;  // <= 0 disables clipping
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> m, v;

  void step(const ParamRegistry<T>& params);
};

}  // namespace savos
