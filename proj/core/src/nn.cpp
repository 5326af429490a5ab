#include "savos/nn.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace savos {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unrolls x into a (in_c*k*k) x (oh*ow) matrix with zero padding.
template <typename T>
void im2col(const Tensor<T>& x, int k, int s, int p, int oh, int ow, std::vector<T>& cols) {
  const std::size_t rows = static_cast<std::size_t>(x.c) * k * k;
  const std::size_t out = static_cast<std::size_t>(oh) * ow;
  cols.assign(rows * out, T(0));
  std::size_t r = 0;
  for (int ic = 0; ic < x.c; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++r) {
        T* dst = cols.data() + r * out;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= x.h) continue;
          const T* src = &x.at(ic, iy, 0);
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < x.w) dst[static_cast<std::size_t>(oy) * ow + ox] = src[ix];
          }
        }
      }
}

// Adjoint of im2col: scatter-adds the column matrix back onto the image.
template <typename T>
void col2im(const std::vector<T>& cols, int k, int s, int p, int oh, int ow, Tensor<T>& x) {
  const std::size_t out = static_cast<std::size_t>(oh) * ow;
  std::size_t r = 0;
  for (int ic = 0; ic < x.c; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++r) {
        const T* src = cols.data() + r * out;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= x.h) continue;
          T* dst = &x.at(ic, iy, 0);
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < x.w) dst[ix] += src[static_cast<std::size_t>(oy) * ow + ox];
          }
        }
      }
}

template <typename T>
void uniform_fill(std::vector<T>& v, Rng& rng, double bound) {
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.h == b.h && a.w == b.w, "concat_channels: spatial shape mismatch");
  Tensor<T> out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int from, int n) {
  require(from >= 0 && n >= 0 && from + n <= x.c, "slice_channels: bad channel range");
  Tensor<T> out(n, x.h, x.w);
  std::copy(x.v.begin() + static_cast<std::ptrdiff_t>(from * x.plane()),
            x.v.begin() + static_cast<std::ptrdiff_t>((from + n) * x.plane()), out.v.begin());
  return out;
}

template <typename T>
Tensor<T> tensor_from_grid(const Grid<T>& g) {
  Tensor<T> out(1, g.h, g.w);
  std::copy(g.v.begin(), g.v.end(), out.v.begin());
  return out;
}

template <typename T>
Grid<T> grid_from_channel(const Tensor<T>& x, int ch) {
  require(ch >= 0 && ch < x.c, "grid_from_channel: bad channel");
  Grid<T> out(x.h, x.w);
  std::copy(x.v.begin() + static_cast<std::ptrdiff_t>(ch * x.plane()),
            x.v.begin() + static_cast<std::ptrdiff_t>((ch + 1) * x.plane()), out.v.begin());
  return out;
}

template <typename T>
void zero_grads(const ParamRegistry<T>& params) {
  for (const auto& p : params) std::fill(p.grad->begin(), p.grad->end(), T(0));
}

template <typename T>
double grad_norm(const ParamRegistry<T>& params) {
  double s = 0;
  for (const auto& p : params)
    for (const T g : *p.grad) s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_)
    : in_c(in_channels), out_c(out_channels), k(kernel), stride(stride_), pad(pad_) {
  const std::size_t n = static_cast<std::size_t>(out_c) * in_c * k * k;
  w.assign(n, T(0));
  gw.assign(n, T(0));
  b.assign(out_c, T(0));
  gb.assign(out_c, T(0));
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  uniform_fill(w, rng, 1.0 / std::sqrt(double(in_c) * k * k));
  std::fill(b.begin(), b.end(), T(0));
}

template <typename T>
void Conv2d<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  reg.push_back({prefix + ".w", &w, &gw});
  reg.push_back({prefix + ".b", &b, &gb});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  require(x.c == in_c, "conv: input channel mismatch");
  const int oh = out_h(x.h), ow_ = out_w(x.w);
  require(oh > 0 && ow_ > 0, "conv: input too small");
  std::vector<T> cols;
  im2col(x, k, stride, pad, oh, ow_, cols);
  const std::size_t rows = static_cast<std::size_t>(in_c) * k * k;
  const std::size_t out = static_cast<std::size_t>(oh) * ow_;
  Tensor<T> y(out_c, oh, ow_);
  Eigen::Map<MatR<T>> ym(y.v.data(), out_c, static_cast<Eigen::Index>(out));
  Eigen::Map<const MatR<T>> wm(w.data(), out_c, static_cast<Eigen::Index>(rows));
  Eigen::Map<const MatR<T>> cm(cols.data(), static_cast<Eigen::Index>(rows),
                               static_cast<Eigen::Index>(out));
  ym.noalias() = wm * cm;
  for (int oc = 0; oc < out_c; ++oc) ym.row(oc).array() += b[oc];
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy) {
  const int oh = out_h(x.h), ow_ = out_w(x.w);
  require(dy.c == out_c && dy.h == oh && dy.w == ow_, "conv backward: grad shape mismatch");
  std::vector<T> cols;
  im2col(x, k, stride, pad, oh, ow_, cols);
  const std::size_t rows = static_cast<std::size_t>(in_c) * k * k;
  const std::size_t out = static_cast<std::size_t>(oh) * ow_;
  Eigen::Map<const MatR<T>> dym(dy.v.data(), out_c, static_cast<Eigen::Index>(out));
  Eigen::Map<const MatR<T>> cm(cols.data(), static_cast<Eigen::Index>(rows),
                               static_cast<Eigen::Index>(out));
  Eigen::Map<MatR<T>> gwm(gw.data(), out_c, static_cast<Eigen::Index>(rows));
  gwm.noalias() += dym * cm.transpose();
  // Summed by hand: Eigen's reduction order shifts with buffer alignment,
  // which costs bitwise reproducibility across otherwise identical runs.
  for (int oc = 0; oc < out_c; ++oc) {
    const T* plane = &dy.at(oc, 0, 0);
    T s = 0;
    for (std::size_t i = 0; i < dy.plane(); ++i) s += plane[i];
    gb[oc] += s;
  }

  std::vector<T> dcols(rows * out);
  Eigen::Map<MatR<T>> dcm(dcols.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(out));
  Eigen::Map<const MatR<T>> wm(w.data(), out_c, static_cast<Eigen::Index>(rows));
  dcm.noalias() = wm.transpose() * dym;
  Tensor<T> dx(in_c, x.h, x.w);
  col2im(dcols, k, stride, pad, oh, ow_, dx);
  return dx;
}

template <typename T>
ConvT2d<T>::ConvT2d(int in_channels, int out_channels, int kernel, int stride_, int pad_)
    : in_c(in_channels), out_c(out_channels), k(kernel), stride(stride_), pad(pad_) {
  const std::size_t n = static_cast<std::size_t>(in_c) * out_c * k * k;
  w.assign(n, T(0));
  gw.assign(n, T(0));
  b.assign(out_c, T(0));
  gb.assign(out_c, T(0));
}

template <typename T>
void ConvT2d<T>::init(Rng& rng) {
  uniform_fill(w, rng, 1.0 / std::sqrt(double(in_c) * k * k));
  std::fill(b.begin(), b.end(), T(0));
}

template <typename T>
void ConvT2d<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  reg.push_back({prefix + ".w", &w, &gw});
  reg.push_back({prefix + ".b", &b, &gb});
}

template <typename T>
Tensor<T> ConvT2d<T>::forward(const Tensor<T>& x) const {
  require(x.c == in_c, "tconv: input channel mismatch");
  const int oh = out_h(x.h), ow_ = out_w(x.w);
  require(oh > 0 && ow_ > 0, "tconv: input too small");
  // y = adjoint of the (out_c -> in_c) convolution applied to x
  const std::size_t rows = static_cast<std::size_t>(out_c) * k * k;
  const std::size_t out = static_cast<std::size_t>(x.h) * x.w;
  std::vector<T> dcols(rows * out);
  Eigen::Map<MatR<T>> dcm(dcols.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(out));
  Eigen::Map<const MatR<T>> wm(w.data(), in_c, static_cast<Eigen::Index>(rows));
  Eigen::Map<const MatR<T>> xm(x.v.data(), in_c, static_cast<Eigen::Index>(out));
  dcm.noalias() = wm.transpose() * xm;
  Tensor<T> y(out_c, oh, ow_);
  col2im(dcols, k, stride, pad, x.h, x.w, y);
  for (int oc = 0; oc < out_c; ++oc) {
    T* plane = &y.at(oc, 0, 0);
    for (std::size_t i = 0; i < y.plane(); ++i) plane[i] += b[oc];
  }
  return y;
}

template <typename T>
Tensor<T> ConvT2d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy) {
  const int oh = out_h(x.h), ow_ = out_w(x.w);
  require(dy.c == out_c && dy.h == oh && dy.w == ow_, "tconv backward: grad shape mismatch");
  const std::size_t rows = static_cast<std::size_t>(out_c) * k * k;
  const std::size_t out = static_cast<std::size_t>(x.h) * x.w;
  std::vector<T> cols;
  im2col(dy, k, stride, pad, x.h, x.w, cols);
  Eigen::Map<const MatR<T>> cm(cols.data(), static_cast<Eigen::Index>(rows),
                               static_cast<Eigen::Index>(out));
  Eigen::Map<const MatR<T>> xm(x.v.data(), in_c, static_cast<Eigen::Index>(out));
  Eigen::Map<MatR<T>> gwm(gw.data(), in_c, static_cast<Eigen::Index>(rows));
  gwm.noalias() += xm * cm.transpose();
  for (int oc = 0; oc < out_c; ++oc) {
    const T* plane = &dy.at(oc, 0, 0);
    T s = 0;
    for (std::size_t i = 0; i < dy.plane(); ++i) s += plane[i];
    gb[oc] += s;
  }
  Tensor<T> dx(in_c, x.h, x.w);
  Eigen::Map<MatR<T>> dxm(dx.v.data(), in_c, static_cast<Eigen::Index>(out));
  Eigen::Map<const MatR<T>> wm(w.data(), in_c, static_cast<Eigen::Index>(rows));
  dxm.noalias() = wm * cm;
  return dx;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.v) v = v > T(0) ? v : T(0);
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(dy.c, dy.h, dy.w);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.v[i] = y.v[i] > T(0) ? dy.v[i] : T(0);
  return dx;
}

template <typename T>
void sigmoid_inplace(Tensor<T>& x) {
  for (auto& v : x.v) {
    const double z = static_cast<double>(v);
    v = static_cast<T>(z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
  }
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(dy.c, dy.h, dy.w);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.v[i] = dy.v[i] * y.v[i] * (T(1) - y.v[i]);
  return dx;
}

template <typename T>
void tanh_inplace(Tensor<T>& x) {
  for (auto& v : x.v) v = static_cast<T>(std::tanh(static_cast<double>(v)));
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(dy.c, dy.h, dy.w);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.v[i] = dy.v[i] * (T(1) - y.v[i] * y.v[i]);
  return dx;
}

template <typename T>
void Adam<T>::step(const ParamRegistry<T>& params) {
  if (m.empty()) {
    m.resize(params.size());
    v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].value->size(), 0.0);
      v[i].assign(params[i].value->size(), 0.0);
    }
  }
  require(m.size() == params.size(), "adam: registry size changed");
  double scale = 1.0;
  if (clip_norm > 0.0) {
    const double n = grad_norm(params);
    if (n > clip_norm) scale = clip_norm / n;
  }
  ++step_count;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& val = *params[i].value;
    auto& grd = *params[i].grad;
    require(m[i].size() == val.size(), "adam: parameter size changed");
    for (std::size_t j = 0; j < val.size(); ++j) {
      const double g = static_cast<double>(grd[j]) * scale;
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
      val[j] -= static_cast<T>(lr * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps));
    }
  }
}

#define SAVOS_INSTANTIATE_NN(T)                                                      \
  template struct Conv2d<T>;                                                         \
  template struct ConvT2d<T>;                                                        \
  template struct Adam<T>;                                                           \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int, int);                  \
  template Tensor<T> tensor_from_grid<T>(const Grid<T>&);                            \
  template Grid<T> grid_from_channel<T>(const Tensor<T>&, int);                      \
  template void zero_grads<T>(const ParamRegistry<T>&);                              \
  template double grad_norm<T>(const ParamRegistry<T>&);                             \
  template void relu_inplace<T>(Tensor<T>&);                                         \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);           \
  template void sigmoid_inplace<T>(Tensor<T>&);                                      \
  template Tensor<T> sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&);        \
  template void tanh_inplace<T>(Tensor<T>&);                                         \
  template Tensor<T> tanh_backward<T>(const Tensor<T>&, const Tensor<T>&);

SAVOS_INSTANTIATE_NN(float)
SAVOS_INSTANTIATE_NN(double)

#undef SAVOS_INSTANTIATE_NN

}  // namespace savos
