#include "savos/sequence.hpp"

#include <algorithm>
#include <cmath>

#include "savos/common.hpp"

namespace savos {

namespace {

struct BBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive; empty when x1 < x0
  bool empty() const { return x1 < x0 || y1 < y0; }
  int side() const { return std::max(x1 - x0, y1 - y0) + 1; }
};

BBox mask_bbox(const MaskU8& m) {
  BBox b{m.w, m.h, -1, -1};
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.at(y, x)) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
  return b;
}

// Clamped bilinear lookup at a fractional canvas position.
template <typename Fetch>
double sample_bilinear(Fetch&& fetch, int h, int w, double y, double x) {
  const double cx = std::clamp(x, 0.0, double(w - 1));
  const double cy = std::clamp(y, 0.0, double(h - 1));
  const int x0 = std::min(static_cast<int>(cx), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(static_cast<int>(cy), h - 2 >= 0 ? h - 2 : 0);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = cx - x0, fy = cy - y0;
  return (1 - fy) * ((1 - fx) * fetch(y0, x0) + fx * fetch(y0, x1)) +
         fy * ((1 - fx) * fetch(y1, x0) + fx * fetch(y1, x1));
}

// Window side 0 signals an object with no visible pixel in any frame.
CropWindow choose_window(const VideoSample& video, int k, int patch_size) {
  int max_side = 0;
  BBox uni;
  uni.x0 = video.config.canvas_w;
  uni.y0 = video.config.canvas_h;
  for (int t = 0; t < video.T(); ++t) {
    const BBox b = mask_bbox(video.visible[t][k]);
    if (b.empty()) continue;
    max_side = std::max(max_side, b.side());
    uni.x0 = std::min(uni.x0, b.x0);
    uni.y0 = std::min(uni.y0, b.y0);
    uni.x1 = std::max(uni.x1, b.x1);
    uni.y1 = std::max(uni.y1, b.y1);
  }
  if (uni.empty()) return CropWindow{0.0, 0.0, 0.0, patch_size};

  const double canvas_min = std::min(video.config.canvas_h, video.config.canvas_w);
  double side = std::max(1.8 * max_side, double(uni.side()) + 4.0);
  side = std::min(side, canvas_min);

  double x0 = (uni.x0 + uni.x1 + 1) / 2.0 - side / 2.0;
  double y0 = (uni.y0 + uni.y1 + 1) / 2.0 - side / 2.0;
  x0 = std::clamp(x0, 0.0, video.config.canvas_w - side);
  y0 = std::clamp(y0, 0.0, video.config.canvas_h - side);
  return CropWindow{x0, y0, side, patch_size};
}

}  // namespace

std::vector<ObjectSequence> extract_sequences(const VideoSample& video, int patch_size) {
  require(patch_size >= 2, "extract_sequences: patch size too small");
  require(video.T() >= 2, "extract_sequences: too few frames");
  std::vector<ObjectSequence> out;
  for (int k = 0; k < video.K(); ++k) {
    ObjectSequence seq;
    seq.object_index = k;
    seq.canvas_h = video.config.canvas_h;
    seq.canvas_w = video.config.canvas_w;
    seq.window = choose_window(video, k, patch_size);
    if (seq.window.size <= 0.0) continue;  // never visible: nothing to crop around
    const CropWindow& cw = seq.window;
    const double step = cw.size / cw.patch;
    const float flow_scale = static_cast<float>(cw.scale());

    for (int t = 0; t < video.T(); ++t) {
      Tensor<float> img(3, cw.patch, cw.patch);
      Grid<float> vis(cw.patch, cw.patch);
      Grid<float> oth(cw.patch, cw.patch);
      FlowField flow(cw.patch, cw.patch);

      MaskU8 others_union(video.config.canvas_h, video.config.canvas_w, 0);
      for (int j = 0; j < video.K(); ++j) {
        if (j == k) continue;
        for (std::size_t i = 0; i < others_union.size(); ++i)
          others_union.v[i] = others_union.v[i] || video.visible[t][j].v[i];
      }

      for (int py = 0; py < cw.patch; ++py)
        for (int px = 0; px < cw.patch; ++px) {
          const double cx = cw.x0 + (px + 0.5) * step - 0.5;
          const double cy = cw.y0 + (py + 0.5) * step - 0.5;
          const int h = video.config.canvas_h, w = video.config.canvas_w;
          for (int ch = 0; ch < 3; ++ch)
            img.at(ch, py, px) = static_cast<float>(
                sample_bilinear([&](int yy, int xx) { return video.frames[t].px(yy, xx)[ch]; },
                                h, w, cy, cx) /
                255.0);
          vis.at(py, px) = static_cast<float>(sample_bilinear(
              [&](int yy, int xx) { return video.visible[t][k].at(yy, xx) ? 1.0 : 0.0; }, h, w,
              cy, cx));
          oth.at(py, px) = static_cast<float>(sample_bilinear(
              [&](int yy, int xx) { return others_union.at(yy, xx) ? 1.0 : 0.0; }, h, w, cy,
              cx));
          flow.dx.at(py, px) =
              flow_scale * static_cast<float>(sample_bilinear(
                               [&](int yy, int xx) { return video.flows[t][k].dx.at(yy, xx); },
                               h, w, cy, cx));
          flow.dy.at(py, px) =
              flow_scale * static_cast<float>(sample_bilinear(
                               [&](int yy, int xx) { return video.flows[t][k].dy.at(yy, xx); },
                               h, w, cy, cx));
        }
      seq.images.push_back(std::move(img));
      seq.visibles.push_back(std::move(vis));
      seq.others.push_back(std::move(oth));
      seq.flows.push_back(std::move(flow));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

template <typename T>
ObjectSequenceT<T> reverse_sequence(const ObjectSequenceT<T>& seq) {
  const int frames = seq.frames();
  require(frames >= 2, "reverse_sequence: too few frames");
  ObjectSequenceT<T> rev;
  rev.object_index = seq.object_index;
  rev.canvas_h = seq.canvas_h;
  rev.canvas_w = seq.canvas_w;
  rev.window = seq.window;
  for (int r = 0; r < frames; ++r) {
    const int t = frames - 1 - r;
    rev.images.push_back(seq.images[t]);
    rev.visibles.push_back(seq.visibles[t]);
    rev.others.push_back(seq.others[t]);
    const int src = std::max(frames - 2 - r, 0);
    FlowFieldT<T> f = seq.flows[src];
    for (auto& v : f.dx.v) v = -v;
    for (auto& v : f.dy.v) v = -v;
    rev.flows.push_back(std::move(f));
  }
  return rev;
}

template <typename T>
Grid<T> stitch_prediction(const Grid<T>& patch, const CropWindow& window, int canvas_h,
                          int canvas_w) {
  require(patch.h == window.patch && patch.w == window.patch,
          "stitch_prediction: patch disagrees with the window");
  require(window.x0 >= 0 && window.y0 >= 0 && window.x0 + window.size <= canvas_w + 1e-9 &&
              window.y0 + window.size <= canvas_h + 1e-9,
          "stitch_prediction: window outside the canvas");
  Grid<T> out(canvas_h, canvas_w, T(0));
  const double step = window.size / window.patch;
  for (int y = 0; y < canvas_h; ++y)
    for (int x = 0; x < canvas_w; ++x) {
      // position of this canvas pixel's center in patch coordinates
      const double px = (x + 0.5 - window.x0) / step - 0.5;
      const double py = (y + 0.5 - window.y0) / step - 0.5;
      if (px < -0.5 || py < -0.5 || px > window.patch - 0.5 || py > window.patch - 0.5)
        continue;
      out.at(y, x) = static_cast<T>(sample_bilinear(
          [&](int yy, int xx) { return static_cast<double>(patch.at(yy, xx)); }, window.patch,
          window.patch, py, px));
    }
  return out;
}

template <typename T>
MaskU8 binarize(const Grid<T>& g, double threshold) {
  MaskU8 out(g.h, g.w, 0);
  for (std::size_t i = 0; i < g.size(); ++i)
    out.v[i] = static_cast<double>(g.v[i]) > threshold ? 1 : 0;
  return out;
}

template ObjectSequenceT<float> reverse_sequence<float>(const ObjectSequenceT<float>&);
template ObjectSequenceT<double> reverse_sequence<double>(const ObjectSequenceT<double>&);
template Grid<float> stitch_prediction<float>(const Grid<float>&, const CropWindow&, int, int);
template Grid<double> stitch_prediction<double>(const Grid<double>&, const CropWindow&, int,
                                                int);
template MaskU8 binarize<float>(const Grid<float>&, double);
template MaskU8 binarize<double>(const Grid<double>&, double);

}  // namespace savos
