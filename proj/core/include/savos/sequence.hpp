#pragma once

#include <vector>

#include "savos/nn.hpp"
#include "savos/synthgen.hpp"

namespace savos {

/// Square canvas-space window resampled to a patch x patch grid. The same
/// window is used for every frame of a sequence, so patch-space flow is
/// canvas flow scaled by patch / size.
struct CropWindow {
  double x0 = 0.0, y0 = 0.0;  // top-left corner, canvas pixel units
  double size = 0.0;          // side length
  int patch = 0;              // output resolution

  double scale() const { return patch / size; }
};

/// One object's view of a video: per-frame image, visible-mask, and
/// visible-flow patches, plus the union of the other objects' visible masks
/// (needed to weight the loss), all in a fixed crop window.
template <typename T>
struct ObjectSequenceT {
  int object_index = 0;
  int canvas_h = 0, canvas_w = 0;
  CropWindow window;
  std::vector<Tensor<T>> images;        // [T] 3 x P x P in [0, 1]
  std::vector<Grid<T>> visibles;        // [T] own visible mask (soft after resampling)
  std::vector<Grid<T>> others;          // [T] union of other objects' visible masks
  std::vector<FlowFieldT<T>> flows;     // [T] own visible flow, patch units

  int frames() const { return static_cast<int>(images.size()); }
};

using ObjectSequence = ObjectSequenceT<float>;

/// Builds one sequence per object. The window covers every frame's visible
/// bounding box: side = max(1.8 * largest per-frame bbox side, union bbox
/// side + 4), clamped to the canvas and shifted fully inside it. Objects with
/// no visible pixel in any frame are skipped (check object_index).
std::vector<ObjectSequence> extract_sequences(const VideoSample& video, int patch_size);

/// Frames in reverse order with flows negated: the flow attached to reversed
/// frame r is the negated forward flow of the original pair (T-2-r, T-1-r),
/// the approximation being the support (exact values for rigid motion). The
/// reversed last entry repeats, mirroring the forward convention.
template <typename T>
ObjectSequenceT<T> reverse_sequence(const ObjectSequenceT<T>& seq);

/// Inverse of the crop resampling: pastes a patch-space field back onto the
/// canvas; pixels outside the window are 0.
template <typename T>
Grid<T> stitch_prediction(const Grid<T>& patch, const CropWindow& window, int canvas_h,
                          int canvas_w);

template <typename T>
MaskU8 binarize(const Grid<T>& g, double threshold = 0.5);

}  // namespace savos
