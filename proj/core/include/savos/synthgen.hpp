#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "savos/grid.hpp"
#include "savos/image_io.hpp"
#include "savos/rng.hpp"

namespace savos {

enum class ShapeFamily { Gum, Star };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

/// Generator configuration. Defaults target the 128x128 scale; the reduced
/// CPU scale passes 64x64 with proportionally smaller radii/speeds.
struct GenConfig {
  int canvas_h = 128;
  int canvas_w = 128;
  int num_objects = 3;   // K
  int num_frames = 16;   // T
  int nodes_min = 7;
  int nodes_max = 12;
  double radius_min = 18.0;
  double radius_max = 28.0;
  double speed_min = 1.0;  // px/frame
  double speed_max = 3.0;
  std::uint64_t seed = 0;
  ShapeFamily shape_family = ShapeFamily::Gum;
  double star_inner_ratio = 0.45;  // inner-node radius as a fraction of the outer
  int max_retries = 100;

  void validate() const;  // throws ConfigError
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

/// A simple polygon given in polar form (angles sorted ascending), plus its
/// per-frame integer center positions and depth rank (lower = in front).
struct PolygonObject {
  std::vector<double> node_angles;
  std::vector<double> node_radii;
  std::vector<std::array<int, 2>> center_trajectory;  // (x, y) per frame
  int depth = 0;
  std::array<double, 2> velocity{0.0, 0.0};  // px/frame, pre-rounding
  std::array<std::uint8_t, 3> color{255, 255, 255};
};

/// One synthetic occlusion video with complete ground truth.
struct VideoSample {
  GenConfig config;
  std::uint64_t seed = 0;
  std::vector<ImageRGB> frames;                  // [T]
  std::vector<std::vector<MaskU8>> amodal;       // [T][K]
  std::vector<std::vector<MaskU8>> visible;      // [T][K]
  std::vector<std::vector<FlowField>> flows;     // [T][K], zero off the visible support;
                                                 // flows[T-1] repeats the last displacement
  std::vector<int> depth_order;                  // [K], depth_order[k] = rank of object k
                                                 // (lower = in front); fixed over the video
  std::vector<PolygonObject> objects;            // provenance; not serialized

  int T() const { return static_cast<int>(frames.size()); }
  int K() const { return static_cast<int>(depth_order.size()); }
};

/// Samples a polygon shape (no trajectory yet). Node count is uniform in
/// [nodes_min, nodes_max]; angles are sorted so the polygon is simple.
PolygonObject generate_polygon(Rng& rng, const GenConfig& cfg);

/// Rasterizes the polygon translated to its frame_index position. A pixel is
/// set iff its center lies inside the polygon; off-canvas parts are clipped.
/// Trajectories are integer, so translated rasterizations are exact shifts.
MaskU8 rasterize(const PolygonObject& poly, int frame_index, int canvas_h, int canvas_w);

/// Full video generation with rejection resampling until the occlusion and
/// coverage constraints hold. Throws GenerationError when the retry budget
/// is exhausted (message reports the seed).
VideoSample generate_video(const GenConfig& cfg);

/// Dataset directory layout:
///   dir/manifest.json                     {format_version, seed, count, config}
///   dir/videos/v000000/manifest.json      {format_version, seed, config, depth_order}
///   dir/videos/v000000/frames/f000.ppm
///   dir/videos/v000000/amodal/t000_k00.pgm
///   dir/videos/v000000/visible/t000_k00.pgm
///   dir/videos/v000000/flows.bin          16-byte header + [T][K][2][H][W] f32 LE
void write_video(const VideoSample& s, const std::filesystem::path& video_dir);
VideoSample read_video(const std::filesystem::path& video_dir);

void write_dataset(const std::vector<VideoSample>& samples, const std::filesystem::path& dir,
                   std::uint64_t dataset_seed);
std::vector<VideoSample> read_dataset(const std::filesystem::path& dir);

/// Lists video directories in dataset order without loading them.
std::vector<std::filesystem::path> list_video_dirs(const std::filesystem::path& dir);

/// Seed for the i-th video of a dataset run.
std::uint64_t video_seed(std::uint64_t dataset_seed, int index);

}  // namespace savos
