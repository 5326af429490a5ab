#include "savos/synthgen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <utility>

#include <nlohmann/json.hpp>

#include "savos/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");

namespace savos {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ShapeFamily f) { return f == ShapeFamily::Gum ? "gum" : "star"; }

ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "gum") return ShapeFamily::Gum;
  if (s == "star") return ShapeFamily::Star;
  throw ConfigError("unknown shape_family '" + s + "' (expected 'gum' or 'star')");
}

void GenConfig::validate() const {
  if (canvas_h < 8 || canvas_w < 8) throw ConfigError("canvas_size must be at least 8x8");
  if (num_objects < 2) throw ConfigError("num_objects must be >= 2 (occlusion needs two objects)");
  if (num_frames < 2) throw ConfigError("num_frames must be >= 2");
  if (nodes_min < 3) throw ConfigError("nodes_min must be >= 3");
  if (nodes_min > nodes_max) throw ConfigError("nodes_min must not exceed nodes_max");
  if (!(radius_min > 0.0) || radius_min > radius_max)
    throw ConfigError("radius_range must satisfy 0 < min <= max");
  if (speed_min < 0.0 || speed_min > speed_max)
    throw ConfigError("speed_range must satisfy 0 <= min <= max");
  if (star_inner_ratio <= 0.0 || star_inner_ratio >= 1.0)
    throw ConfigError("star_inner_ratio must be in (0, 1)");
  if (max_retries < 1) throw ConfigError("max_retries must be >= 1");
}

void to_json(json& j, const GenConfig& c) {
  j = json{{"canvas_size", {c.canvas_h, c.canvas_w}},
           {"num_objects", c.num_objects},
           {"num_frames", c.num_frames},
           {"nodes_min", c.nodes_min},
           {"nodes_max", c.nodes_max},
           {"radius_range", {c.radius_min, c.radius_max}},
           {"speed_range", {c.speed_min, c.speed_max}},
           {"seed", c.seed},
           {"shape_family", to_string(c.shape_family)},
           {"star_inner_ratio", c.star_inner_ratio},
           {"max_retries", c.max_retries}};
}

void from_json(const json& j, GenConfig& c) {
  static const std::set<std::string> known{
      "canvas_size", "num_objects",  "num_frames",   "nodes_min",
      "nodes_max",   "radius_range", "speed_range",  "seed",
      "shape_family", "star_inner_ratio", "max_retries"};
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      throw ConfigError("unknown generator config key '" + item.key() + "'");
  if (j.contains("canvas_size")) {
    const auto& a = j.at("canvas_size");
    c.canvas_h = a.at(0).get<int>();
    c.canvas_w = a.at(1).get<int>();
  }
  c.num_objects = j.value("num_objects", c.num_objects);
  c.num_frames = j.value("num_frames", c.num_frames);
  c.nodes_min = j.value("nodes_min", c.nodes_min);
  c.nodes_max = j.value("nodes_max", c.nodes_max);
  if (j.contains("radius_range")) {
    const auto& a = j.at("radius_range");
    c.radius_min = a.at(0).get<double>();
    c.radius_max = a.at(1).get<double>();
  }
  if (j.contains("speed_range")) {
    const auto& a = j.at("speed_range");
    c.speed_min = a.at(0).get<double>();
    c.speed_max = a.at(1).get<double>();
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("shape_family"))
    c.shape_family = shape_family_from_string(j.at("shape_family").get<std::string>());
  c.star_inner_ratio = j.value("star_inner_ratio", c.star_inner_ratio);
  c.max_retries = j.value("max_retries", c.max_retries);
}

PolygonObject generate_polygon(Rng& rng, const GenConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(rng.uniform_int(cfg.nodes_min, cfg.nodes_max));
  const double r = rng.uniform(cfg.radius_min, cfg.radius_max);
  PolygonObject p;
  p.node_angles.resize(n);
  for (auto& a : p.node_angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::sort(p.node_angles.begin(), p.node_angles.end());
  p.node_radii.assign(n, r);
  if (cfg.shape_family == ShapeFamily::Star)
    for (int i = 1; i < n; i += 2) p.node_radii[i] *= cfg.star_inner_ratio;
  return p;
}

namespace {

/// Polygon rasterized once in center-relative coordinates; frame masks are
/// integer blits of this, which is what makes shifted-mask identities exact.
struct LocalRaster {
  int x0 = 0, y0 = 0;  // offset of local pixel (0,0) from the object center
  MaskU8 m{0, 0};
};

LocalRaster rasterize_local(const std::vector<double>& angles, const std::vector<double>& radii) {
  const int n = static_cast<int>(angles.size());
  require(n >= 3 && radii.size() == angles.size(), "rasterize: polygon needs >= 3 nodes");
  std::vector<double> vx(n), vy(n);
  double minx = 1e30, maxx = -1e30, miny = 1e30, maxy = -1e30;
  for (int i = 0; i < n; ++i) {
    vx[i] = radii[i] * std::cos(angles[i]);
    vy[i] = radii[i] * std::sin(angles[i]);
    minx = std::min(minx, vx[i]);
    maxx = std::max(maxx, vx[i]);
    miny = std::min(miny, vy[i]);
    maxy = std::max(maxy, vy[i]);
  }
  const int bx0 = static_cast<int>(std::floor(minx)), bx1 = static_cast<int>(std::ceil(maxx));
  const int by0 = static_cast<int>(std::floor(miny)), by1 = static_cast<int>(std::ceil(maxy));
  MaskU8 raw(by1 - by0 + 1, bx1 - bx0 + 1, 0);
  for (int py = by0; py <= by1; ++py)
    for (int px = bx0; px <= bx1; ++px) {
      // Even-odd rule on the pixel center.
      bool inside = false;
      for (int i = 0, k = n - 1; i < n; k = i++) {
        if ((vy[i] > py) != (vy[k] > py) &&
            px < (vx[k] - vx[i]) * (py - vy[i]) / (vy[k] - vy[i]) + vx[i])
          inside = !inside;
      }
      if (inside) raw.at(py - by0, px - bx0) = 1;
    }
  int tx0 = raw.w, tx1 = -1, ty0 = raw.h, ty1 = -1;
  for (int y = 0; y < raw.h; ++y)
    for (int x = 0; x < raw.w; ++x)
      if (raw.at(y, x)) {
        tx0 = std::min(tx0, x);
        tx1 = std::max(tx1, x);
        ty0 = std::min(ty0, y);
        ty1 = std::max(ty1, y);
      }
  LocalRaster out;
  if (tx1 < 0) return out;  // degenerate sliver: nothing covered
  out.x0 = bx0 + tx0;
  out.y0 = by0 + ty0;
  out.m = MaskU8(ty1 - ty0 + 1, tx1 - tx0 + 1, 0);
  for (int y = 0; y < out.m.h; ++y)
    for (int x = 0; x < out.m.w; ++x) out.m.at(y, x) = raw.at(ty0 + y, tx0 + x);
  return out;
}

MaskU8 blit(const LocalRaster& r, int cx, int cy, int canvas_h, int canvas_w) {
  MaskU8 out(canvas_h, canvas_w, 0);
  for (int ly = 0; ly < r.m.h; ++ly) {
    const int y = cy + r.y0 + ly;
    if (y < 0 || y >= canvas_h) continue;
    for (int lx = 0; lx < r.m.w; ++lx) {
      if (!r.m.at(ly, lx)) continue;
      const int x = cx + r.x0 + lx;
      if (x < 0 || x >= canvas_w) continue;
      out.at(y, x) = 1;
    }
  }
  return out;
}

/// Legal integer center positions keeping the raster fully on canvas.
struct CenterBox {
  int xlo = 0, xhi = -1, ylo = 0, yhi = -1;
  bool ok() const { return xlo <= xhi && ylo <= yhi; }
};

CenterBox center_box(const LocalRaster& r, int canvas_h, int canvas_w) {
  CenterBox b;
  b.xlo = -r.x0;
  b.xhi = canvas_w - 1 - (r.x0 + r.m.w - 1);
  b.ylo = -r.y0;
  b.yhi = canvas_h - 1 - (r.y0 + r.m.h - 1);
  return b;
}

using Vec2 = std::array<double, 2>;
using Path = std::vector<Vec2>;

constexpr double kJitter = 0.35;  // px/frame, uniform per axis

bool rounded_in_box(const Path& p, const CenterBox& b) {
  for (const auto& q : p) {
    const auto x = static_cast<int>(std::llround(q[0]));
    const auto y = static_cast<int>(std::llround(q[1]));
    if (x < b.xlo || x > b.xhi || y < b.ylo || y > b.yhi) return false;
  }
  return true;
}

Path integrate(Rng& rng, Vec2 start, Vec2 vel, int frames) {
  Path p(frames);
  p[0] = start;
  for (int t = 1; t < frames; ++t) {
    p[t][0] = p[t - 1][0] + vel[0] + rng.uniform(-kJitter, kJitter);
    p[t][1] = p[t - 1][1] + vel[1] + rng.uniform(-kJitter, kJitter);
  }
  return p;
}

/// Constant-velocity-plus-jitter trajectory kept fully on canvas.
bool sample_free_path(Rng& rng, const CenterBox& box, int frames, const GenConfig& cfg,
                      Path& out) {
  for (int tries = 0; tries < 40; ++tries) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    const Vec2 vel{speed * std::cos(theta), speed * std::sin(theta)};
    const double dx = vel[0] * (frames - 1), dy = vel[1] * (frames - 1);
    const double xlo = box.xlo - std::min(0.0, dx), xhi = box.xhi - std::max(0.0, dx);
    const double ylo = box.ylo - std::min(0.0, dy), yhi = box.yhi - std::max(0.0, dy);
    if (xlo > xhi || ylo > yhi) continue;
    const Vec2 start{rng.uniform(xlo, xhi), rng.uniform(ylo, yhi)};
    Path p = integrate(rng, start, vel, frames);
    if (rounded_in_box(p, box)) {
      out = std::move(p);
      return true;
    }
  }
  return false;
}

double raster_width_along(const LocalRaster& r, double ux, double uy) {
  double lo = 1e30, hi = -1e30;
  for (int y = 0; y < r.m.h; ++y)
    for (int x = 0; x < r.m.w; ++x) {
      if (!r.m.at(y, x)) continue;
      const double proj = (r.x0 + x) * ux + (r.y0 + y) * uy;
      lo = std::min(lo, proj);
      hi = std::max(hi, proj);
    }
  return hi > lo ? hi - lo : 0.0;
}

/// Trajectory for the front-most object: it slides across the given base
/// object, so the base stays partially hidden in every frame while each of
/// its parts is revealed at some point of the sweep.
bool sample_sweep_path(Rng& rng, const Path& base, const CenterBox& box,
                       const LocalRaster& raster, double ext_front, double ext_back,
                       ShapeFamily family, Path& out) {
  const int frames = static_cast<int>(base.size());
  for (int tries = 0; tries < 40; ++tries) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec2 u{std::cos(theta), std::sin(theta)};
    // Half-extent of the sweep: far enough that no pixel of the front object
    // covers the same spot for the whole video. Solid blobs need the full
    // raster width; stars only need their core cleared.
    const double m = family == ShapeFamily::Gum
                         ? 0.5 * raster_width_along(raster, u[0], u[1])
                         : 0.55 * ext_front;
    const double s0 = rng.uniform(0.5, 2.0), s1 = rng.uniform(0.5, 2.0);
    const double span = 2.0 * m + s0 + s1;
    const double off = rng.uniform(-0.25, 0.25) * ext_back;
    Path p(frames);
    bool fin = true;
    for (int t = 0; t < frames; ++t) {
      const double along = -(m + s0) + span * t / (frames - 1);
      p[t][0] = base[t][0] + along * u[0] - off * u[1];
      p[t][1] = base[t][1] + along * u[1] + off * u[0];
      if (!std::isfinite(p[t][0]) || !std::isfinite(p[t][1])) fin = false;
    }
    if (!fin) continue;
    for (int t = 1; t < frames; ++t) {
      p[t][0] += rng.uniform(-kJitter, kJitter);
      p[t][1] += rng.uniform(-kJitter, kJitter);
    }
    if (rounded_in_box(p, box)) {
      out = std::move(p);
      return true;
    }
  }
  return false;
}

}  // namespace

MaskU8 rasterize(const PolygonObject& poly, int frame_index, int canvas_h, int canvas_w) {
  require(frame_index >= 0 &&
              frame_index < static_cast<int>(poly.center_trajectory.size()),
          "rasterize: trajectory undefined at frame " + std::to_string(frame_index));
  const LocalRaster local = rasterize_local(poly.node_angles, poly.node_radii);
  const auto& c = poly.center_trajectory[frame_index];
  return blit(local, c[0], c[1], canvas_h, canvas_w);
}

VideoSample generate_video(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int T = cfg.num_frames, K = cfg.num_objects;
  const int H = cfg.canvas_h, W = cfg.canvas_w;

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    std::vector<PolygonObject> polys(K);
    std::vector<LocalRaster> rasters(K);
    std::vector<CenterBox> boxes(K);
    std::vector<double> ext(K);
    bool feasible = true;
    for (int k = 0; k < K; ++k) {
      polys[k] = generate_polygon(rng, cfg);
      for (auto& ch : polys[k].color) ch = static_cast<std::uint8_t>(rng.uniform_int(70, 255));
      rasters[k] = rasterize_local(polys[k].node_angles, polys[k].node_radii);
      boxes[k] = center_box(rasters[k], H, W);
      ext[k] = *std::max_element(polys[k].node_radii.begin(), polys[k].node_radii.end());
      if (!boxes[k].ok() || mask_area(rasters[k].m) == 0) feasible = false;
    }
    std::array<std::uint8_t, 3> bg;
    for (auto& ch : bg) ch = static_cast<std::uint8_t>(rng.uniform_int(0, 40));
    if (!feasible) continue;

    // Depth ranks: order[0] is front-most, order[K-1] the deepest.
    std::vector<int> order(K);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const int front = order.front(), back = order.back();
    for (int i = 0; i < K; ++i) polys[order[i]].depth = i;

    std::vector<Path> pos(K);
    if (!sample_free_path(rng, boxes[back], T, cfg, pos[back])) continue;
    if (!sample_sweep_path(rng, pos[back], boxes[front], rasters[front], ext[front], ext[back],
                           cfg.shape_family, pos[front]))
      continue;
    for (int k = 0; k < K && feasible; ++k) {
      if (k == front || k == back) continue;
      feasible = sample_free_path(rng, boxes[k], T, cfg, pos[k]);
    }
    if (!feasible) continue;

    for (int k = 0; k < K; ++k) {
      polys[k].center_trajectory.resize(T);
      for (int t = 0; t < T; ++t)
        polys[k].center_trajectory[t] = {static_cast<int>(std::llround(pos[k][t][0])),
                                         static_cast<int>(std::llround(pos[k][t][1]))};
      polys[k].velocity = {(pos[k][T - 1][0] - pos[k][0][0]) / (T - 1),
                           (pos[k][T - 1][1] - pos[k][0][1]) / (T - 1)};
    }

    std::vector<std::vector<MaskU8>> amodal(T, std::vector<MaskU8>(K));
    std::vector<std::vector<MaskU8>> visible(T, std::vector<MaskU8>(K));
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < K; ++k) {
        const auto& c = polys[k].center_trajectory[t];
        amodal[t][k] = blit(rasters[k], c[0], c[1], H, W);
      }
      MaskU8 occupied(H, W, 0);
      for (int i = 0; i < K; ++i) {
        const int k = order[i];
        MaskU8 vk(H, W, 0);
        for (std::size_t p = 0; p < vk.size(); ++p)
          vk.v[p] = static_cast<std::uint8_t>(amodal[t][k].v[p] && !occupied.v[p]);
        for (std::size_t p = 0; p < vk.size(); ++p)
          occupied.v[p] = static_cast<std::uint8_t>(occupied.v[p] || amodal[t][k].v[p]);
        visible[t][k] = std::move(vk);
      }
    }

    // At least one object must stay partially hidden in every frame.
    bool have_occluded = false;
    for (int k = 0; k < K && !have_occluded; ++k) {
      bool always = true;
      for (int t = 0; t < T && always; ++t) always = !(visible[t][k] == amodal[t][k]);
      have_occluded = always;
    }
    if (!have_occluded) continue;

    // Every part of every object must be visible somewhere in the video.
    bool covered = true;
    for (int k = 0; k < K && covered; ++k) {
      const auto& c0 = polys[k].center_trajectory[0];
      MaskU8 seen(H, W, 0);
      for (int t = 0; t < T; ++t) {
        const auto& ct = polys[k].center_trajectory[t];
        const MaskU8 s = mask_shift(visible[t][k], c0[0] - ct[0], c0[1] - ct[1]);
        for (std::size_t p = 0; p < seen.size(); ++p)
          seen.v[p] = static_cast<std::uint8_t>(seen.v[p] || s.v[p]);
      }
      covered = seen == amodal[0][k];
    }
    if (!covered) continue;

    VideoSample s;
    s.config = cfg;
    s.seed = cfg.seed;
    s.objects = std::move(polys);
    s.depth_order.resize(K);
    for (int k = 0; k < K; ++k) s.depth_order[k] = s.objects[k].depth;
    s.amodal = std::move(amodal);
    s.visible = std::move(visible);

    s.frames.reserve(T);
    for (int t = 0; t < T; ++t) {
      ImageRGB img(H, W);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          auto* px = img.px(y, x);
          px[0] = bg[0];
          px[1] = bg[1];
          px[2] = bg[2];
        }
      for (int k = 0; k < K; ++k)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            if (s.visible[t][k].at(y, x)) {
              auto* px = img.px(y, x);
              px[0] = s.objects[k].color[0];
              px[1] = s.objects[k].color[1];
              px[2] = s.objects[k].color[2];
            }
      s.frames.push_back(std::move(img));
    }

    s.flows.assign(T, std::vector<FlowField>(K));
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < K; ++k) {
        FlowField f(H, W);
        const int a = t < T - 1 ? t : T - 2;  // last frame repeats the final step
        const auto& ca = s.objects[k].center_trajectory[a];
        const auto& cb = s.objects[k].center_trajectory[a + 1];
        const auto dx = static_cast<float>(cb[0] - ca[0]);
        const auto dy = static_cast<float>(cb[1] - ca[1]);
        for (std::size_t p = 0; p < f.dx.size(); ++p)
          if (s.visible[t][k].v[p]) {
            f.dx.v[p] = dx;
            f.dy.v[p] = dy;
          }
        s.flows[t][k] = std::move(f);
      }
    return s;
  }
  throw GenerationError("video generation failed after " + std::to_string(cfg.max_retries) +
                        " attempts (seed=" + std::to_string(cfg.seed) + ")");
}

namespace {

void write_flows(const fs::path& file, const std::vector<std::vector<FlowField>>& flows) {
  const auto T = static_cast<std::uint16_t>(flows.size());
  const auto K = static_cast<std::uint16_t>(flows[0].size());
  const auto H = static_cast<std::uint16_t>(flows[0][0].h());
  const auto W = static_cast<std::uint16_t>(flows[0][0].w());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot open " + file.string() + " for writing");
  out.write("SVFL", 4);
  const std::uint16_t head[6] = {1, T, K, H, W, 0};
  out.write(reinterpret_cast<const char*>(head), sizeof head);
  for (const auto& per_frame : flows)
    for (const auto& f : per_frame) {
      out.write(reinterpret_cast<const char*>(f.dx.v.data()),
                static_cast<std::streamsize>(f.dx.size() * sizeof(float)));
      out.write(reinterpret_cast<const char*>(f.dy.v.data()),
                static_cast<std::streamsize>(f.dy.size() * sizeof(float)));
    }
  if (!out) throw FormatError("short write to " + file.string());
}

std::vector<std::vector<FlowField>> read_flows(const fs::path& file, int T, int K, int H, int W) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("missing flow file " + file.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SVFL", 4) != 0)
    throw FormatError(file.string() + ": bad flow magic");
  std::uint16_t head[6];
  in.read(reinterpret_cast<char*>(head), sizeof head);
  if (!in) throw FormatError(file.string() + ": truncated flow header");
  if (head[0] != 1) throw FormatError(file.string() + ": unsupported flow version");
  if (head[1] != T || head[2] != K || head[3] != H || head[4] != W)
    throw FormatError(file.string() + ": flow header disagrees with the manifest");
  std::vector<std::vector<FlowField>> flows(T, std::vector<FlowField>(K));
  for (auto& per_frame : flows)
    for (auto& f : per_frame) {
      f = FlowField(H, W);
      in.read(reinterpret_cast<char*>(f.dx.v.data()),
              static_cast<std::streamsize>(f.dx.size() * sizeof(float)));
      in.read(reinterpret_cast<char*>(f.dy.v.data()),
              static_cast<std::streamsize>(f.dy.size() * sizeof(float)));
      if (!in) throw FormatError(file.string() + ": truncated flow payload");
    }
  return flows;
}

std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "f%03d.ppm", t);
  return buf;
}

std::string mask_name(int t, int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%03d_k%02d.pgm", t, k);
  return buf;
}

}  // namespace

void write_video(const VideoSample& s, const fs::path& video_dir) {
  require(s.T() >= 2 && s.K() >= 2, "write_video: sample is empty");
  fs::create_directories(video_dir / "frames");
  fs::create_directories(video_dir / "amodal");
  fs::create_directories(video_dir / "visible");
  for (int t = 0; t < s.T(); ++t) {
    write_ppm(video_dir / "frames" / frame_name(t), s.frames[t]);
    for (int k = 0; k < s.K(); ++k) {
      write_pgm(video_dir / "amodal" / mask_name(t, k), s.amodal[t][k]);
      write_pgm(video_dir / "visible" / mask_name(t, k), s.visible[t][k]);
    }
  }
  write_flows(video_dir / "flows.bin", s.flows);
  const json j{{"format_version", 1},
               {"seed", s.seed},
               {"config", s.config},
               {"depth_order", s.depth_order}};
  const fs::path mf = video_dir / "manifest.json";
  std::ofstream out(mf);
  out << j.dump(2) << "\n";
  if (!out) throw FormatError("failed to write " + mf.string());
}

VideoSample read_video(const fs::path& video_dir) {
  const fs::path mf = video_dir / "manifest.json";
  std::ifstream in(mf);
  if (!in) throw FormatError("missing manifest " + mf.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(mf.string() + ": " + e.what());
  }
  VideoSample s;
  try {
    s.config = j.at("config").get<GenConfig>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.depth_order = j.at("depth_order").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw FormatError(mf.string() + ": " + e.what());
  }
  const int T = s.config.num_frames, K = s.config.num_objects;
  const int H = s.config.canvas_h, W = s.config.canvas_w;
  if (static_cast<int>(s.depth_order.size()) != K)
    throw FormatError(mf.string() + ": depth_order length disagrees with config");
  s.frames.reserve(T);
  s.amodal.assign(T, {});
  s.visible.assign(T, {});
  for (int t = 0; t < T; ++t) {
    s.frames.push_back(read_ppm(video_dir / "frames" / frame_name(t)));
    if (s.frames.back().h != H || s.frames.back().w != W)
      throw FormatError((video_dir / "frames" / frame_name(t)).string() + ": unexpected shape");
    s.amodal[t].reserve(K);
    s.visible[t].reserve(K);
    for (int k = 0; k < K; ++k) {
      s.amodal[t].push_back(read_pgm(video_dir / "amodal" / mask_name(t, k)));
      s.visible[t].push_back(read_pgm(video_dir / "visible" / mask_name(t, k)));
      if (s.amodal[t][k].h != H || s.amodal[t][k].w != W ||
          s.visible[t][k].h != H || s.visible[t][k].w != W)
        throw FormatError(video_dir.string() + ": mask shape disagrees with config at " +
                          mask_name(t, k));
    }
  }
  s.flows = read_flows(video_dir / "flows.bin", T, K, H, W);
  return s;
}

void write_dataset(const std::vector<VideoSample>& samples, const fs::path& dir,
                   std::uint64_t dataset_seed) {
  require(!samples.empty(), "write_dataset: no samples");
  fs::create_directories(dir / "videos");
  char buf[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(buf, sizeof buf, "v%06zu", i);
    write_video(samples[i], dir / "videos" / buf);
  }
  const json j{{"format_version", 1}, {"seed", dataset_seed}, {"config", samples[0].config}};
  const fs::path mf = dir / "manifest.json";
  std::ofstream out(mf);
  out << j.dump(2) << "\n";
  if (!out) throw FormatError("failed to write " + mf.string());
}

std::vector<VideoSample> read_dataset(const fs::path& dir) {
  std::vector<VideoSample> out;
  for (const auto& d : list_video_dirs(dir)) out.push_back(read_video(d));
  return out;
}

std::vector<fs::path> list_video_dirs(const fs::path& dir) {
  const fs::path mf = dir / "manifest.json";
  if (!fs::exists(mf)) throw FormatError("missing dataset manifest " + mf.string());
  const fs::path videos = dir / "videos";
  if (!fs::is_directory(videos)) throw FormatError("missing videos directory " + videos.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(videos))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t video_seed(std::uint64_t dataset_seed, int index) {
  return splitmix64(dataset_seed ^
                    (0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(index) + 1)));
}

}  // namespace savos
