#include "savos/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "savos/common.hpp"

namespace savos {

namespace {

struct Pt {
  long long x, y;
};

long long cross(const Pt& o, const Pt& a, const Pt& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Monotone chain; returns the hull counter-clockwise (y grows downward in
// image space, but orientation only needs to be consistent).
std::vector<Pt> convex_hull(std::vector<Pt> pts) {
  std::sort(pts.begin(), pts.end(),
            [](const Pt& a, const Pt& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Pt& a, const Pt& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  const int n = static_cast<int>(pts.size());
  if (n <= 2) return pts;
  std::vector<Pt> hull(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const int lower = k + 1;
  for (int i = n - 2; i >= 0; --i) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool on_segment(const Pt& a, const Pt& b, const Pt& q) {
  if (cross(a, b, q) != 0) return false;
  const long long dot = (q.x - a.x) * (b.x - a.x) + (q.y - a.y) * (b.y - a.y);
  const long long len2 = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
  return dot >= 0 && dot <= len2;
}

bool inside_hull(const std::vector<Pt>& hull, const Pt& q) {
  if (hull.empty()) return false;
  if (hull.size() == 1) return q.x == hull[0].x && q.y == hull[0].y;
  if (hull.size() == 2) return on_segment(hull[0], hull[1], q);
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Pt& a = hull[i];
    const Pt& b = hull[(i + 1) % hull.size()];
    if (cross(a, b, q) < 0) return false;
  }
  return true;
}

}  // namespace

double iou(const MaskU8& pred, const MaskU8& gt) {
  require(pred.same_shape(gt), "iou: mask shapes disagree");
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double iou(const MaskU8& pred, const MaskU8& gt, const MaskU8& region) {
  require(pred.same_shape(gt) && pred.same_shape(region), "iou: mask shapes disagree");
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (region.v[i] == 0) continue;
    const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

MaskU8 occluded_region(const MaskU8& amodal, const MaskU8& visible) {
  require(amodal.same_shape(visible), "occluded_region: mask shapes disagree");
  require(mask_subset(visible, amodal), "occluded_region: visible pixels outside the amodal mask");
  MaskU8 out(amodal.h, amodal.w);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.v[i] = (amodal.v[i] != 0 && visible.v[i] == 0) ? 255 : 0;
  return out;
}

double occlusion_rate(const MaskU8& amodal, const MaskU8& visible) {
  require(amodal.same_shape(visible), "occlusion_rate: mask shapes disagree");
  require(mask_subset(visible, amodal), "occlusion_rate: visible pixels outside the amodal mask");
  const std::size_t m = mask_area(amodal);
  require(m > 0, "occlusion_rate: empty amodal mask");
  return 1.0 - static_cast<double>(mask_area(visible)) / static_cast<double>(m);
}

MaskU8 convex_baseline(const MaskU8& visible) {
  std::vector<Pt> pts;
  for (int y = 0; y < visible.h; ++y)
    for (int x = 0; x < visible.w; ++x)
      if (visible.at(y, x) != 0) pts.push_back({x, y});
  MaskU8 out(visible.h, visible.w);
  if (pts.empty()) return out;

  long long min_x = pts[0].x, max_x = pts[0].x, min_y = pts[0].y, max_y = pts[0].y;
  for (const Pt& p : pts) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const std::vector<Pt> hull = convex_hull(std::move(pts));
  for (long long y = min_y; y <= max_y; ++y)
    for (long long x = min_x; x <= max_x; ++x)
      if (inside_hull(hull, {x, y})) out.at(static_cast<int>(y), static_cast<int>(x)) = 255;
  return out;
}

MetricsTable evaluate(const std::vector<std::vector<MaskU8>>& preds,
                      const std::vector<std::vector<MaskU8>>& amodal,
                      const std::vector<std::vector<MaskU8>>& visible,
                      const OcclusionFilter* filter) {
  require(preds.size() == amodal.size() && preds.size() == visible.size(),
          "evaluate: frame counts disagree");
  MetricsTable table;
  table.per_bucket.assign(10, BucketRow{});
  double full_sum = 0.0, occ_sum = 0.0;
  int occ_count = 0;
  std::vector<double> bucket_full(10, 0.0), bucket_occ(10, 0.0);

  for (std::size_t t = 0; t < preds.size(); ++t) {
    require(preds[t].size() == amodal[t].size() && preds[t].size() == visible[t].size(),
            "evaluate: object counts disagree");
    for (std::size_t k = 0; k < preds[t].size(); ++k) {
      if (mask_area(amodal[t][k]) == 0) continue;  // object absent from this frame
      const double rate = occlusion_rate(amodal[t][k], visible[t][k]);
      if (filter && (rate < filter->lo || rate > filter->hi)) continue;

      const int bucket = std::min(static_cast<int>(rate * 10.0), 9);
      const double full = iou(preds[t][k], amodal[t][k]);
      full_sum += full;
      bucket_full[bucket] += full;
      table.per_bucket[bucket].count += 1;
      table.n_objects += 1;

      const MaskU8 occ = occluded_region(amodal[t][k], visible[t][k]);
      if (mask_area(occ) > 0) {
        const double o = iou(preds[t][k], amodal[t][k], occ);
        occ_sum += o;
        occ_count += 1;
        bucket_occ[bucket] += o;
        table.per_bucket[bucket].occluded_count += 1;
      }
    }
  }

  table.full_miou = table.n_objects > 0 ? full_sum / table.n_objects : 0.0;
  table.occluded_miou = occ_count > 0 ? occ_sum / occ_count : 0.0;
  for (int b = 0; b < 10; ++b) {
    BucketRow& row = table.per_bucket[b];
    row.full = row.count > 0 ? bucket_full[b] / row.count : 0.0;
    row.occluded = row.occluded_count > 0 ? bucket_occ[b] / row.occluded_count : 0.0;
  }
  return table;
}

void to_json(nlohmann::json& j, const MetricsTable& t) {
  nlohmann::json buckets = nlohmann::json::array();
  for (int b = 0; b < static_cast<int>(t.per_bucket.size()); ++b) {
    const BucketRow& row = t.per_bucket[b];
    buckets.push_back({{"lo", b / 10.0},
                       {"hi", (b + 1) / 10.0},
                       {"count", row.count},
                       {"occluded_count", row.occluded_count},
                       {"full_iou", row.full},
                       {"occluded_iou", row.occluded}});
  }
  j = nlohmann::json{{"full_miou", t.full_miou},
                     {"occluded_miou", t.occluded_miou},
                     {"n_objects", t.n_objects},
                     {"buckets", std::move(buckets)}};
}

std::string format_text(const MetricsTable& t) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "full mIoU      %8.4f   (over %d object-frames)\n",
                t.full_miou, t.n_objects);
  os << line;
  std::snprintf(line, sizeof(line), "occluded mIoU  %8.4f\n\n", t.occluded_miou);
  os << line;
  os << "occlusion      count     full  occluded\n";
  for (int b = 0; b < static_cast<int>(t.per_bucket.size()); ++b) {
    const BucketRow& row = t.per_bucket[b];
    std::snprintf(line, sizeof(line), "[%.1f, %.1f%c  %8d %8.4f %9.4f\n", b / 10.0, (b + 1) / 10.0,
                  b == 9 ? ']' : ')', row.count, row.full, row.occluded);
    os << line;
  }
  return os.str();
}

std::string bucket_csv(const MetricsTable& t) {
  std::ostringstream os;
  os << "bucket_lo,bucket_hi,count,occluded_count,full_iou,occluded_iou\n";
  char line[128];
  for (int b = 0; b < static_cast<int>(t.per_bucket.size()); ++b) {
    const BucketRow& row = t.per_bucket[b];
    std::snprintf(line, sizeof(line), "%.1f,%.1f,%d,%d,%.6f,%.6f\n", b / 10.0, (b + 1) / 10.0,
                  row.count, row.occluded_count, row.full, row.occluded);
    os << line;
  }
  return os.str();
}

}  // namespace savos
