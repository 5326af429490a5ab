#pragma once

#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "savos/grid.hpp"

namespace savos {

/// Intersection over union of two binary masks; 1.0 when both are empty.
double iou(const MaskU8& pred, const MaskU8& gt);

/// Same, with both masks first restricted to `region`. An empty restricted
/// union again counts as a perfect 1.0.
double iou(const MaskU8& pred, const MaskU8& gt, const MaskU8& region);

/// amodal AND NOT visible. The visible mask must be a subset of the amodal
/// one (ContractViolation otherwise).
MaskU8 occluded_region(const MaskU8& amodal, const MaskU8& visible);

/// 1 - |visible| / |amodal|, in [0, 1]. The amodal mask must be non-empty.
double occlusion_rate(const MaskU8& amodal, const MaskU8& visible);

/// Filled convex hull of the visible pixel centers: every pixel whose center
/// lies inside or on the hull boundary turns on. An empty input yields an
/// empty prediction. Exact integer arithmetic throughout.
MaskU8 convex_baseline(const MaskU8& visible);

struct BucketRow {
  int count = 0;           // object-frame samples whose occlusion rate lands here
  int occluded_count = 0;  // of those, how many had a non-empty occluded region
  double full = 0.0;       // mean full-mask IoU over `count` samples
  double occluded = 0.0;   // mean occluded-region IoU over `occluded_count` samples
};

struct MetricsTable {
  double full_miou = 0.0;
  double occluded_miou = 0.0;
  std::vector<BucketRow> per_bucket;  // 10 rows: [0.0,0.1), ..., [0.9,1.0]
  int n_objects = 0;                  // object-frame samples behind full_miou
};

/// Keep only object-frames whose occlusion rate falls in [lo, hi].
struct OcclusionFilter {
  double lo = 0.0, hi = 1.0;
};

/// Per-object-frame IoUs averaged into one table. Indexing is [frame][object]
/// across all three arrays. Object-frames with an empty amodal ground-truth
/// mask are skipped (the object is absent); frames with nothing occluded
/// contribute to the full-mask average only.
MetricsTable evaluate(const std::vector<std::vector<MaskU8>>& preds,
                      const std::vector<std::vector<MaskU8>>& amodal,
                      const std::vector<std::vector<MaskU8>>& visible,
                      const OcclusionFilter* filter = nullptr);

void to_json(nlohmann::json& j, const MetricsTable& t);

/// Human-readable aligned table, one bucket per row.
std::string format_text(const MetricsTable& t);

/// CSV with a header row and one row per occlusion bucket.
std::string bucket_csv(const MetricsTable& t);

}  // namespace savos
