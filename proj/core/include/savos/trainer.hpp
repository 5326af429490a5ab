#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "savos/checkpoint.hpp"
#include "savos/losses.hpp"
#include "savos/model.hpp"
#include "savos/sequence.hpp"
#include "savos/synthgen.hpp"

namespace savos {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 1;       // videos per optimizer step
  int max_steps = 100;
  LossWeights weights;
  double grad_clip = 1.0;   // global-norm clip; <= 0 disables
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // extra checkpoints every N steps; 0 = final only

  void validate() const;  // ConfigError on nonsense
};
void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);  // rejects unknown keys

struct TTAConfig {
  double learning_rate = 1e-5;
  int max_iters = 50;
  double stop_delta = 0.01;  // required visible-IoU gain over the window
  int stop_window = 10;

  void validate() const;
};
void to_json(nlohmann::json& j, const TTAConfig& cfg);
void from_json(const nlohmann::json& j, TTAConfig& cfg);

struct TrainLogRow {
  std::uint64_t step = 0;
  double l_m = 0.0, l_c = 0.0, total = 0.0;
  double wall_time = 0.0;  // seconds since this run started
};

struct TrainResult {
  Checkpoint checkpoint;          // last good state (always saved to disk too)
  std::vector<TrainLogRow> log;   // rows appended by this run
  bool aborted_non_finite = false;
};

/// Hands the trainer video `index` in [0, count); must be deterministic.
using VideoProvider = std::function<VideoSample(int)>;

/// Both temporal directions of one object sequence: the two passes are merged
/// per-pixel through the alpha logits, the merged track pays the warp and
/// consistency losses against {own, others} visibility (in run order for the
/// backward direction), and gradients flow back through both passes.
/// Accumulates into the net's parameter gradients; returns the loss split.
/// Non-finite network outputs come back as NaN losses with the gradients
/// left untouched, so callers can abort cleanly.
struct SequenceLoss {
  double l_m = 0.0, l_c = 0.0, total = 0.0;
};
SequenceLoss sequence_gradients(SavosNet<float>& net, const ObjectSequence& seq,
                                const LossWeights& weights);

class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg);

  /// Runs until max_steps, appending to <out_dir>/train_log.csv and writing
  /// <out_dir>/checkpoint_final.svck (plus cadence checkpoints). Pass `resume`
  /// to continue a run: the step counter, parameters, and optimizer state pick
  /// up where the checkpoint left off, and the epoch order stays the one the
  /// seed dictates. A non-finite loss aborts before the bad update; the
  /// returned (and saved) checkpoint is the last good state.
  TrainResult train(const VideoProvider& dataset, int video_count, const std::string& out_dir,
                    const Checkpoint* resume = nullptr);

 private:
  ModelConfig model_cfg_;
  TrainConfig cfg_;
};

/// First applied-iteration index i (1-based, curve[0] = before any update)
/// at which curve[i] - curve[i - window] < delta; the adapter stops there.
bool should_stop(const std::vector<double>& curve, int window, double delta);

/// Full-canvas binarized amodal predictions, [frame][object]. Objects without
/// a single visible pixel anywhere get empty masks.
std::vector<std::vector<MaskU8>> predict_video(const SavosNet<float>& net,
                                               const VideoSample& video);

/// Mean over frames/objects (nonempty visible only) of the predicted mask's
/// IoU against the visible mask restricted to the visible pixels — i.e. how
/// much of the visible evidence the amodal prediction recovers.
double visible_iou_statistic(const std::vector<std::vector<MaskU8>>& preds,
                             const VideoSample& video);

struct TTAResult {
  std::vector<std::vector<MaskU8>> predictions;  // at the stopping iterate
  std::vector<double> visible_iou;               // [0] = pre-adaptation
  std::vector<double> occluded_iou;              // ground-truth diagnostic, same indexing;
                                                 // never consulted by the stop rule
  int stop_iteration = 0;                        // optimizer iterations applied
  std::string stop_reason;                       // "window" | "max_iters" | "non_finite"
  bool warning_non_finite = false;
};

/// Adapts a copy of the checkpointed model to one video by minimizing the
/// same self-supervised objective, one full pass over the video per
/// iteration. The base checkpoint is never touched.
TTAResult test_time_adapt(const Checkpoint& base, const VideoSample& video, const TTAConfig& cfg);

}  // namespace savos
