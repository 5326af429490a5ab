#include "savos/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "savos/common.hpp"
#include "savos/evalkit.hpp"
#include "savos/rng.hpp"

namespace savos {

namespace {

constexpr std::uint64_t kShuffleTag = 0x65706f6368ull;  // distinct stream per epoch

GridF sigmoid_grid(const GridF& logits) {
  GridF out(logits.h, logits.w);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float x = logits.v[i];
    out.v[i] = x >= 0 ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
  }
  return out;
}

GridF binary01(const GridF& g) {
  GridF out(g.h, g.w);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = g.v[i] > 0.5f ? 1.0f : 0.0f;
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("train: learning rate must be positive");
  if (batch_size < 1) throw ConfigError("train: batch size must be at least 1");
  if (max_steps < 1) throw ConfigError("train: max steps must be at least 1");
  if (grad_clip < 0) throw ConfigError("train: gradient clip must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint cadence must be non-negative");
  weights.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"learning_rate", cfg.learning_rate},
                     {"batch_size", cfg.batch_size},
                     {"max_steps", cfg.max_steps},
                     {"lambda1", cfg.weights.lambda1},
                     {"lambda2", cfg.weights.lambda2},
                     {"grad_clip", cfg.grad_clip},
                     {"seed", cfg.seed},
                     {"checkpoint_every", cfg.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  static const char* known[] = {"learning_rate", "batch_size", "max_steps",       "lambda1",
                                "lambda2",       "grad_clip",  "checkpoint_every", "seed"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown train config key '" + key + "'");
  }
  cfg = TrainConfig{};
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(cfg.learning_rate);
  if (j.contains("batch_size")) j.at("batch_size").get_to(cfg.batch_size);
  if (j.contains("max_steps")) j.at("max_steps").get_to(cfg.max_steps);
  if (j.contains("lambda1")) j.at("lambda1").get_to(cfg.weights.lambda1);
  if (j.contains("lambda2")) j.at("lambda2").get_to(cfg.weights.lambda2);
  if (j.contains("grad_clip")) j.at("grad_clip").get_to(cfg.grad_clip);
  if (j.contains("seed")) j.at("seed").get_to(cfg.seed);
  if (j.contains("checkpoint_every")) j.at("checkpoint_every").get_to(cfg.checkpoint_every);
}

void TTAConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("tta: learning rate must be positive");
  if (max_iters < 1) throw ConfigError("tta: max iterations must be at least 1");
  if (!(stop_delta >= 0)) throw ConfigError("tta: stop delta must be non-negative");
  if (stop_window < 1) throw ConfigError("tta: stop window must be at least 1");
}

void to_json(nlohmann::json& j, const TTAConfig& cfg) {
  j = nlohmann::json{{"learning_rate", cfg.learning_rate},
                     {"max_iters", cfg.max_iters},
                     {"stop_delta", cfg.stop_delta},
                     {"stop_window", cfg.stop_window}};
}

void from_json(const nlohmann::json& j, TTAConfig& cfg) {
  static const char* known[] = {"learning_rate", "max_iters", "stop_delta", "stop_window"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown tta config key '" + key + "'");
  }
  cfg = TTAConfig{};
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(cfg.learning_rate);
  if (j.contains("max_iters")) j.at("max_iters").get_to(cfg.max_iters);
  if (j.contains("stop_delta")) j.at("stop_delta").get_to(cfg.stop_delta);
  if (j.contains("stop_window")) j.at("stop_window").get_to(cfg.stop_window);
}

namespace {

bool finite_outputs(const std::vector<AmodalPrediction>& preds) {
  const auto ok = [](const std::vector<float>& v) {
    for (float x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  for (const auto& p : preds)
    if (!ok(p.mask_logits.v) || !ok(p.alpha_logit.v) || !ok(p.motion.dx.v) ||
        !ok(p.motion.dy.v))
      return false;
  return true;
}

}  // namespace

SequenceLoss sequence_gradients(SavosNet<float>& net, const ObjectSequence& seq,
                                const LossWeights& weights) {
  const int T = seq.frames();
  PassCache<float> cache_f, cache_b;
  const auto preds_f = net.forward_pass(seq, Direction::kForward, &cache_f);
  const auto preds_b = net.forward_pass(seq, Direction::kBackward, &cache_b);

  // A diverged network is reported as a non-finite loss rather than tripping
  // the loss kernels' input contracts; gradients stay untouched.
  if (!finite_outputs(preds_f) || !finite_outputs(preds_b)) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return SequenceLoss{nan, nan, nan};
  }

  std::vector<GridF> prob_f(T), prob_b(T), merged(T);
  std::vector<std::vector<GridF>> vis(T);
  for (int t = 0; t < T; ++t) {
    prob_f[t] = sigmoid_grid(preds_f[t].mask_logits);
    prob_b[t] = sigmoid_grid(preds_b[t].mask_logits);
    merged[t] = merge_bidirectional(prob_f[t], preds_f[t].alpha_logit, prob_b[t],
                                    preds_b[t].alpha_logit);
    vis[t] = {binary01(seq.visibles[t]), binary01(seq.others[t])};
  }

  // Forward direction: the merged track must warp onto the next frame.
  ObjectPrediction<float> fwd;
  fwd.object_index = 0;
  fwd.masks = merged;
  fwd.motions.reserve(T);
  for (int t = 0; t < T; ++t) fwd.motions.push_back(preds_f[t].motion);
  std::vector<ObjectGrads<float>> fwd_grads;
  const LossReport fwd_report = total_loss<float>({fwd}, vis, weights, &fwd_grads);

  // Backward direction: the same merged track, run in reverse order with the
  // backward pass's motions (which carry original frame t onto t-1).
  ObjectPrediction<float> bwd;
  bwd.object_index = 0;
  std::vector<std::vector<GridF>> vis_rev(T);
  for (int r = 0; r < T; ++r) {
    bwd.masks.push_back(merged[T - 1 - r]);
    bwd.motions.push_back(preds_b[T - 1 - r].motion);
    vis_rev[r] = vis[T - 1 - r];
  }
  std::vector<ObjectGrads<float>> bwd_grads;
  const LossReport bwd_report = total_loss<float>({bwd}, vis_rev, weights, &bwd_grads);

  std::vector<PredictionGrads<float>> gf(T), gb(T);
  for (int t = 0; t < T; ++t) {
    GridF d_merged = fwd_grads[0].masks[t];
    const GridF& from_bwd = bwd_grads[0].masks[T - 1 - t];
    for (std::size_t i = 0; i < d_merged.size(); ++i) d_merged.v[i] += from_bwd.v[i];

    const MergeGrads<float> mg =
        merge_bidirectional_vjp(prob_f[t], preds_f[t].alpha_logit, prob_b[t],
                                preds_b[t].alpha_logit, d_merged);
    gf[t].mask_logits = GridF(d_merged.h, d_merged.w);
    gb[t].mask_logits = GridF(d_merged.h, d_merged.w);
    for (std::size_t i = 0; i < d_merged.size(); ++i) {
      gf[t].mask_logits.v[i] = mg.fwd_mask.v[i] * prob_f[t].v[i] * (1.0f - prob_f[t].v[i]);
      gb[t].mask_logits.v[i] = mg.bwd_mask.v[i] * prob_b[t].v[i] * (1.0f - prob_b[t].v[i]);
    }
    gf[t].alpha_logit = mg.fwd_alpha;
    gb[t].alpha_logit = mg.bwd_alpha;
    gf[t].motion = fwd_grads[0].motions[t];
    gb[t].motion = bwd_grads[0].motions[T - 1 - t];
  }
  net.backward_pass(cache_f, gf);
  net.backward_pass(cache_b, gb);

  return SequenceLoss{fwd_report.l_m + bwd_report.l_m, fwd_report.l_c + bwd_report.l_c,
                      fwd_report.total + bwd_report.total};
}

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg)
    : model_cfg_(model_cfg), cfg_(cfg) {
  model_cfg_.validate();
  cfg_.validate();
}

TrainResult Trainer::train(const VideoProvider& dataset, int video_count,
                           const std::string& out_dir, const Checkpoint* resume) {
  require(video_count >= 1, "train: empty dataset");

  SavosNet<float> net(model_cfg_);
  net.init_params(model_cfg_.seed);
  Adam<float> opt;
  opt.lr = cfg_.learning_rate;
  opt.clip_norm = cfg_.grad_clip;
  std::uint64_t step = 0;
  if (resume) {
    restore(*resume, net, &opt);
    step = resume->step;
  }
  auto reg = net.params();

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path csv_path = fs::path(out_dir) / "train_log.csv";
  const bool fresh_log = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
  std::ofstream csv(csv_path, std::ios::app);
  require(csv.good(), "train: cannot open the log for writing");
  if (fresh_log) csv << "step,l_m,l_c,total,wall_time\n";

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t order_epoch = ~0ull;
  std::vector<int> order(static_cast<std::size_t>(video_count));

  while (step < static_cast<std::uint64_t>(cfg_.max_steps)) {
    zero_grads(reg);
    double l_m = 0, l_c = 0, total = 0;
    for (int b = 0; b < cfg_.batch_size; ++b) {
      const std::uint64_t cursor =
          step * static_cast<std::uint64_t>(cfg_.batch_size) + static_cast<std::uint64_t>(b);
      const std::uint64_t epoch = cursor / static_cast<std::uint64_t>(video_count);
      if (epoch != order_epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(splitmix64(cfg_.seed ^ (kShuffleTag + epoch)));
        shuffle_rng.shuffle(order);
        order_epoch = epoch;
      }
      const VideoSample video =
          dataset(order[cursor % static_cast<std::uint64_t>(video_count)]);
      for (const auto& seq : extract_sequences(video, model_cfg_.patch_size)) {
        const SequenceLoss sl = sequence_gradients(net, seq, cfg_.weights);
        l_m += sl.l_m;
        l_c += sl.l_c;
        total += sl.total;
      }
    }

    if (!std::isfinite(total) || !std::isfinite(grad_norm(reg))) {
      result.aborted_non_finite = true;
      break;  // the update is not applied; parameters stay at the last good step
    }

    opt.step(reg);
    ++step;

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const TrainLogRow row{step, l_m, l_c, total, wall};
    result.log.push_back(row);
    char line[160];
    std::snprintf(line, sizeof(line), "%llu,%.9g,%.9g,%.9g,%.3f\n",
                  static_cast<unsigned long long>(row.step), row.l_m, row.l_c, row.total,
                  row.wall_time);
    csv << line;
    csv.flush();

    if (cfg_.checkpoint_every > 0 && step % static_cast<std::uint64_t>(cfg_.checkpoint_every) == 0) {
      const Checkpoint cp = snapshot(net, step, &opt);
      save_checkpoint((fs::path(out_dir) /
                       ("ckpt_step_" + std::to_string(step) + ".svck")).string(),
                      cp);
    }
  }

  result.checkpoint = snapshot(net, step, &opt);
  save_checkpoint((fs::path(out_dir) / "checkpoint_final.svck").string(), result.checkpoint);
  return result;
}

bool should_stop(const std::vector<double>& curve, int window, double delta) {
  const int applied = static_cast<int>(curve.size()) - 1;
  if (applied < window) return false;
  return curve[applied] - curve[applied - window] < delta;
}

std::vector<std::vector<MaskU8>> predict_video(const SavosNet<float>& net,
                                               const VideoSample& video) {
  std::vector<std::vector<MaskU8>> out(
      video.T(), std::vector<MaskU8>(video.K(),
                                     MaskU8(video.config.canvas_h, video.config.canvas_w)));
  for (const auto& seq : extract_sequences(video, net.config().patch_size)) {
    const auto pf = net.forward_pass(seq, Direction::kForward);
    const auto pb = net.forward_pass(seq, Direction::kBackward);
    for (int t = 0; t < seq.frames(); ++t) {
      const GridF merged =
          merge_bidirectional(sigmoid_grid(pf[t].mask_logits), pf[t].alpha_logit,
                              sigmoid_grid(pb[t].mask_logits), pb[t].alpha_logit);
      const GridF canvas =
          stitch_prediction(merged, seq.window, video.config.canvas_h, video.config.canvas_w);
      out[t][seq.object_index] = binarize(canvas);
    }
  }
  return out;
}

double visible_iou_statistic(const std::vector<std::vector<MaskU8>>& preds,
                             const VideoSample& video) {
  double sum = 0;
  int n = 0;
  for (int t = 0; t < video.T(); ++t)
    for (int k = 0; k < video.K(); ++k) {
      if (mask_area(video.visible[t][k]) == 0) continue;
      sum += iou(preds[t][k], video.visible[t][k], video.visible[t][k]);
      n += 1;
    }
  return n > 0 ? sum / n : 0.0;
}

TTAResult test_time_adapt(const Checkpoint& base, const VideoSample& video,
                          const TTAConfig& cfg) {
  cfg.validate();
  SavosNet<float> net(base.model);
  restore(base, net);  // the checkpoint itself is read-only here
  Adam<float> opt;
  opt.lr = cfg.learning_rate;
  opt.clip_norm = 1.0;
  auto reg = net.params();

  const auto seqs = extract_sequences(video, base.model.patch_size);

  TTAResult res;
  const auto record = [&res, &video]() {
    res.visible_iou.push_back(visible_iou_statistic(res.predictions, video));
    res.occluded_iou.push_back(
        evaluate(res.predictions, video.amodal, video.visible).occluded_miou);
  };
  res.predictions = predict_video(net, video);
  record();
  const auto before = res.predictions;

  for (int i = 1; i <= cfg.max_iters; ++i) {
    zero_grads(reg);
    double total = 0;
    for (const auto& seq : seqs) total += sequence_gradients(net, seq, LossWeights{}).total;
    if (!std::isfinite(total) || !std::isfinite(grad_norm(reg))) {
      res.predictions = before;
      res.visible_iou.resize(1);
      res.occluded_iou.resize(1);
      res.stop_iteration = 0;
      res.stop_reason = "non_finite";
      res.warning_non_finite = true;
      return res;
    }
    opt.step(reg);
    res.stop_iteration = i;
    res.predictions = predict_video(net, video);
    record();
    if (should_stop(res.visible_iou, cfg.stop_window, cfg.stop_delta)) {
      res.stop_reason = "window";
      return res;
    }
  }
  res.stop_reason = "max_iters";
  return res;
}

}  // namespace savos
