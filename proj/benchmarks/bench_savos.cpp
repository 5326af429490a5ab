// Hot-path timings: warp splatting, the loss suite, the recurrent model, and
// video synthesis. Narrow with --benchmark_filter=warp etc.

#include <benchmark/benchmark.h>

#include <vector>

#include "savos/losses.hpp"
#include "savos/model.hpp"
#include "savos/rng.hpp"
#include "savos/sequence.hpp"
#include "savos/synthgen.hpp"
#include "savos/warp.hpp"

using namespace savos;

namespace {

Grid<float> random_mask(int n, Rng& rng) {
  Grid<float> g(n, n);
  for (auto& v : g.v) v = static_cast<float>(rng.uniform());
  return g;
}

FlowFieldT<float> random_flow(int n, Rng& rng) {
  FlowFieldT<float> f(n, n);
  for (auto& v : f.dx.v) v = static_cast<float>(rng.uniform(-3.0, 3.0));
  for (auto& v : f.dy.v) v = static_cast<float>(rng.uniform(-3.0, 3.0));
  return f;
}

GenConfig bench_gen_config() {
  GenConfig cfg;
  cfg.canvas_h = cfg.canvas_w = 64;
  cfg.num_objects = 2;
  cfg.num_frames = 8;
  cfg.nodes_min = 5;
  cfg.nodes_max = 8;
  cfg.radius_min = 8.0;
  cfg.radius_max = 14.0;
  cfg.speed_min = 1.0;
  cfg.speed_max = 2.0;
  cfg.max_retries = 400;
  cfg.seed = 42;
  return cfg;
}

const VideoSample& bench_video() {
  static const VideoSample v = generate_video(bench_gen_config());
  return v;
}

}  // namespace

static void BM_ForwardWarp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  const Grid<float> mask = random_mask(n, rng);
  const FlowFieldT<float> flow = random_flow(n, rng);
  for (auto _ : state) {
    Grid<float> out = forward_warp(mask, flow);
    benchmark::DoNotOptimize(out.v.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_ForwardWarp)->Arg(64)->Arg(128);

static void BM_ForwardWarpVjp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  const Grid<float> mask = random_mask(n, rng);
  const FlowFieldT<float> flow = random_flow(n, rng);
  const Grid<float> grad_out = random_mask(n, rng);
  for (auto _ : state) {
    WarpGrads<float> g = forward_warp_vjp(mask, flow, grad_out);
    benchmark::DoNotOptimize(g.mask.v.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_ForwardWarpVjp)->Arg(64)->Arg(128);

static void BM_MergeBidirectional(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(3);
  const Grid<float> fm = random_mask(n, rng), fa = random_mask(n, rng);
  const Grid<float> bm = random_mask(n, rng), ba = random_mask(n, rng);
  for (auto _ : state) {
    Grid<float> out = merge_bidirectional(fm, fa, bm, ba);
    benchmark::DoNotOptimize(out.v.data());
  }
}
BENCHMARK(BM_MergeBidirectional)->Arg(64);

static void BM_TotalLoss(benchmark::State& state) {
  const int n = 64, T = 8, K = 2;
  Rng rng(4);
  std::vector<ObjectPrediction<float>> preds(K);
  std::vector<std::vector<Grid<float>>> visibles(T);
  for (int k = 0; k < K; ++k) {
    preds[k].object_index = k;
    for (int t = 0; t < T; ++t) {
      preds[k].masks.push_back(random_mask(n, rng));
      preds[k].motions.push_back(random_flow(n, rng));
    }
  }
  for (int t = 0; t < T; ++t) {
    // One partition field per frame keeps the K visible masks disjoint.
    const Grid<float> field = random_mask(n, rng);
    for (int k = 0; k < K; ++k) {
      Grid<float> v(n, n);
      const float lo = 0.4f * static_cast<float>(k), hi = lo + 0.35f;
      for (std::size_t i = 0; i < field.size(); ++i)
        v.v[i] = (field.v[i] >= lo && field.v[i] < hi) ? 1.0f : 0.0f;
      visibles[t].push_back(std::move(v));
    }
  }
  const LossWeights w;
  std::vector<ObjectGrads<float>> grads;
  for (auto _ : state) {
    LossReport rep = total_loss(preds, visibles, w, &grads);
    benchmark::DoNotOptimize(rep.total);
  }
}
BENCHMARK(BM_TotalLoss);

static void BM_ModelForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.patch_size = 32;
  cfg.feature_channels = 16;
  cfg.hidden_channels = 16;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 2;
  cfg.seed = 7;
  const SavosNet<float> net(cfg);
  const auto seqs = extract_sequences(bench_video(), cfg.patch_size);
  for (auto _ : state) {
    auto preds = net.forward_pass(seqs[0], Direction::kForward);
    benchmark::DoNotOptimize(preds.data());
  }
}
BENCHMARK(BM_ModelForward);

static void BM_ModelForwardBackward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.patch_size = 32;
  cfg.feature_channels = 16;
  cfg.hidden_channels = 16;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 2;
  cfg.seed = 7;
  SavosNet<float> net(cfg);
  const auto seqs = extract_sequences(bench_video(), cfg.patch_size);
  const int T = seqs[0].frames();
  for (auto _ : state) {
    PassCache<float> cache;
    auto preds = net.forward_pass(seqs[0], Direction::kForward, &cache);
    std::vector<PredictionGrads<float>> grads(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      grads[t].mask_logits = Grid<float>(cfg.patch_size, cfg.patch_size, 1e-3f);
      grads[t].alpha_logit = Grid<float>(cfg.patch_size, cfg.patch_size, 1e-3f);
      grads[t].motion = FlowFieldT<float>(cfg.patch_size, cfg.patch_size, 1e-3f, 1e-3f);
    }
    zero_grads(net.params());
    net.backward_pass(cache, grads);
    benchmark::DoNotOptimize(preds.data());
  }
}
BENCHMARK(BM_ModelForwardBackward);

static void BM_GenerateVideo(benchmark::State& state) {
  const GenConfig cfg = bench_gen_config();  // fixed seed: same work every iteration
  for (auto _ : state) {
    VideoSample v = generate_video(cfg);
    benchmark::DoNotOptimize(v.frames.data());
  }
}
BENCHMARK(BM_GenerateVideo);

static void BM_ExtractSequences(benchmark::State& state) {
  for (auto _ : state) {
    auto seqs = extract_sequences(bench_video(), 32);
    benchmark::DoNotOptimize(seqs.data());
  }
}
BENCHMARK(BM_ExtractSequences);

BENCHMARK_MAIN();
