#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "savos/checkpoint.hpp"
#include "savos/common.hpp"
#include "savos/trainer.hpp"

using namespace savos;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model(std::uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.patch_size = 16;
  cfg.feature_channels = 8;
  cfg.hidden_channels = 8;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 2;
  cfg.seed = seed;
  return cfg;
}

GenConfig tiny_gen(std::uint64_t seed) {
  GenConfig cfg;
  cfg.canvas_h = cfg.canvas_w = 32;
  cfg.num_objects = 2;
  cfg.num_frames = 6;
  cfg.nodes_min = 5;
  cfg.nodes_max = 7;
  cfg.radius_min = 5.0;
  cfg.radius_max = 8.0;
  cfg.speed_min = 1.0;
  cfg.speed_max = 2.0;
  cfg.max_retries = 400;
  cfg.seed = seed;
  return cfg;
}

std::vector<VideoSample> make_dataset(int n, std::uint64_t seed0 = 100) {
  std::vector<VideoSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(generate_video(tiny_gen(seed0 + i)));
  return out;
}

VideoProvider provider_for(const std::vector<VideoSample>& videos) {
  return [&videos](int i) { return videos[static_cast<std::size_t>(i)]; };
}

std::string fresh_dir(const char* stem) {
  const fs::path p = fs::temp_directory_path() / stem;
  fs::remove_all(p);
  return p.string();
}

std::vector<float> grads_of(SavosNet<float>& net) {
  std::vector<float> flat;
  for (const auto& p : net.params())
    flat.insert(flat.end(), p.grad->begin(), p.grad->end());
  return flat;
}

void poison_flows(VideoSample& video) {
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (auto& frame : video.flows)
    for (auto& f : frame) {
      std::fill(f.dx.v.begin(), f.dx.v.end(), nan);
      std::fill(f.dy.v.begin(), f.dy.v.end(), nan);
    }
}

// Two pixels of object 0 moving nowhere; object 1 is fully covered in every
// frame, so extraction drops it and predictions must leave its slots empty.
VideoSample half_visible_video() {
  VideoSample v;
  v.config.canvas_h = v.config.canvas_w = 16;
  v.config.num_objects = 2;
  v.config.num_frames = 3;
  v.depth_order = {0, 1};
  for (int t = 0; t < 3; ++t) {
    v.frames.emplace_back(16, 16);
    std::vector<MaskU8> am(2, MaskU8(16, 16)), vs(2, MaskU8(16, 16));
    am[0].at(4, 4) = am[0].at(4, 5) = 255;
    vs[0] = am[0];
    am[1].at(8, 8) = 255;
    v.amodal.push_back(std::move(am));
    v.visible.push_back(std::move(vs));
    v.flows.push_back({FlowField(16, 16), FlowField(16, 16)});
  }
  return v;
}

}  // namespace

TEST_CASE("train config validates and round-trips through json") {
  TrainConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.max_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.grad_clip = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.checkpoint_every = -2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.weights.lambda1 = bad.weights.lambda2 = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  TrainConfig cfg;
  cfg.learning_rate = 3e-4;
  cfg.batch_size = 2;
  cfg.max_steps = 17;
  cfg.weights.lambda1 = 0.5;
  cfg.weights.lambda2 = 2.0;
  cfg.grad_clip = 0.25;
  cfg.seed = 99;
  cfg.checkpoint_every = 5;
  nlohmann::json j = cfg;
  TrainConfig back = j.get<TrainConfig>();
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.max_steps == cfg.max_steps);
  CHECK(back.weights.lambda1 == cfg.weights.lambda1);
  CHECK(back.weights.lambda2 == cfg.weights.lambda2);
  CHECK(back.grad_clip == cfg.grad_clip);
  CHECK(back.seed == cfg.seed);
  CHECK(back.checkpoint_every == cfg.checkpoint_every);

  const nlohmann::json stray = {{"learningrate", 1e-3}};
  CHECK_THROWS_WITH_AS(stray.get<TrainConfig>(),
                       "unknown train config key 'learningrate'", ConfigError);
}

TEST_CASE("tta config validates and round-trips through json") {
  TTAConfig bad;
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TTAConfig{};
  bad.max_iters = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TTAConfig{};
  bad.stop_delta = -0.01;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TTAConfig{};
  bad.stop_window = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  TTAConfig cfg;
  cfg.learning_rate = 2e-5;
  cfg.max_iters = 30;
  cfg.stop_delta = 0.02;
  cfg.stop_window = 4;
  nlohmann::json j = cfg;
  TTAConfig back = j.get<TTAConfig>();
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.max_iters == cfg.max_iters);
  CHECK(back.stop_delta == cfg.stop_delta);
  CHECK(back.stop_window == cfg.stop_window);

  const nlohmann::json stray = {{"stopdelta", 0.5}};
  CHECK_THROWS_WITH_AS(stray.get<TTAConfig>(), "unknown tta config key 'stopdelta'",
                       ConfigError);
}

TEST_CASE("consistency weight of zero drops the term from the gradient only") {
  const auto video = generate_video(tiny_gen(41));
  const auto seqs = extract_sequences(video, 16);
  REQUIRE(!seqs.empty());
  const ObjectSequence& seq = seqs.front();

  SavosNet<float> net(tiny_model(5));
  net.init_params(5);
  auto reg = net.params();

  LossWeights w10{1.0, 0.0}, w01{0.0, 1.0}, w11{1.0, 1.0};
  zero_grads(reg);
  const SequenceLoss r10 = sequence_gradients(net, seq, w10);
  const std::vector<float> g10 = grads_of(net);
  zero_grads(reg);
  const SequenceLoss r01 = sequence_gradients(net, seq, w01);
  const std::vector<float> g01 = grads_of(net);
  zero_grads(reg);
  const SequenceLoss r11 = sequence_gradients(net, seq, w11);
  const std::vector<float> g11 = grads_of(net);

  // The diagnostics stay raw: l_c is still reported when its weight is zero.
  CHECK(r10.l_c > 0.0);
  CHECK(r10.l_c == doctest::Approx(r11.l_c).epsilon(1e-6));
  CHECK(r10.l_m == doctest::Approx(r11.l_m).epsilon(1e-6));
  CHECK(r10.total == doctest::Approx(r10.l_m).epsilon(1e-9));

  // But the gradient excludes it: grad(1,1) = grad(1,0) + grad(0,1), and the
  // consistency part is genuinely nonzero.
  double max_lin = 0.0, max_g11 = 0.0, norm01 = 0.0;
  for (std::size_t i = 0; i < g11.size(); ++i) {
    max_lin = std::max(max_lin, std::abs(double(g11[i]) - double(g10[i]) - double(g01[i])));
    max_g11 = std::max(max_g11, std::abs(double(g11[i])));
    norm01 += double(g01[i]) * double(g01[i]);
  }
  CHECK(max_lin / std::max(1.0, max_g11) < 1e-3);
  CHECK(std::sqrt(norm01) > 1e-8);

  // Same inputs, same accumulation: bit-for-bit repeatable.
  zero_grads(reg);
  const SequenceLoss again = sequence_gradients(net, seq, w10);
  CHECK(again.total == r10.total);
  CHECK(grads_of(net) == g10);
}

TEST_CASE("a short run descends on a tiny dataset") {
  const auto videos = make_dataset(8);
  std::vector<double> first_totals, last_totals;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.max_steps = 50;
    cfg.seed = seed;
    Trainer trainer(tiny_model(seed), cfg);
    const std::string dir = fresh_dir(("savos_descent_" + std::to_string(seed)).c_str());
    const TrainResult res = trainer.train(provider_for(videos), 8, dir);
    REQUIRE(res.log.size() == 50);
    CHECK(!res.aborted_non_finite);
    for (std::size_t i = 0; i < res.log.size(); ++i) {
      CHECK(res.log[i].step == i + 1);
      if (i > 0) CHECK(res.log[i].wall_time >= res.log[i - 1].wall_time);
    }
    first_totals.push_back(res.log.front().total);
    last_totals.push_back(res.log.back().total);
  }
  std::sort(first_totals.begin(), first_totals.end());
  std::sort(last_totals.begin(), last_totals.end());
  CHECK(last_totals[1] < first_totals[1]);  // medians over the three seeds
}

TEST_CASE("identical seeds reproduce the run exactly") {
  const auto videos = make_dataset(4);
  TrainConfig cfg;
  cfg.max_steps = 8;
  cfg.learning_rate = 1e-3;
  cfg.seed = 7;

  Trainer a(tiny_model(7), cfg), b(tiny_model(7), cfg);
  const TrainResult ra = a.train(provider_for(videos), 4, fresh_dir("savos_det_a"));
  const TrainResult rb = b.train(provider_for(videos), 4, fresh_dir("savos_det_b"));
  REQUIRE(ra.log.size() == rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].l_m == rb.log[i].l_m);
    CHECK(ra.log[i].l_c == rb.log[i].l_c);
    CHECK(ra.log[i].total == rb.log[i].total);
  }
  CHECK(fingerprint(ra.checkpoint.params) == fingerprint(rb.checkpoint.params));

  TrainConfig other = cfg;
  other.seed = 8;
  Trainer c(tiny_model(8), other);
  const TrainResult rc = c.train(provider_for(videos), 4, fresh_dir("savos_det_c"));
  CHECK(fingerprint(rc.checkpoint.params) != fingerprint(ra.checkpoint.params));
}

TEST_CASE("resuming matches the uninterrupted run bit for bit") {
  const auto videos = make_dataset(5);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.seed = 21;
  cfg.max_steps = 10;

  Trainer full(tiny_model(21), cfg);
  const TrainResult whole = full.train(provider_for(videos), 5, fresh_dir("savos_res_full"));

  TrainConfig head = cfg;
  head.max_steps = 4;
  Trainer first(tiny_model(21), head);
  const TrainResult part = first.train(provider_for(videos), 5, fresh_dir("savos_res_head"));
  CHECK(part.checkpoint.step == 4);

  Trainer second(tiny_model(21), cfg);  // same horizon as the uninterrupted run
  const std::string tail_dir = fresh_dir("savos_res_tail");
  const TrainResult rest =
      second.train(provider_for(videos), 5, tail_dir, &part.checkpoint);

  REQUIRE(rest.log.size() == 6);
  for (std::size_t i = 0; i < rest.log.size(); ++i) {
    CHECK(rest.log[i].step == i + 5);
    CHECK(rest.log[i].l_m == whole.log[i + 4].l_m);
    CHECK(rest.log[i].l_c == whole.log[i + 4].l_c);
    CHECK(rest.log[i].total == whole.log[i + 4].total);
  }
  CHECK(rest.checkpoint.step == 10);
  CHECK(fingerprint(rest.checkpoint.params) == fingerprint(whole.checkpoint.params));
  CHECK(rest.checkpoint.adam_m == whole.checkpoint.adam_m);
  CHECK(rest.checkpoint.adam_v == whole.checkpoint.adam_v);

  const Checkpoint reloaded = load_checkpoint(tail_dir + "/checkpoint_final.svck");
  CHECK(reloaded.step == 10);
  CHECK(fingerprint(reloaded.params) == fingerprint(whole.checkpoint.params));
}

TEST_CASE("a non-finite loss aborts before damaging the parameters") {
  auto videos = make_dataset(3);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.seed = 13;
  cfg.max_steps = 3;

  Trainer warmup(tiny_model(13), cfg);
  const TrainResult good = warmup.train(provider_for(videos), 3, fresh_dir("savos_nf_good"));
  const std::uint64_t good_print = fingerprint(good.checkpoint.params);

  for (auto& v : videos) poison_flows(v);
  TrainConfig longer = cfg;
  longer.max_steps = 10;
  Trainer poisoned(tiny_model(13), longer);
  const std::string dir = fresh_dir("savos_nf_abort");
  const TrainResult res = poisoned.train(provider_for(videos), 3, dir, &good.checkpoint);

  CHECK(res.aborted_non_finite);
  CHECK(res.log.empty());
  CHECK(res.checkpoint.step == 3);
  CHECK(fingerprint(res.checkpoint.params) == good_print);
  const Checkpoint saved = load_checkpoint(dir + "/checkpoint_final.svck");
  CHECK(saved.step == 3);
  CHECK(fingerprint(saved.params) == good_print);

  // From scratch the abort lands before the very first update.
  Trainer scratch(tiny_model(13), longer);
  const TrainResult res0 = scratch.train(provider_for(videos), 3, fresh_dir("savos_nf_zero"));
  CHECK(res0.aborted_non_finite);
  CHECK(res0.checkpoint.step == 0);
  SavosNet<float> fresh(tiny_model(13));
  fresh.init_params(13);
  CHECK(fingerprint(res0.checkpoint.params) == fingerprint(fresh));
}

TEST_CASE("the early-stop rule fires exactly when the windowed gain is small") {
  using curve = std::vector<double>;
  const double inf = std::numeric_limits<double>::infinity();

  CHECK(!should_stop(curve{0.2}, 1, 0.01));                  // nothing applied yet
  CHECK(!should_stop(curve{0.2, 0.3}, 1, 0.01));             // gained 0.1
  CHECK(should_stop(curve{0.2, 0.3, 0.305}, 1, 0.01));       // gained 0.005
  CHECK(!should_stop(curve{0.2, 0.3, 0.305}, 2, 0.01));      // window spans 0.105
  CHECK(should_stop(curve{0.2, 0.3, 0.305, 0.306}, 2, 0.01));
  CHECK(!should_stop(curve{0.5, 0.51}, 1, 0.01));            // exactly delta: keep going
  CHECK(should_stop(curve{0.5, 0.4}, 1, 0.01));              // a drop is no improvement
  CHECK(should_stop(curve{0.5, 0.4}, 1, 0.0));
  CHECK(!should_stop(curve{0.5, 0.6}, 1, 0.0));
  CHECK(should_stop(curve{0.1, 0.9}, 1, inf));

  // A rise that flattens out: the trigger fires at the hand-checked prefix
  // and at no earlier one.
  const curve trace{0.50, 0.60, 0.68, 0.74, 0.78, 0.785, 0.787, 0.788};
  const std::vector<bool> expected{false, false, false, false, false, false, false, true};
  for (std::size_t n = 1; n <= trace.size(); ++n) {
    const curve prefix(trace.begin(), trace.begin() + n);
    CHECK(should_stop(prefix, 3, 0.01) == expected[n - 1]);
  }
}

TEST_CASE("adaptation stops after exactly the window length when delta is infinite") {
  SavosNet<float> net(tiny_model(3));
  net.init_params(3);
  const Checkpoint base = snapshot(net, 0);
  const VideoSample video = generate_video(tiny_gen(77));

  TTAConfig cfg;
  cfg.max_iters = 9;
  cfg.stop_delta = std::numeric_limits<double>::infinity();
  cfg.stop_window = 3;
  const TTAResult res = test_time_adapt(base, video, cfg);
  CHECK(res.stop_iteration == 3);
  CHECK(res.stop_reason == "window");
  CHECK(res.visible_iou.size() == 4);
  CHECK(res.occluded_iou.size() == 4);
  CHECK(!res.warning_non_finite);
}

TEST_CASE("adaptation leaves the base checkpoint untouched and is repeatable") {
  SavosNet<float> net(tiny_model(9));
  net.init_params(9);
  const Checkpoint base = snapshot(net, 0);
  const std::vector<float> params_before = base.params;
  const std::uint64_t print_before = fingerprint(base.params);
  const VideoSample video = generate_video(tiny_gen(55));

  TTAConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.max_iters = 4;
  cfg.stop_window = 10;  // wider than max_iters: the window can never fire
  const TTAResult a = test_time_adapt(base, video, cfg);
  CHECK(a.stop_reason == "max_iters");
  CHECK(a.stop_iteration == 4);
  CHECK(a.visible_iou.size() == 5);
  CHECK(base.params == params_before);
  CHECK(fingerprint(base.params) == print_before);

  const TTAResult b = test_time_adapt(base, video, cfg);
  CHECK(a.visible_iou == b.visible_iou);
  CHECK(a.occluded_iou == b.occluded_iou);
  REQUIRE(a.predictions.size() == b.predictions.size());
  for (std::size_t t = 0; t < a.predictions.size(); ++t)
    for (std::size_t k = 0; k < a.predictions[t].size(); ++k)
      CHECK(a.predictions[t][k] == b.predictions[t][k]);

  for (double v : a.visible_iou) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("adaptation hands back pre-adaptation predictions on a non-finite loss") {
  SavosNet<float> net(tiny_model(11));
  net.init_params(11);
  const Checkpoint base = snapshot(net, 0);
  VideoSample video = generate_video(tiny_gen(91));
  poison_flows(video);

  TTAConfig cfg;
  cfg.max_iters = 6;
  const TTAResult res = test_time_adapt(base, video, cfg);
  CHECK(res.warning_non_finite);
  CHECK(res.stop_reason == "non_finite");
  CHECK(res.stop_iteration == 0);
  CHECK(res.visible_iou.size() == 1);
  CHECK(res.occluded_iou.size() == 1);

  SavosNet<float> copy(base.model);
  restore(base, copy);
  const auto expect = predict_video(copy, video);
  REQUIRE(res.predictions.size() == expect.size());
  for (std::size_t t = 0; t < expect.size(); ++t)
    for (std::size_t k = 0; k < expect[t].size(); ++k)
      CHECK(res.predictions[t][k] == expect[t][k]);
}

TEST_CASE("full-canvas predictions keep empty slots for invisible objects") {
  const VideoSample video = half_visible_video();
  ModelConfig mc = tiny_model(2);
  mc.patch_size = 8;
  SavosNet<float> net(mc);
  net.init_params(2);

  const auto preds = predict_video(net, video);
  REQUIRE(preds.size() == 3);
  for (const auto& frame : preds) {
    REQUIRE(frame.size() == 2);
    for (const auto& m : frame) {
      CHECK(m.h == 16);
      CHECK(m.w == 16);
    }
    CHECK(mask_area(frame[1]) == 0);  // never visible: stays empty
  }

  // The visible-evidence statistic ignores the empty ground-truth slots.
  const double stat = visible_iou_statistic(preds, video);
  CHECK(stat >= 0.0);
  CHECK(stat <= 1.0);
}

TEST_CASE("the training log on disk matches the returned rows") {
  const auto videos = make_dataset(3);
  TrainConfig cfg;
  cfg.max_steps = 5;
  cfg.seed = 17;
  Trainer trainer(tiny_model(17), cfg);
  const std::string dir = fresh_dir("savos_csvlog");
  const TrainResult res = trainer.train(provider_for(videos), 3, dir);

  std::ifstream in(dir + "/train_log.csv");
  REQUIRE(in.good());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "step,l_m,l_c,total,wall_time");
  int rows = 0;
  while (std::getline(in, line)) {
    unsigned long long step = 0;
    double l_m = 0, l_c = 0, total = 0, wall = 0;
    REQUIRE(std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf", &step, &l_m, &l_c, &total,
                        &wall) == 5);
    const TrainLogRow& row = res.log[rows];
    CHECK(step == row.step);
    CHECK(l_m == doctest::Approx(row.l_m).epsilon(1e-7));
    CHECK(l_c == doctest::Approx(row.l_c).epsilon(1e-7));
    CHECK(total == doctest::Approx(row.total).epsilon(1e-7));
    ++rows;
  }
  CHECK(rows == 5);

  // A second run into the same directory appends instead of rewriting.
  TrainConfig more = cfg;
  more.max_steps = 2;
  Trainer again(tiny_model(17), more);
  again.train(provider_for(videos), 3, dir);
  std::ifstream in2(dir + "/train_log.csv");
  int total_lines = 0;
  while (std::getline(in2, line)) ++total_lines;
  CHECK(total_lines == 1 + 5 + 2);
}

TEST_CASE("cadence checkpoints appear at the configured steps") {
  const auto videos = make_dataset(2);
  TrainConfig cfg;
  cfg.max_steps = 6;
  cfg.checkpoint_every = 2;
  cfg.seed = 3;
  Trainer trainer(tiny_model(3), cfg);
  const std::string dir = fresh_dir("savos_cadence");
  const TrainResult res = trainer.train(provider_for(videos), 2, dir);

  for (int s : {2, 4, 6}) {
    const std::string path = dir + "/ckpt_step_" + std::to_string(s) + ".svck";
    REQUIRE(fs::exists(path));
    const Checkpoint cp = load_checkpoint(path);
    CHECK(cp.step == static_cast<std::uint64_t>(s));
  }
  CHECK(!fs::exists(dir + "/ckpt_step_1.svck"));
  CHECK(!fs::exists(dir + "/ckpt_step_3.svck"));
  const Checkpoint last = load_checkpoint(dir + "/ckpt_step_6.svck");
  CHECK(fingerprint(last.params) == fingerprint(res.checkpoint.params));
}
