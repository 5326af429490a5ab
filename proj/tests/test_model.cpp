#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "savos/common.hpp"
#include "savos/model.hpp"
#include "savos/rng.hpp"
#include "savos/sequence.hpp"

using namespace savos;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.patch_size = 8;
  cfg.feature_channels = 8;
  cfg.hidden_channels = 8;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 2;
  return cfg;
}

template <typename T>
ObjectSequenceT<T> make_seq(Rng& rng, int patch, int frames) {
  ObjectSequenceT<T> s;
  s.object_index = 0;
  s.canvas_h = s.canvas_w = 4 * patch;
  s.window = CropWindow{0.0, 0.0, static_cast<double>(patch), patch};
  for (int t = 0; t < frames; ++t) {
    Tensor<T> img(3, patch, patch);
    for (auto& v : img.v) v = static_cast<T>(rng.uniform());
    s.images.push_back(std::move(img));
    Grid<T> vis(patch, patch), oth(patch, patch);
    for (auto& v : vis.v) v = static_cast<T>(rng.uniform());
    s.visibles.push_back(std::move(vis));
    s.others.push_back(std::move(oth));
    FlowFieldT<T> f(patch, patch);
    for (auto& v : f.dx.v) v = static_cast<T>(rng.uniform(-1.5, 1.5));
    for (auto& v : f.dy.v) v = static_cast<T>(rng.uniform(-1.5, 1.5));
    s.flows.push_back(std::move(f));
  }
  return s;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
double pred_diff(const AmodalPredictionT<T>& a, const AmodalPredictionT<T>& b) {
  double m = max_abs_diff(a.mask_logits.v, b.mask_logits.v);
  m = std::max(m, max_abs_diff(a.alpha_logit.v, b.alpha_logit.v));
  m = std::max(m, max_abs_diff(a.motion.dx.v, b.motion.dx.v));
  m = std::max(m, max_abs_diff(a.motion.dy.v, b.motion.dy.v));
  return m;
}

}  // namespace

TEST_CASE("model config validation rejects inconsistent shapes") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());

  cfg = tiny_config();
  cfg.patch_size = 10;  // not divisible by 2^2
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.decoder_depth = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.hidden_channels = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.patch_size = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("model config json round-trips and names unknown keys") {
  ModelConfig cfg = tiny_config();
  cfg.seed = 17;
  nlohmann::json j = cfg;
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(back.patch_size == cfg.patch_size);
  CHECK(back.feature_channels == cfg.feature_channels);
  CHECK(back.hidden_channels == cfg.hidden_channels);
  CHECK(back.encoder_depth == cfg.encoder_depth);
  CHECK(back.decoder_depth == cfg.decoder_depth);
  CHECK(back.seed == cfg.seed);

  nlohmann::json bad = {{"patchsize", 64}};
  CHECK_THROWS_WITH_AS(bad.get<ModelConfig>(), "unknown model config key 'patchsize'",
                       ConfigError);
}

TEST_CASE("initial state is zero at the bottleneck resolution") {
  SavosNet<double> net(tiny_config());
  const Tensor<double> h = net.initial_state();
  CHECK(h.c == 8);
  CHECK(h.h == 2);
  CHECK(h.w == 2);
  for (double v : h.v) CHECK(v == 0.0);
}

TEST_CASE("parameter count tracks the config, not the sequence") {
  SavosNet<double> net(tiny_config());
  net.init_params(1);
  const std::size_t before = net.param_count();

  Rng rng(5);
  auto s2 = make_seq<double>(rng, 8, 2);
  auto s5 = make_seq<double>(rng, 8, 5);
  (void)net.forward_pass(s2, Direction::kForward);
  (void)net.forward_pass(s5, Direction::kBackward);
  CHECK(net.param_count() == before);

  auto reg = net.params();
  std::size_t reg_total = 0;
  std::set<std::string> names;
  for (const auto& p : reg) {
    reg_total += p.value->size();
    CHECK(p.value->size() == p.grad->size());
    names.insert(p.name);
  }
  CHECK(reg_total == before);
  CHECK(names.size() == reg.size());  // names are unique

  ModelConfig wider = tiny_config();
  wider.feature_channels = 16;
  SavosNet<double> net2(wider);
  CHECK(net2.param_count() > before);
}

TEST_CASE("fresh nets produce finite outputs and repeat bit-for-bit") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SavosNet<float> net(tiny_config());
    net.init_params(seed);
    Rng rng(seed + 100);
    const auto seq = make_seq<float>(rng, 8, 4);
    for (Direction dir : {Direction::kForward, Direction::kBackward}) {
      const auto preds = net.forward_pass(seq, dir);
      REQUIRE(preds.size() == 4);
      for (const auto& p : preds) {
        for (float v : p.mask_logits.v) REQUIRE(std::isfinite(v));
        for (float v : p.alpha_logit.v) REQUIRE(std::isfinite(v));
        for (float v : p.motion.dx.v) REQUIRE(std::isfinite(v));
        for (float v : p.motion.dy.v) REQUIRE(std::isfinite(v));
      }
    }
  }

  SavosNet<float> a(tiny_config()), b(tiny_config());
  a.init_params(42);
  b.init_params(42);
  Rng rng(9);
  const auto seq = make_seq<float>(rng, 8, 3);
  const auto pa = a.forward_pass(seq, Direction::kForward);
  const auto pb = b.forward_pass(seq, Direction::kForward);
  for (std::size_t t = 0; t < pa.size(); ++t) CHECK(pred_diff(pa[t], pb[t]) == 0.0);
}

TEST_CASE("recurrent state stays inside [-1, 1]") {
  SavosNet<double> net(tiny_config());
  net.init_params(3);
  Rng rng(77);

  // Zero state and zero inputs stay exactly zero: biases start at zero, so both
  // gate pre-activations vanish and the update is 0.5 * 0 + 0.5 * tanh(0).
  Tensor<double> h = net.initial_state();
  const Tensor<double> zero_img(3, 8, 8);
  const FlowFieldT<double> zero_flow(8, 8);
  const Grid<double> zero_vis(8, 8);
  Tensor<double> h0 = net.step_sequence(h, net.encode_frame(zero_img, zero_flow, zero_vis));
  for (double v : h0.v) CHECK(v == 0.0);

  // The update is a convex blend of the previous state and a tanh, so any
  // rollout that starts at zero is bounded by 1 in magnitude.
  for (int t = 0; t < 10; ++t) {
    Tensor<double> img(3, 8, 8);
    for (auto& v : img.v) v = rng.uniform();
    FlowFieldT<double> fl(8, 8);
    for (auto& v : fl.dx.v) v = rng.uniform(-3.0, 3.0);
    for (auto& v : fl.dy.v) v = rng.uniform(-3.0, 3.0);
    Grid<double> vis(8, 8);
    for (auto& v : vis.v) v = rng.uniform();
    h = net.step_sequence(h, net.encode_frame(img, fl, vis));
    for (double v : h.v) REQUIRE(std::abs(v) <= 1.0);
  }
}

TEST_CASE("sequence pass matches the per-frame operator chain") {
  SavosNet<double> net(tiny_config());
  net.init_params(11);
  Rng rng(12);
  const auto seq = make_seq<double>(rng, 8, 4);
  const auto preds = net.forward_pass(seq, Direction::kForward);

  Tensor<double> h = net.initial_state();
  for (int t = 0; t < seq.frames(); ++t) {
    h = net.step_sequence(h, net.encode_frame(seq.images[t], seq.flows[t], seq.visibles[t]));
    const auto [mask, alpha] = net.complete_amodal(h, seq.visibles[t]);
    const FlowFieldT<double> motion = net.predict_motion(h, seq.flows[t], seq.visibles[t]);
    CHECK(max_abs_diff(mask.v, preds[t].mask_logits.v) <= 1e-12);
    CHECK(max_abs_diff(alpha.v, preds[t].alpha_logit.v) <= 1e-12);
    CHECK(max_abs_diff(motion.dx.v, preds[t].motion.dx.v) <= 1e-12);
    CHECK(max_abs_diff(motion.dy.v, preds[t].motion.dy.v) <= 1e-12);
  }
}

TEST_CASE("backward direction equals a forward run over the reversed sequence") {
  SavosNet<float> net(tiny_config());
  net.init_params(23);
  Rng rng(24);
  const auto seq = make_seq<float>(rng, 8, 5);

  const auto back = net.forward_pass(seq, Direction::kBackward);
  const auto fwd_on_rev = net.forward_pass(reverse_sequence(seq), Direction::kForward);
  REQUIRE(back.size() == fwd_on_rev.size());
  const int T = static_cast<int>(back.size());
  for (int t = 0; t < T; ++t) CHECK(pred_diff(back[t], fwd_on_rev[T - 1 - t]) == 0.0);
}

TEST_CASE("motion splits into a broadcast mean plus a decoded residual") {
  SavosNet<double> net(tiny_config());
  net.init_params(31);
  Rng rng(32);
  const auto seq = make_seq<double>(rng, 8, 2);
  const Tensor<double> h =
      net.step_sequence(net.initial_state(),
                        net.encode_frame(seq.images[0], seq.flows[0], seq.visibles[0]));

  double sum_dx = 0, sum_dy = 0, sum_v = 0;
  for (std::size_t i = 0; i < seq.visibles[0].size(); ++i) {
    sum_dx += seq.flows[0].dx.v[i];
    sum_dy += seq.flows[0].dy.v[i];
    sum_v += seq.visibles[0].v[i];
  }
  const double want_dx = sum_dx / sum_v, want_dy = sum_dy / sum_v;

  FlowFieldT<double> residual;
  const FlowFieldT<double> motion = net.predict_motion(h, seq.flows[0], seq.visibles[0], &residual);
  for (std::size_t i = 0; i < motion.dx.size(); ++i) {
    CHECK(motion.dx.v[i] - residual.dx.v[i] == doctest::Approx(want_dx).epsilon(1e-12));
    CHECK(motion.dy.v[i] - residual.dy.v[i] == doctest::Approx(want_dy).epsilon(1e-12));
  }

  // Silence the residual decoder's last layer; the rest of the examples are exact.
  for (const auto& p : net.params())
    if (p.name == "flow_dec.1.w" || p.name == "flow_dec.1.b")
      std::fill(p.value->begin(), p.value->end(), 0.0);

  const Grid<double> all_vis(8, 8, 1.0);
  const FlowFieldT<double> uniform(8, 8, 2.0, 0.0);
  const FlowFieldT<double> shifted = net.predict_motion(h, uniform, all_vis);
  for (double v : shifted.dx.v) CHECK(v == 2.0);
  for (double v : shifted.dy.v) CHECK(v == 0.0);

  const Grid<double> no_vis(8, 8);
  const FlowFieldT<double> empty = net.predict_motion(h, FlowFieldT<double>(8, 8), no_vis);
  for (double v : empty.dx.v) CHECK(v == 0.0);
  for (double v : empty.dy.v) CHECK(v == 0.0);
}

TEST_CASE("amodal completion responds to the state and to the visible mask") {
  SavosNet<double> net(tiny_config());
  net.init_params(41);
  Rng rng(42);
  Tensor<double> h = net.initial_state();
  for (auto& v : h.v) v = rng.uniform(-0.5, 0.5);
  Grid<double> vis(8, 8);
  for (auto& v : vis.v) v = rng.uniform();

  const auto [mask0, alpha0] = net.complete_amodal(h, vis);

  Tensor<double> h2 = h;
  h2.v[0] += 0.5;
  const auto [mask_h, alpha_h] = net.complete_amodal(h2, vis);
  CHECK(max_abs_diff(mask_h.v, mask0.v) > 0.0);
  CHECK(max_abs_diff(alpha_h.v, alpha0.v) > 0.0);

  Grid<double> vis2 = vis;
  vis2.at(4, 4) += 0.5;
  const auto [mask_v, alpha_v] = net.complete_amodal(h, vis2);
  CHECK(max_abs_diff(mask_v.v, mask0.v) > 0.0);
  CHECK(max_abs_diff(alpha_v.v, alpha0.v) > 0.0);
}

TEST_CASE("analytic parameter gradients match finite differences") {
  // Scalar functional: a fixed random linear combination of every output field.
  // Its analytic gradient comes from backward_pass with the coefficients as
  // upstream gradients; the numeric one from central differences per weight.
  const int T = 3;
  for (Direction dir : {Direction::kForward, Direction::kBackward}) {
    SavosNet<double> net(tiny_config());
    net.init_params(7);
    Rng rng(dir == Direction::kForward ? 81 : 82);
    const auto seq = make_seq<double>(rng, 8, T);

    std::vector<PredictionGrads<double>> coeffs(T);
    for (int t = 0; t < T; ++t) {
      coeffs[t].mask_logits = Grid<double>(8, 8);
      coeffs[t].alpha_logit = Grid<double>(8, 8);
      coeffs[t].motion = FlowFieldT<double>(8, 8);
      for (auto& v : coeffs[t].mask_logits.v) v = rng.uniform(-1.0, 1.0);
      for (auto& v : coeffs[t].alpha_logit.v) v = rng.uniform(-1.0, 1.0);
      for (auto& v : coeffs[t].motion.dx.v) v = rng.uniform(-1.0, 1.0);
      for (auto& v : coeffs[t].motion.dy.v) v = rng.uniform(-1.0, 1.0);
    }

    const auto eval = [&]() {
      const auto preds = net.forward_pass(seq, dir);
      double j = 0;
      for (int t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < preds[t].mask_logits.size(); ++i)
          j += coeffs[t].mask_logits.v[i] * preds[t].mask_logits.v[i];
        for (std::size_t i = 0; i < preds[t].alpha_logit.size(); ++i)
          j += coeffs[t].alpha_logit.v[i] * preds[t].alpha_logit.v[i];
        for (std::size_t i = 0; i < preds[t].motion.dx.size(); ++i)
          j += coeffs[t].motion.dx.v[i] * preds[t].motion.dx.v[i] +
               coeffs[t].motion.dy.v[i] * preds[t].motion.dy.v[i];
      }
      return j;
    };

    auto reg = net.params();
    zero_grads(reg);
    PassCache<double> cache;
    (void)net.forward_pass(seq, dir, &cache);
    net.backward_pass(cache, coeffs);

    const double eps = 1e-5;
    double worst = 0;
    for (const auto& p : reg) {
      std::vector<std::size_t> probes = {0, p.value->size() / 2, p.value->size() - 1};
      for (std::size_t idx : probes) {
        const double saved = (*p.value)[idx];
        (*p.value)[idx] = saved + eps;
        const double jp = eval();
        (*p.value)[idx] = saved - eps;
        const double jm = eval();
        (*p.value)[idx] = saved;
        const double numeric = (jp - jm) / (2 * eps);
        const double analytic = (*p.grad)[idx];
        const double rel =
            std::abs(analytic - numeric) /
            std::max({std::abs(analytic), std::abs(numeric), 1.0});
        worst = std::max(worst, rel);
      }
    }
    INFO("direction ", dir == Direction::kForward ? "forward" : "backward", " worst rel ", worst);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("pass rejects malformed inputs") {
  SavosNet<float> net(tiny_config());
  net.init_params(1);
  Rng rng(2);

  auto one = make_seq<float>(rng, 8, 1);
  CHECK_THROWS_AS((void)net.forward_pass(one, Direction::kForward), ContractViolation);

  auto wrong = make_seq<float>(rng, 16, 3);
  CHECK_THROWS_AS((void)net.forward_pass(wrong, Direction::kForward), ContractViolation);

  const Tensor<float> bad_img(2, 8, 8);
  CHECK_THROWS_AS((void)net.encode_frame(bad_img, FlowFieldT<float>(8, 8), Grid<float>(8, 8)),
                  ContractViolation);

  const Tensor<float> bad_h(3, 2, 2);
  CHECK_THROWS_AS((void)net.step_sequence(bad_h, Tensor<float>(8, 2, 2)), ContractViolation);

  auto seq = make_seq<float>(rng, 8, 3);
  PassCache<float> cache;
  (void)net.forward_pass(seq, Direction::kForward, &cache);
  std::vector<PredictionGrads<float>> two(2);
  CHECK_THROWS_AS(net.backward_pass(cache, two), ContractViolation);
}
