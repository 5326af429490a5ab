#include "savos/model.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "savos/common.hpp"

namespace savos {

namespace {

// Channel ladders: encoders thin out toward the input, decoders mirror them.
std::vector<int> ladder_up(int top, int depth, int floor_c) {
  std::vector<int> out(depth);
  for (int i = 0; i < depth; ++i) out[i] = std::max(floor_c, top >> (depth - 1 - i));
  return out;
}

template <typename T>
Tensor<T> run_conv_chain(const std::vector<Conv2d<T>>& layers, const Tensor<T>& x,
                         std::vector<Tensor<T>>* acts = nullptr) {
  Tensor<T> cur = x;
  if (acts) acts->push_back(cur);
  for (const auto& l : layers) {
    cur = l.forward(cur);
    relu_inplace(cur);
    if (acts) acts->push_back(cur);
  }
  return cur;
}

// acts[i] is layer i's input, acts[i+1] its post-relu output.
template <typename T>
Tensor<T> back_conv_chain(std::vector<Conv2d<T>>& layers, const std::vector<Tensor<T>>& acts,
                          Tensor<T> dy) {
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    dy = relu_backward(acts[i + 1], dy);
    dy = layers[i].backward(acts[i], dy);
  }
  return dy;
}

// Decoder chain: relu between layers, linear final layer (logit outputs).
template <typename T>
Tensor<T> run_dec_chain(const std::vector<ConvT2d<T>>& layers, const Tensor<T>& x,
                        std::vector<Tensor<T>>* acts = nullptr) {
  Tensor<T> cur = x;
  if (acts) acts->push_back(cur);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    cur = layers[i].forward(cur);
    if (i + 1 < layers.size()) relu_inplace(cur);
    if (acts) acts->push_back(cur);
  }
  return cur;
}

template <typename T>
Tensor<T> back_dec_chain(std::vector<ConvT2d<T>>& layers, const std::vector<Tensor<T>>& acts,
                         Tensor<T> dy) {
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    if (i + 1 < static_cast<int>(layers.size())) dy = relu_backward(acts[i + 1], dy);
    dy = layers[i].backward(acts[i], dy);
  }
  return dy;
}

template <typename T>
Tensor<T> flow_tensor(const FlowFieldT<T>& f) {
  Tensor<T> out(2, f.h(), f.w());
  std::copy(f.dx.v.begin(), f.dx.v.end(), out.v.begin());
  std::copy(f.dy.v.begin(), f.dy.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(f.dx.size()));
  return out;
}

}  // namespace

template <typename T>
struct GruCache {
  Tensor<T> h_in, hx, z, r, n, rhx;
};

// h' = (1-z) * h + z * tanh(conv_n([r*h, x])), with [z, r] = sigmoid(conv_zr([h, x]))
template <typename T>
Tensor<T> gru_forward(const Conv2d<T>& zr, const Conv2d<T>& cn, const Tensor<T>& h,
                      const Tensor<T>& x, GruCache<T>* cache) {
  const int H = h.c;
  Tensor<T> hx = concat_channels(h, x);
  Tensor<T> gates = zr.forward(hx);
  sigmoid_inplace(gates);
  Tensor<T> z = slice_channels(gates, 0, H);
  Tensor<T> r = slice_channels(gates, H, H);
  Tensor<T> rh = h;
  for (std::size_t i = 0; i < rh.size(); ++i) rh.v[i] *= r.v[i];
  Tensor<T> rhx = concat_channels(rh, x);
  Tensor<T> n = cn.forward(rhx);
  tanh_inplace(n);
  Tensor<T> out(h.c, h.h, h.w);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.v[i] = (T(1) - z.v[i]) * h.v[i] + z.v[i] * n.v[i];
  if (cache) *cache = GruCache<T>{h, std::move(hx), std::move(z), std::move(r), std::move(n),
                                  std::move(rhx)};
  return out;
}

template <typename T>
void gru_backward(Conv2d<T>& zr, Conv2d<T>& cn, const GruCache<T>& c, const Tensor<T>& dh_out,
                  Tensor<T>& dh_in, Tensor<T>& dx) {
  const int H = c.h_in.c;
  const int F = c.hx.c - H;
  Tensor<T> dz(H, c.h_in.h, c.h_in.w), dn(H, c.h_in.h, c.h_in.w);
  dh_in = Tensor<T>(H, c.h_in.h, c.h_in.w);
  for (std::size_t i = 0; i < dz.size(); ++i) {
    dz.v[i] = dh_out.v[i] * (c.n.v[i] - c.h_in.v[i]);
    dn.v[i] = dh_out.v[i] * c.z.v[i];
    dh_in.v[i] = dh_out.v[i] * (T(1) - c.z.v[i]);
  }
  const Tensor<T> dpre_n = tanh_backward(c.n, dn);
  const Tensor<T> drhx = cn.backward(c.rhx, dpre_n);
  Tensor<T> drh = slice_channels(drhx, 0, H);
  dx = slice_channels(drhx, H, F);
  Tensor<T> dr(H, c.h_in.h, c.h_in.w);
  for (std::size_t i = 0; i < drh.size(); ++i) {
    dr.v[i] = drh.v[i] * c.h_in.v[i];
    dh_in.v[i] += drh.v[i] * c.r.v[i];
  }
  Tensor<T> dpre_gates(2 * H, c.h_in.h, c.h_in.w);
  for (std::size_t i = 0; i < dz.size(); ++i) {
    dpre_gates.v[i] = dz.v[i] * c.z.v[i] * (T(1) - c.z.v[i]);
    dpre_gates.v[dz.size() + i] = dr.v[i] * c.r.v[i] * (T(1) - c.r.v[i]);
  }
  const Tensor<T> dhx = zr.backward(c.hx, dpre_gates);
  for (std::size_t i = 0; i < dh_in.size(); ++i) dh_in.v[i] += dhx.v[i];
  const Tensor<T> dx2 = slice_channels(dhx, H, F);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] += dx2.v[i];
}

template <typename T>
struct FrameCache {
  std::vector<Tensor<T>> enc_acts;
  GruCache<T> gru;
  std::vector<Tensor<T>> mask_enc_acts, mask_dec_acts;
  std::vector<Tensor<T>> flow_enc_acts, flow_dec_acts;
};

template <typename T>
PassCache<T>::PassCache() = default;
template <typename T>
PassCache<T>::~PassCache() = default;
template <typename T>
PassCache<T>::PassCache(PassCache&&) noexcept = default;
template <typename T>
PassCache<T>& PassCache<T>::operator=(PassCache&&) noexcept = default;

void ModelConfig::validate() const {
  if (patch_size < 4) throw ConfigError("patch size must be at least 4");
  if (encoder_depth < 1) throw ConfigError("encoder depth must be at least 1");
  if (decoder_depth != encoder_depth)
    throw ConfigError("decoder depth must equal encoder depth (symmetric resampling ladder)");
  if (feature_channels < 1 || hidden_channels < 1)
    throw ConfigError("channel counts must be positive");
  if (patch_size % (1 << encoder_depth) != 0)
    throw ConfigError("patch size must be divisible by 2^encoder_depth");
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"patch_size", cfg.patch_size},
                     {"feature_channels", cfg.feature_channels},
                     {"hidden_channels", cfg.hidden_channels},
                     {"encoder_depth", cfg.encoder_depth},
                     {"decoder_depth", cfg.decoder_depth},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  static const char* known[] = {"patch_size",    "feature_channels", "hidden_channels",
                                "encoder_depth", "decoder_depth",    "seed"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown model config key '" + key + "'");
  }
  cfg = ModelConfig{};
  if (j.contains("patch_size")) j.at("patch_size").get_to(cfg.patch_size);
  if (j.contains("feature_channels")) j.at("feature_channels").get_to(cfg.feature_channels);
  if (j.contains("hidden_channels")) j.at("hidden_channels").get_to(cfg.hidden_channels);
  if (j.contains("encoder_depth")) j.at("encoder_depth").get_to(cfg.encoder_depth);
  if (j.contains("decoder_depth")) j.at("decoder_depth").get_to(cfg.decoder_depth);
  if (j.contains("seed")) j.at("seed").get_to(cfg.seed);
}

template <typename T>
int SavosNet<T>::side_channels() const {
  return std::max(4, cfg_.feature_channels / 2);
}

template <typename T>
SavosNet<T>::SavosNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int L = cfg_.encoder_depth;
  const int F = cfg_.feature_channels;
  const int H = cfg_.hidden_channels;
  const int Fa = side_channels();

  const auto enc_out = ladder_up(F, L, 8);
  int in_c = 6;
  for (int i = 0; i < L; ++i) {
    enc_.emplace_back(in_c, enc_out[i], 3, 2, 1);
    in_c = enc_out[i];
  }
  gru_zr_ = Conv2d<T>(H + F, 2 * H, 3, 1, 1);
  gru_n_ = Conv2d<T>(H + F, H, 3, 1, 1);

  const auto side_out = ladder_up(Fa, L, 4);
  in_c = 1;
  for (int i = 0; i < L; ++i) {
    mask_enc_.emplace_back(in_c, side_out[i], 3, 2, 1);
    in_c = side_out[i];
  }
  in_c = 2;
  for (int i = 0; i < L; ++i) {
    flow_enc_.emplace_back(in_c, side_out[i], 3, 2, 1);
    in_c = side_out[i];
  }

  in_c = H + Fa;
  for (int i = 0; i < L; ++i) {
    const int out_c = i + 1 < L ? std::max(8, F >> (i + 1)) : 2;
    mask_dec_.emplace_back(in_c, out_c, 3, 2, 1);
    flow_dec_.emplace_back(in_c, out_c, 3, 2, 1);
    in_c = out_c;
  }
}

template <typename T>
void SavosNet<T>::init_params(std::uint64_t seed) {
  Rng rng(splitmix64(seed ^ 0x6d6f64656cull));
  for (auto& l : enc_) l.init(rng);
  gru_zr_.init(rng);
  gru_n_.init(rng);
  for (auto& l : mask_enc_) l.init(rng);
  for (auto& l : mask_dec_) l.init(rng);
  for (auto& l : flow_enc_) l.init(rng);
  for (auto& l : flow_dec_) l.init(rng);
}

template <typename T>
ParamRegistry<T> SavosNet<T>::params() {
  ParamRegistry<T> reg;
  for (std::size_t i = 0; i < enc_.size(); ++i)
    enc_[i].register_params(reg, "enc." + std::to_string(i));
  gru_zr_.register_params(reg, "gru.zr");
  gru_n_.register_params(reg, "gru.n");
  for (std::size_t i = 0; i < mask_enc_.size(); ++i)
    mask_enc_[i].register_params(reg, "mask_enc." + std::to_string(i));
  for (std::size_t i = 0; i < mask_dec_.size(); ++i)
    mask_dec_[i].register_params(reg, "mask_dec." + std::to_string(i));
  for (std::size_t i = 0; i < flow_enc_.size(); ++i)
    flow_enc_[i].register_params(reg, "flow_enc." + std::to_string(i));
  for (std::size_t i = 0; i < flow_dec_.size(); ++i)
    flow_dec_[i].register_params(reg, "flow_dec." + std::to_string(i));
  return reg;
}

template <typename T>
std::size_t SavosNet<T>::param_count() const {
  std::size_t n = 0;
  const auto count = [&n](const auto& layer) { n += layer.w.size() + layer.b.size(); };
  for (const auto& l : enc_) count(l);
  count(gru_zr_);
  count(gru_n_);
  for (const auto& l : mask_enc_) count(l);
  for (const auto& l : mask_dec_) count(l);
  for (const auto& l : flow_enc_) count(l);
  for (const auto& l : flow_dec_) count(l);
  return n;
}

template <typename T>
Tensor<T> SavosNet<T>::initial_state() const {
  return Tensor<T>(cfg_.hidden_channels, bottleneck(), bottleneck());
}

template <typename T>
Tensor<T> SavosNet<T>::encode_frame(const Tensor<T>& image, const FlowFieldT<T>& flow,
                                    const Grid<T>& visible) const {
  require(image.c == 3 && image.h == cfg_.patch_size && image.w == cfg_.patch_size,
          "encode_frame: image patch shape mismatch");
  require(flow.h() == cfg_.patch_size && flow.w() == cfg_.patch_size,
          "encode_frame: flow patch shape mismatch");
  require(visible.h == cfg_.patch_size && visible.w == cfg_.patch_size,
          "encode_frame: visible patch shape mismatch");
  const Tensor<T> input =
      concat_channels(concat_channels(image, flow_tensor(flow)), tensor_from_grid(visible));
  return run_conv_chain(enc_, input);
}

template <typename T>
Tensor<T> SavosNet<T>::step_sequence(const Tensor<T>& h_prev, const Tensor<T>& f) const {
  require(h_prev.c == cfg_.hidden_channels && h_prev.h == bottleneck() &&
              h_prev.w == bottleneck(),
          "step_sequence: state shape mismatch");
  require(f.c == cfg_.feature_channels && f.h == bottleneck() && f.w == bottleneck(),
          "step_sequence: feature shape mismatch");
  return gru_forward(gru_zr_, gru_n_, h_prev, f, static_cast<GruCache<T>*>(nullptr));
}

template <typename T>
std::pair<Grid<T>, Grid<T>> SavosNet<T>::complete_amodal(const Tensor<T>& h,
                                                         const Grid<T>& visible) const {
  require(h.c == cfg_.hidden_channels && h.h == bottleneck() && h.w == bottleneck(),
          "complete_amodal: state shape mismatch");
  require(visible.h == cfg_.patch_size && visible.w == cfg_.patch_size,
          "complete_amodal: visible patch shape mismatch");
  const Tensor<T> a = run_conv_chain(mask_enc_, tensor_from_grid(visible));
  const Tensor<T> y = run_dec_chain(mask_dec_, concat_channels(h, a));
  return {grid_from_channel(y, 0), grid_from_channel(y, 1)};
}

template <typename T>
FlowFieldT<T> SavosNet<T>::predict_motion(const Tensor<T>& h, const FlowFieldT<T>& visible_flow,
                                          const Grid<T>& visible,
                                          FlowFieldT<T>* residual_out) const {
  require(h.c == cfg_.hidden_channels && h.h == bottleneck() && h.w == bottleneck(),
          "predict_motion: state shape mismatch");
  require(visible_flow.h() == cfg_.patch_size && visible_flow.w() == cfg_.patch_size,
          "predict_motion: flow patch shape mismatch");
  require(visible.h == cfg_.patch_size && visible.w == cfg_.patch_size,
          "predict_motion: visible patch shape mismatch");
  double sum_dx = 0, sum_dy = 0, sum_v = 0;
  for (std::size_t i = 0; i < visible.size(); ++i) {
    sum_dx += static_cast<double>(visible_flow.dx.v[i]);
    sum_dy += static_cast<double>(visible_flow.dy.v[i]);
    sum_v += static_cast<double>(visible.v[i]);
  }
  const double mean_dx = sum_v > 1e-9 ? sum_dx / sum_v : 0.0;
  const double mean_dy = sum_v > 1e-9 ? sum_dy / sum_v : 0.0;

  const Tensor<T> cfeat = run_conv_chain(flow_enc_, flow_tensor(visible_flow));
  const Tensor<T> res = run_dec_chain(flow_dec_, concat_channels(h, cfeat));
  FlowFieldT<T> out(cfg_.patch_size, cfg_.patch_size);
  for (std::size_t i = 0; i < out.dx.size(); ++i) {
    out.dx.v[i] = static_cast<T>(mean_dx) + res.v[i];
    out.dy.v[i] = static_cast<T>(mean_dy) + res.v[out.dx.size() + i];
  }
  if (residual_out) {
    *residual_out = FlowFieldT<T>(cfg_.patch_size, cfg_.patch_size);
    std::copy(res.v.begin(), res.v.begin() + static_cast<std::ptrdiff_t>(out.dx.size()),
              residual_out->dx.v.begin());
    std::copy(res.v.begin() + static_cast<std::ptrdiff_t>(out.dx.size()), res.v.end(),
              residual_out->dy.v.begin());
  }
  return out;
}

template <typename T>
std::vector<AmodalPredictionT<T>> SavosNet<T>::forward_pass(const ObjectSequenceT<T>& seq,
                                                            Direction dir,
                                                            PassCache<T>* cache) const {
  require(seq.frames() >= 2, "forward_pass: needs at least two frames");
  ObjectSequenceT<T> reversed;
  const ObjectSequenceT<T>* run = &seq;
  if (dir == Direction::kBackward) {
    reversed = reverse_sequence(seq);
    run = &reversed;
  }
  const int frames = run->frames();
  for (int t = 0; t < frames; ++t)
    require(run->images[t].c == 3 && run->images[t].h == cfg_.patch_size &&
                run->images[t].w == cfg_.patch_size &&
                run->visibles[t].h == cfg_.patch_size && run->flows[t].h() == cfg_.patch_size,
            "forward_pass: patch shape disagrees with the model config");

  if (cache) {
    cache->direction = dir;
    cache->run_seq = *run;
    cache->frames.clear();
    cache->frames.resize(frames);
  }

  std::vector<AmodalPredictionT<T>> preds(frames);
  Tensor<T> h = initial_state();
  for (int t = 0; t < frames; ++t) {
    FrameCache<T>* fc = cache ? &cache->frames[t] : nullptr;
    const Tensor<T> input =
        concat_channels(concat_channels(run->images[t], flow_tensor(run->flows[t])),
                        tensor_from_grid(run->visibles[t]));
    const Tensor<T> f = run_conv_chain(enc_, input, fc ? &fc->enc_acts : nullptr);
    h = gru_forward(gru_zr_, gru_n_, h, f, fc ? &fc->gru : nullptr);

    const Tensor<T> vin = tensor_from_grid(run->visibles[t]);
    const Tensor<T> a = run_conv_chain(mask_enc_, vin, fc ? &fc->mask_enc_acts : nullptr);
    const Tensor<T> ma =
        run_dec_chain(mask_dec_, concat_channels(h, a), fc ? &fc->mask_dec_acts : nullptr);

    double sum_dx = 0, sum_dy = 0, sum_v = 0;
    for (std::size_t i = 0; i < run->visibles[t].size(); ++i) {
      sum_dx += static_cast<double>(run->flows[t].dx.v[i]);
      sum_dy += static_cast<double>(run->flows[t].dy.v[i]);
      sum_v += static_cast<double>(run->visibles[t].v[i]);
    }
    const double mean_dx = sum_v > 1e-9 ? sum_dx / sum_v : 0.0;
    const double mean_dy = sum_v > 1e-9 ? sum_dy / sum_v : 0.0;
    const Tensor<T> cfeat =
        run_conv_chain(flow_enc_, flow_tensor(run->flows[t]), fc ? &fc->flow_enc_acts : nullptr);
    const Tensor<T> res = run_dec_chain(flow_dec_, concat_channels(h, cfeat),
                                        fc ? &fc->flow_dec_acts : nullptr);

    AmodalPredictionT<T>& p = preds[t];
    p.mask_logits = grid_from_channel(ma, 0);
    p.alpha_logit = grid_from_channel(ma, 1);
    p.motion = FlowFieldT<T>(cfg_.patch_size, cfg_.patch_size);
    for (std::size_t i = 0; i < p.motion.dx.size(); ++i) {
      p.motion.dx.v[i] = static_cast<T>(mean_dx) + res.v[i];
      p.motion.dy.v[i] = static_cast<T>(mean_dy) + res.v[p.motion.dx.size() + i];
    }
  }
  if (dir == Direction::kBackward) std::reverse(preds.begin(), preds.end());
  return preds;
}

template <typename T>
void SavosNet<T>::backward_pass(const PassCache<T>& cache,
                                const std::vector<PredictionGrads<T>>& pred_grads) {
  const int frames = static_cast<int>(cache.frames.size());
  require(frames > 0, "backward_pass: empty cache");
  require(static_cast<int>(pred_grads.size()) == frames,
          "backward_pass: gradient count disagrees with the cached pass");
  const int H = cfg_.hidden_channels;
  const int Fa = side_channels();
  const int P = cfg_.patch_size;

  Tensor<T> dh_next = initial_state();
  for (int t = frames - 1; t >= 0; --t) {
    // cache frames sit in run order; pred_grads align with the original temporal order
    const int orig = cache.direction == Direction::kBackward ? frames - 1 - t : t;
    const PredictionGrads<T>& pg = pred_grads[orig];
    const FrameCache<T>& fc = cache.frames[t];

    Tensor<T> dma(2, P, P);
    std::copy(pg.mask_logits.v.begin(), pg.mask_logits.v.end(), dma.v.begin());
    std::copy(pg.alpha_logit.v.begin(), pg.alpha_logit.v.end(),
              dma.v.begin() + static_cast<std::ptrdiff_t>(pg.mask_logits.size()));
    const Tensor<T> dcat_a = back_dec_chain(mask_dec_, fc.mask_dec_acts, std::move(dma));
    Tensor<T> dh = slice_channels(dcat_a, 0, H);
    back_conv_chain(mask_enc_, fc.mask_enc_acts, slice_channels(dcat_a, H, Fa));

    Tensor<T> dres(2, P, P);
    std::copy(pg.motion.dx.v.begin(), pg.motion.dx.v.end(), dres.v.begin());
    std::copy(pg.motion.dy.v.begin(), pg.motion.dy.v.end(),
              dres.v.begin() + static_cast<std::ptrdiff_t>(pg.motion.dx.size()));
    const Tensor<T> dcat_c = back_dec_chain(flow_dec_, fc.flow_dec_acts, std::move(dres));
    for (std::size_t i = 0; i < dh.size(); ++i) dh.v[i] += dcat_c.v[i];
    back_conv_chain(flow_enc_, fc.flow_enc_acts, slice_channels(dcat_c, H, Fa));

    for (std::size_t i = 0; i < dh.size(); ++i) dh.v[i] += dh_next.v[i];
    Tensor<T> dh_prev, dxf;
    gru_backward(gru_zr_, gru_n_, fc.gru, dh, dh_prev, dxf);
    back_conv_chain(enc_, fc.enc_acts, std::move(dxf));
    dh_next = std::move(dh_prev);
  }
}

template struct PassCache<float>;
template struct PassCache<double>;
template class SavosNet<float>;
template class SavosNet<double>;

}  // namespace savos
