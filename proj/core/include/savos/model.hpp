#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "savos/nn.hpp"
#include "savos/sequence.hpp"

namespace savos {

struct ModelConfig {
  int patch_size = 64;
  int feature_channels = 48;
  int hidden_channels = 48;
  int encoder_depth = 3;
  int decoder_depth = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

enum class Direction { kForward, kBackward };

/// One frame's outputs: pre-sigmoid amodal mask, the merge-alpha logit, and
/// the dense amodal motion in patch units (carrying this frame onto the next
/// one in the direction the pass ran).
template <typename T>
struct AmodalPredictionT {
  Grid<T> mask_logits;
  Grid<T> alpha_logit;
  FlowFieldT<T> motion;
};

using AmodalPrediction = AmodalPredictionT<float>;

template <typename T>
struct PredictionGrads {
  Grid<T> mask_logits;
  Grid<T> alpha_logit;
  FlowFieldT<T> motion;
};

template <typename T>
struct FrameCache;

/// Everything forward_pass needs to replay itself backwards: the sequence in
/// run order plus per-frame activations.
template <typename T>
struct PassCache {
  Direction direction = Direction::kForward;
  ObjectSequenceT<T> run_seq;
  std::vector<FrameCache<T>> frames;
  PassCache();
  ~PassCache();
  PassCache(PassCache&&) noexcept;
  PassCache& operator=(PassCache&&) noexcept;
};

/// Per-frame encoder, convolutional gated recurrence, amodal mask completor
/// (mask + alpha logits), and common-fate motion predictor. Fully
/// convolutional: the parameter set depends only on ModelConfig.
template <typename T>
class SavosNet {
 public:
  explicit SavosNet(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  void init_params(std::uint64_t seed);
  ParamRegistry<T> params();
  std::size_t param_count() const;

  /// Zero initial recurrent state at the bottleneck resolution.
  Tensor<T> initial_state() const;

  /// Frame feature from the channel-concatenated (image, flow, visible) patch.
  Tensor<T> encode_frame(const Tensor<T>& image, const FlowFieldT<T>& flow,
                         const Grid<T>& visible) const;

  /// Convolutional GRU update.
  Tensor<T> step_sequence(const Tensor<T>& h_prev, const Tensor<T>& f) const;

  /// (mask_logits, alpha_logit) from the state and the visible mask.
  std::pair<Grid<T>, Grid<T>> complete_amodal(const Tensor<T>& h, const Grid<T>& visible) const;

  /// Mean visible flow (support-weighted, zero on empty support) broadcast
  /// over the patch, plus a decoded residual. `residual_out`, when given,
  /// receives the residual alone.
  FlowFieldT<T> predict_motion(const Tensor<T>& h, const FlowFieldT<T>& visible_flow,
                               const Grid<T>& visible,
                               FlowFieldT<T>* residual_out = nullptr) const;

  /// One prediction per frame, returned in the sequence's original temporal
  /// order. The backward direction runs on the reversed, flow-negated
  /// sequence. Pass `cache` to enable backward_pass.
  std::vector<AmodalPredictionT<T>> forward_pass(const ObjectSequenceT<T>& seq, Direction dir,
                                                 PassCache<T>* cache = nullptr) const;

  /// Accumulates parameter gradients for a pass recorded in `cache`;
  /// `pred_grads` aligns with forward_pass's returned (original) order.
  void backward_pass(const PassCache<T>& cache,
                     const std::vector<PredictionGrads<T>>& pred_grads);

 private:
  ModelConfig cfg_;
  std::vector<Conv2d<T>> enc_;
  Conv2d<T> gru_zr_, gru_n_;
  std::vector<Conv2d<T>> mask_enc_, flow_enc_;
  std::vector<ConvT2d<T>> mask_dec_, flow_dec_;

  int bottleneck() const { return cfg_.patch_size >> cfg_.encoder_depth; }
  int side_channels() const;  // mask/flow encoder output channels
};

using SavosNetF = SavosNet<float>;

}  // namespace savos
