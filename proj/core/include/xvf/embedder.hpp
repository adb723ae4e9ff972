#pragma once

// x-vector embedder: frame-level TDNN / multi-scale (MSCNN) convolution
// stack, statistics or attentive pooling, two utterance-level layers and a
// softmax speaker classifier.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "xvf/archive.hpp"
#include "xvf/autodiff.hpp"
#include "xvf/config.hpp"
#include "xvf/features.hpp"
#include "xvf/gmm.hpp"
#include "xvf/ops.hpp"

namespace xvf {

enum class LayerKind { kTdnn, kMscnn };

/// One frame-level layer. An mscnn layer runs `num_filter_sets` (K) filter
/// sets in parallel; set k (0-based) has dilation (k + 1) * dilation and
/// produces output channels [k * C/K, (k + 1) * C/K).
struct LayerSpec {
  LayerKind kind = LayerKind::kTdnn;
  std::size_t out_channels = 512;
  std::size_t kernel_width = 1;
  std::size_t dilation = 1;
  std::size_t num_filter_sets = 1;
  bool separable = false;

  std::size_t set_channels() const { return out_channels / num_filter_sets; }
  std::size_t set_dilation(std::size_t set) const { return (set + 1) * dilation; }
};

enum class PoolingVariant { kStats, kSelfAttention, kIvectorAttention, kBaumWelchAttention };

std::string_view pooling_name(PoolingVariant variant);

struct PoolingSpec {
  PoolingVariant variant = PoolingVariant::kStats;
  /// SA: hidden size N_h of the scoring MLP.
  std::size_t attention_hidden = 512;
  /// IA: i-vector dimension.
  std::size_t ivector_dim = 400;
  /// BA: UBM components M and feature dimension of the first-order statistics.
  std::size_t num_components = 512;
  std::size_t stats_dim = 23;
  /// BA: number of trainable key rows N and key dimension d_k.
  std::size_t num_keys = 32;
  std::size_t key_dim = 512;
  /// BA: hidden size of the statistics transform V_2 tanh(V_1 f + b).
  std::size_t stats_hidden = 512;
};

enum class ModelScale { kPaper, kDesk };

struct EmbedderConfig {
  std::string preset = "baseline";
  std::size_t input_dim = 23;
  std::vector<LayerSpec> layers;
  PoolingSpec pooling;
  std::vector<std::size_t> utterance_dims{512, 512};
  std::size_t num_speakers = 2;
  double dropout = 0.1;
  double bn_momentum = 0.95;
  double bn_epsilon = 1e-5;
  std::uint64_t seed = 0;

  std::size_t frame_output_dim() const { return layers.back().out_channels; }
  std::size_t penultimate_dim() const {
    return layers.size() >= 2 ? layers[layers.size() - 2].out_channels : input_dim;
  }
  std::size_t embedding_dim() const { return utterance_dims.front(); }

  /// Throws on inconsistent settings (e.g. channels not divisible by K).
  void validate() const;

  /// Fully resolved key/value form; from_text(to_text()) reproduces the config.
  std::string to_text() const;
  static EmbedderConfig from_text(std::string_view text);
};

/// Names: baseline (alias x-vector), SA, IA, BA, MS-1L, MS-2L, MS-3L, MS-3L*, BA+MS-3L.
std::vector<std::string> embedder_presets();
EmbedderConfig make_embedder_config(std::string_view preset, ModelScale scale = ModelScale::kPaper);

/// Preset plus overrides from a key/value model config (`preset`, `scale`,
/// `num_speakers`, `input_dim`, `dropout`, `frame_channels`, `utterance_dims`,
/// `pooling.*`, `batchnorm.*`, `seed`).
EmbedderConfig embedder_config_from(const KeyValueConfig& kv);

/// Per-utterance side information, batched.
struct EmbedderInput {
  Tensor features;  // [B, T, input_dim]
  Tensor stats;     // [B, M, stats_dim], BA only
  Tensor ivectors;  // [B, ivector_dim], IA only
};

struct FrameOutputs {
  Var last;         // H_L, [B, T, D]
  Var penultimate;  // H_{L-1}, [B, T, D']
};

struct ForwardOutputs {
  FrameOutputs frames;
  Var scores;     // [B, T] attention scores; undefined for plain statistics pooling
  Var pooled;     // [B, 2D]
  Var embedding;  // [B, E], pre-activation output of the first utterance layer
  Var logits;     // [B, num_speakers]
};

/// Self-attention score e_t = v^T tanh(W h_t + b). W: [N_h, D], b: [N_h], v: [1, N_h].
Var attention_scores_sa(const Var& frames, const Var& weight, const Var& bias, const Var& v);

/// i-vector attention: cosine similarity between each frame and the transformed i-vector r.
Var attention_scores_ia(const Var& frames, const Var& key);

struct BaumWelchAttentionParams {
  Var query_weight;   // [d_k, D']
  Var query_bias;     // [d_k]
  Var stats_weight1;  // V_1, [hidden, stats_dim]
  Var stats_bias1;    // [hidden]
  Var stats_weight2;  // V_2, [d_k, hidden]
  Var keys;           // w_n rows, [N, d_k]
  Var score_bias;     // [M + N]
  Var score_weight;   // v, [1, M + N]
};

/// e_t = v^T tanh(K q_t + b) with q_t = tanh(W_q h_t^{L-1} + b_q) and
/// K = [V_2 tanh(V_1 f_m + b_1) for each m ; w_1 .. w_N].
/// query_frames: [B, T, D'], stats: [B, M, stats_dim]. Returns [B, T].
Var attention_scores_ba(const Var& query_frames, const Var& stats,
                        const BaumWelchAttentionParams& params);

class EmbedderModel {
 public:
  explicit EmbedderModel(EmbedderConfig config);

  const EmbedderConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;

  FrameOutputs frame_forward(const Var& features, Mode mode);
  ForwardOutputs forward(const EmbedderInput& input, Mode mode, Rng* dropout_rng = nullptr);

  /// Embedding for one utterance in inference mode; no graph is recorded and
  /// the model is not modified, so concurrent calls are safe.
  Vector extract_embedding(const FeatureMatrix& feats, const BwStats* stats = nullptr,
                           const Vector* ivector = nullptr) const;

  /// Builds the batched side inputs this model needs from per-utterance data.
  EmbedderInput make_input(const FeatureMatrix& feats, const BwStats* stats,
                           const Vector* ivector) const;

  void save(Archive& archive, DType storage = DType::kFloat64) const;
  static EmbedderModel load(const Archive& archive);
  void save(const std::filesystem::path& path, DType storage = DType::kFloat64) const;
  static EmbedderModel load(const std::filesystem::path& path);

 private:
  struct FrameLayer {
    LayerSpec spec;
    std::vector<std::size_t> kernels;  // per filter set (depthwise kernel if separable)
    std::vector<std::size_t> pointwise;  // per filter set, separable only
    std::vector<std::size_t> biases;
    std::size_t gamma = 0;
    std::size_t beta = 0;
    std::size_t bn = 0;
  };
  struct DenseLayer {
    std::size_t weight = 0;
    std::size_t bias = 0;
    std::size_t gamma = 0;
    std::size_t beta = 0;
    std::size_t bn = 0;
  };

  std::size_t add_parameter(std::string name, Tensor value, bool trainable = true);
  const Var& var(std::size_t index) const { return params_[index].var; }
  BaumWelchAttentionParams ba_params() const;
  ForwardOutputs forward_impl(const EmbedderInput& input, Mode mode, Rng* dropout_rng) const;

  EmbedderConfig config_;
  std::vector<Parameter> params_;
  std::vector<FrameLayer> frame_layers_;
  std::vector<DenseLayer> utterance_layers_;
  std::size_t output_weight_ = 0;
  std::size_t output_bias_ = 0;
  std::vector<std::size_t> attention_;  // indices of pooling parameters
  // Written only by training-mode forward passes.
  mutable std::vector<BatchNormState> bn_states_;
  std::vector<std::string> bn_names_;
};

}  // namespace xvf
