#pragma once

// Differentiable operations used by the embedder network.
//
// Frame-level tensors are [B, T, C] (a rank-2 [T, C] tensor is one
// sequence). Row-wise ops (affine, batchnorm, activations) treat every
// leading extent as a row and act on the last axis.

#include <cstddef>
#include <span>
#include <vector>

#include "xvf/autodiff.hpp"

namespace xvf {

class Rng;

enum class ConvMode { kFull, kDepthwise, kPointwise };

/// Dilated 1-D convolution along time with zero "same" padding.
///   full/pointwise kernel: [width, C_in, C_out]; depthwise kernel: [width, C].
/// Tap j reads frame t + (j - width/2) * dilation. `bias` may be undefined.
Var conv1d(const Var& input, const Var& kernel, const Var& bias, std::size_t dilation,
           ConvMode mode);

/// y = x W^T + b per row. W is [out, in]; b is [out] or undefined.
Var affine(const Var& input, const Var& weight, const Var& bias);

Var relu(const Var& input);
Var tanh(const Var& input);

/// Adds a [C] bias to every row of a [..., C] tensor.
Var add_bias(const Var& input, const Var& bias);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& input, double factor);
Var sum(const Var& input);
Var reshape(const Var& input, Shape shape);

/// Concatenates along the last axis; all leading extents must match.
Var concat_channels(std::span<const Var> parts);

/// [B, M, k] followed by a shared [N, k] block gives [B, M + N, k].
Var append_shared_rows(const Var& per_item, const Var& shared);

/// Batched A B^T: [B, n, k] x [B, m, k] -> [B, n, m].
Var batched_matmul_nt(const Var& a, const Var& b);

/// Per-frame cosine similarity between frames [B, T, D] and one key per item [B, D].
/// Zero-norm frames or keys score 0.
/// Result is [B, T]. Zero-norm frames or keys are an error.
Var cosine_scores(const Var& frames, const Var& keys);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.95;
  double epsilon = 1e-5;

  explicit BatchNormState(std::size_t channels = 0, double momentum = 0.95,
                          double epsilon = 1e-5);
};

enum class Mode { kTraining, kInference };

/// Training mode normalizes by the batch moments over all rows and folds
/// them into the running statistics; inference mode uses the running ones.
Var batchnorm(const Var& input, const Var& gamma, const Var& beta, BatchNormState& state,
              Mode mode);

/// Inverted dropout; identity in inference mode or when rate is 0.
Var dropout(const Var& input, double rate, Rng& rng, Mode mode);

/// Mean over the batch of -log softmax(logits[b])[labels[b]]. logits is [B, n] or [n].
Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels);

/// Attention-weighted mean and standard deviation over time.
/// frames: [B, T, D]; scores: [B, T] (any shape with B*T elements) or undefined
/// for uniform weights. Returns [B, 2D] = [mu, sigma].
Var attentive_pool(const Var& frames, const Var& scores);

/// Softmax over time of [B, T] scores (the weights attentive_pool uses).
Tensor attention_weights(const Tensor& scores, std::size_t batch, std::size_t frames);

}  // namespace xvf
