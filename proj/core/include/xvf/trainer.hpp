#pragma once

// Softmax speaker-classification training for EmbedderModel.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xvf/embedder.hpp"

namespace xvf {

struct TrainingUtterance {
  std::string id;
  std::size_t speaker = 0;  // class index in [0, num_speakers)
  const FeatureMatrix* features = nullptr;
  const BwStats* stats = nullptr;  // BA models; statistics of the full utterance
  const Vector* ivector = nullptr;  // IA models
};

struct TrainerOptions {
  std::size_t epochs = 50;
  std::size_t chunk_frames = 200;
  std::size_t batch_size = 16;
  double learning_rate = 0.00015;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// L2 penalty added to the gradient of weight matrices and kernels (rank >= 2).
  double weight_decay = 1e-4;
  double validation_fraction = 0.1;
  std::size_t plateau_patience = 2;
  double plateau_factor = 0.5;
  double min_learning_rate = 1e-6;
  std::uint64_t seed = 0;
  /// Called after every epoch.
  std::function<void(std::size_t epoch, double train_loss, double validation_loss, double lr)> on_epoch;
};

struct TrainingHistory {
  std::vector<double> train_loss;       // mean over the epoch's chunks
  std::vector<double> validation_loss;  // NaN when no validation split exists
  std::vector<double> learning_rate;    // rate used during each epoch
  std::size_t num_train = 0;
  std::size_t num_validation = 0;
};

/// Trains in place. Requires at least two distinct speakers.
TrainingHistory train_embedder(EmbedderModel& model, std::span<const TrainingUtterance> data,
                               const TrainerOptions& options);

/// Mean cross-entropy over the leading `chunk_frames` of each utterance, inference mode.
double evaluate_loss(EmbedderModel& model, std::span<const TrainingUtterance> data,
                     std::size_t chunk_frames, std::size_t batch_size = 16);

}  // namespace xvf
