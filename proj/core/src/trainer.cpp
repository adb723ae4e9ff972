#include "xvf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "xvf/error.hpp"
#include "xvf/rng.hpp"

namespace xvf {

namespace {

struct Chunk {
  const TrainingUtterance* utt;
  std::size_t offset;
};

EmbedderInput make_batch(const EmbedderModel& model, std::span<const Chunk> chunks,
                         std::size_t length, std::vector<std::size_t>& labels) {
  const EmbedderConfig& cfg = model.config();
  const std::size_t B = chunks.size();
  const std::size_t d = cfg.input_dim;
  EmbedderInput in;
  in.features = Tensor({B, length, d});
  labels.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    const Chunk& c = chunks[b];
    const RowMatrix& frames = c.utt->features->frames;
    require<ShapeError>(static_cast<std::size_t>(frames.cols()) == d, "utterance '", c.utt->id,
                        "' has feature dimension ", frames.cols(), ", model expects ", d);
    std::copy_n(frames.data() + c.offset * d, length * d, in.features.ptr() + b * length * d);
    labels[b] = c.utt->speaker;
  }
  const PoolingSpec& ps = cfg.pooling;
  if (ps.variant == PoolingVariant::kBaumWelchAttention) {
    in.stats = Tensor({B, ps.num_components, ps.stats_dim});
    const std::size_t per = ps.num_components * ps.stats_dim;
    for (std::size_t b = 0; b < B; ++b) {
      const BwStats* s = chunks[b].utt->stats;
      require(s != nullptr, "utterance '", chunks[b].utt->id, "' has no Baum-Welch statistics");
      require<ShapeError>(static_cast<std::size_t>(s->first_order.size()) == per, "utterance '",
                          chunks[b].utt->id, "' statistics do not match the model");
      std::copy_n(s->first_order.data(), per, in.stats.ptr() + b * per);
    }
  }
  if (ps.variant == PoolingVariant::kIvectorAttention) {
    in.ivectors = Tensor({B, ps.ivector_dim});
    for (std::size_t b = 0; b < B; ++b) {
      const Vector* v = chunks[b].utt->ivector;
      require(v != nullptr, "utterance '", chunks[b].utt->id, "' has no i-vector");
      require<ShapeError>(static_cast<std::size_t>(v->size()) == ps.ivector_dim, "utterance '",
                          chunks[b].utt->id, "' i-vector does not match the model");
      std::copy_n(v->data(), ps.ivector_dim, in.ivectors.ptr() + b * ps.ivector_dim);
    }
  }
  return in;
}

std::size_t shortest(std::span<const Chunk> chunks, std::size_t limit) {
  std::size_t n = limit;
  for (const Chunk& c : chunks) n = std::min(n, c.utt->features->num_frames());
  return n;
}

struct AdamState {
  std::vector<Tensor> m, v;
  std::size_t step = 0;
};

}  // namespace

double evaluate_loss(EmbedderModel& model, std::span<const TrainingUtterance> data,
                     std::size_t chunk_frames, std::size_t batch_size) {
  require(!data.empty(), "evaluate_loss: empty dataset");
  require(batch_size >= 1 && chunk_frames >= 1, "evaluate_loss: batch size and chunk length must be positive");
  NoGradGuard no_grad;
  std::vector<Chunk> chunks;
  for (const auto& u : data) chunks.push_back({&u, 0});
  double total = 0.0;
  std::vector<std::size_t> labels;
  for (std::size_t start = 0; start < chunks.size(); start += batch_size) {
    const std::span<const Chunk> batch(chunks.data() + start, std::min(batch_size, chunks.size() - start));
    const std::size_t length = shortest(batch, chunk_frames);
    const EmbedderInput in = make_batch(model, batch, length, labels);
    const ForwardOutputs out = model.forward(in, Mode::kInference);
    total += softmax_cross_entropy(out.logits, labels).value().item() * double(batch.size());
  }
  return total / double(chunks.size());
}

TrainingHistory train_embedder(EmbedderModel& model, std::span<const TrainingUtterance> data,
                               const TrainerOptions& opt) {
  require(!data.empty(), "train_embedder: empty dataset");
  const std::size_t S = model.config().num_speakers;
  std::set<std::size_t> speakers;
  for (const auto& u : data) {
    require(u.features != nullptr && u.features->num_frames() > 0, "utterance '", u.id, "' has no frames");
    require(u.speaker < S, "utterance '", u.id, "' has speaker index ", u.speaker,
            " but the model has ", S, " outputs");
    speakers.insert(u.speaker);
  }
  require(speakers.size() >= 2, "train_embedder: need at least two speakers, got ", speakers.size());
  require(opt.batch_size >= 1 && opt.chunk_frames >= 1, "train_embedder: batch size and chunk length must be positive");
  require(opt.validation_fraction >= 0.0 && opt.validation_fraction < 1.0,
          "train_embedder: validation fraction must be in [0, 1)");

  Rng rng(opt.seed);
  Rng split_rng = rng.derive(1);
  Rng chunk_rng = rng.derive(2);
  Rng dropout_rng = rng.derive(3);

  // Per-speaker holdout so every speaker keeps training data.
  std::vector<const TrainingUtterance*> train, validation;
  std::vector<std::vector<const TrainingUtterance*>> by_speaker(S);
  for (const auto& u : data) by_speaker[u.speaker].push_back(&u);
  for (auto& list : by_speaker) {
    split_rng.shuffle(list);
    const auto held = static_cast<std::size_t>(std::floor(opt.validation_fraction * double(list.size())));
    const std::size_t n_val = list.size() >= 2 ? std::min(held, list.size() - 1) : 0;
    validation.insert(validation.end(), list.begin(), list.begin() + n_val);
    train.insert(train.end(), list.begin() + n_val, list.end());
  }
  std::vector<TrainingUtterance> validation_set;
  for (const auto* u : validation) validation_set.push_back(*u);

  TrainingHistory history;
  history.num_train = train.size();
  history.num_validation = validation.size();

  auto& params = model.parameters();
  AdamState adam;
  for (const auto& p : params) {
    adam.m.emplace_back(p.value().shape(), 0.0);
    adam.v.emplace_back(p.value().shape(), 0.0);
  }

  double lr = opt.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<Chunk> chunks;
    chunks.reserve(train.size());
    for (const auto* u : train) chunks.push_back({u, 0});
    chunk_rng.shuffle(chunks);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < chunks.size(); start += opt.batch_size) {
      const std::span<Chunk> batch(chunks.data() + start, std::min(opt.batch_size, chunks.size() - start));
      const std::size_t length = shortest(batch, opt.chunk_frames);
      for (Chunk& c : batch) {
        const std::size_t slack = c.utt->features->num_frames() - length;
        c.offset = slack == 0 ? 0 : chunk_rng.index(slack + 1);
      }
      const EmbedderInput in = make_batch(model, batch, length, labels);
      for (auto& p : params) p.var.zero_grad();
      const ForwardOutputs out = model.forward(in, Mode::kTraining, &dropout_rng);
      const Var loss = softmax_cross_entropy(out.logits, labels);
      backward(loss);
      epoch_loss += loss.value().item() * double(batch.size());

      ++adam.step;
      const double c1 = 1.0 - std::pow(opt.beta1, double(adam.step));
      const double c2 = 1.0 - std::pow(opt.beta2, double(adam.step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        if (!p.trainable) continue;
        const Tensor g = p.var.grad();
        Tensor& w = p.var.mutable_value();
        const double decay = w.rank() >= 2 ? opt.weight_decay : 0.0;
        double* m = adam.m[i].ptr();
        double* v = adam.v[i].ptr();
        for (std::size_t j = 0; j < w.size(); ++j) {
          const double gj = g[j] + decay * w[j];
          m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * gj;
          v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * gj * gj;
          w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt.adam_epsilon);
        }
      }
    }
    epoch_loss /= double(chunks.size());
    require<NumericError>(std::isfinite(epoch_loss), "training diverged at epoch ", epoch + 1);

    const double val_loss = validation_set.empty()
                                ? std::numeric_limits<double>::quiet_NaN()
                                : evaluate_loss(model, validation_set, opt.chunk_frames, opt.batch_size);
    history.train_loss.push_back(epoch_loss);
    history.validation_loss.push_back(val_loss);
    history.learning_rate.push_back(lr);
    if (opt.on_epoch) opt.on_epoch(epoch + 1, epoch_loss, val_loss, lr);

    const double monitored = validation_set.empty() ? epoch_loss : val_loss;
    if (monitored < best) {
      best = monitored;
      stale = 0;
    } else if (++stale >= opt.plateau_patience) {
      lr = std::max(lr * opt.plateau_factor, opt.min_learning_rate);
      stale = 0;
    }
  }
  return history;
}

}  // namespace xvf
