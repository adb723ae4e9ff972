#pragma once

// Deterministic synthetic speaker corpus generated directly in cepstral space.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xvf/features.hpp"
#include "xvf/metrics.hpp"

namespace xvf {

enum class Split { kTrain, kEnroll, kTest, kUnlabeled };

std::string_view split_name(Split split);
Split parse_split(std::string_view text);

struct UtteranceRecord {
  std::string id;
  std::string speaker;
  std::size_t frames = 0;
  Split split = Split::kTrain;
};

struct CorpusManifest {
  std::vector<UtteranceRecord> utterances;
  std::uint64_t seed = 0;

  std::vector<const UtteranceRecord*> in_split(Split split) const;
  /// `<utt-id> <spk-id> <frames> <split>` per line, preceded by a `# seed=` comment.
  void save(const std::filesystem::path& path) const;
  static CorpusManifest load(const std::filesystem::path& path);
};

struct CorpusOptions {
  std::size_t train_speakers = 20;
  std::size_t utterances_per_train_speaker = 20;
  std::size_t eval_speakers = 20;
  std::size_t enroll_per_speaker = 2;
  std::size_t test_per_speaker = 5;
  std::size_t unlabeled_speakers = 20;
  std::size_t utterances_per_unlabeled_speaker = 4;
  std::size_t min_frames = 250;
  std::size_t max_frames = 350;
  std::size_t dim = 23;
  /// Components of the shared base mixture frames are drawn from.
  std::size_t num_components = 8;
  /// Probability that consecutive frames stay in the same component.
  double stay_probability = 0.9;
  /// Spread of base component means.
  double component_scale = 2.0;
  /// Per-speaker, per-component mean offsets.
  double speaker_scale = 0.9;
  /// Speaker offsets live in a random subspace of this many dimensions
  /// (0: every component and dimension varies independently).
  std::size_t speaker_rank = 8;
  /// Per-utterance offset shared by all components.
  double session_scale = 0.2;
  /// Enroll, test and unlabeled utterances come from a shifted domain: a
  /// fixed channel offset plus this session scale instead of session_scale.
  double domain_offset_scale = 0.5;
  double domain_session_scale = 0.4;
  /// Per-dimension frame noise standard deviation, drawn from [noise_min, noise_max].
  double noise_min = 0.6;
  double noise_max = 1.2;
  std::uint64_t seed = 0;
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<FeatureMatrix> features;  // parallel to manifest.utterances
};

Corpus generate_corpus(const CorpusOptions& options);
/// Training split only: num_speakers x utts_per_speaker utterances of fixed length.
Corpus generate_corpus(std::size_t num_speakers, std::size_t utts_per_speaker,
                       std::size_t frames_per_utt, std::uint64_t seed);

/// Enroll x test pairs, sampled without replacement and shuffled.
TrialSet generate_trials(const CorpusManifest& manifest, std::size_t num_target,
                         std::size_t num_nontarget, std::uint64_t seed);

/// One record per utterance id.
void write_feature_archive(const std::filesystem::path& path, std::span<const std::string> ids,
                           std::span<const FeatureMatrix> features);
struct FeatureArchive {
  std::vector<std::string> ids;
  std::vector<FeatureMatrix> features;
  std::map<std::string, std::size_t, std::less<>> index;

  const FeatureMatrix& at(std::string_view id) const;
};
FeatureArchive read_feature_archive(const std::filesystem::path& path);

}  // namespace xvf
