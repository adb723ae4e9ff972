#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "xvf/linalg.hpp"

namespace xvf {

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;
};

/// T x d features, one frame per row.
struct FeatureMatrix {
  RowMatrix frames;
  double frame_shift = 0.010;
  double frame_length = 0.025;

  std::size_t num_frames() const { return static_cast<std::size_t>(frames.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(frames.cols()); }
};

/// Mono PCM WAV, 16-bit integer or 32-bit float. Integer samples are scaled to [-1, 1).
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wave);

struct MfccOptions {
  double frame_length = 0.025;
  double frame_shift = 0.010;
  double preemphasis = 0.97;
  std::size_t fft_size = 512;
  std::size_t num_mel_bins = 30;
  std::size_t num_ceps = 23;
  double low_freq = 20.0;
  double high_freq = 0.0;  // <= 0 means Nyquist
  /// c0 is replaced by the frame log-energy.
  bool use_energy = true;
};

/// Frames: 1 + floor((N - window) / shift). Hamming window, power spectrum,
/// mel filterbank, log, orthonormal DCT-II, no liftering.
FeatureMatrix compute_mfcc(const Waveform& wave, const MfccOptions& options = {});

/// Frame log-energy floor (log of machine epsilon).
double log_energy_floor();

/// Appends regression deltas up to `order` using a +/- `window` frame window
/// with replicated edges. Output dimension is (order + 1) * d.
FeatureMatrix add_deltas(const FeatureMatrix& feats, int order = 2, int window = 2);

/// Subtracts from each frame the mean of the frames within +/- window/2
/// seconds (truncated at the utterance edges).
FeatureMatrix sliding_cmn(const FeatureMatrix& feats, double window_seconds = 3.0);

struct VadOptions {
  /// Column holding log-energy.
  std::size_t energy_column = 0;
  /// Keep frames with energy above (utterance mean + offset).
  double mean_offset = -1.0;
  /// Frames at or below this log-energy are never speech.
  double absolute_threshold = -30.0;
};

/// Per-frame keep decisions.
std::vector<bool> energy_vad_mask(const FeatureMatrix& feats, const VadOptions& options = {});

/// Keeps the frames marked as speech, in order. Throws NoSpeechError if none survive.
FeatureMatrix energy_vad(const FeatureMatrix& feats, const VadOptions& options = {});

}  // namespace xvf
