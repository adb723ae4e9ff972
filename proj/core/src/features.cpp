#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "xvf/error.hpp"
#include "xvf/features.hpp"

namespace xvf {

namespace {

double mel_scale(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

/// [num_bins x (fft_size/2 + 1)] triangular filters, equally spaced on the mel scale.
RowMatrix mel_filterbank(const MfccOptions& o, double sample_rate) {
  const double nyquist = 0.5 * sample_rate;
  const double high = o.high_freq > 0.0 ? o.high_freq : nyquist;
  require(o.low_freq >= 0.0 && high > o.low_freq && high <= nyquist,
          "mel filterbank: invalid frequency range [", o.low_freq, ", ", high, "]");
  const std::size_t num_fft_bins = o.fft_size / 2 + 1;
  const double mel_low = mel_scale(o.low_freq);
  const double mel_high = mel_scale(high);
  const double mel_step = (mel_high - mel_low) / static_cast<double>(o.num_mel_bins + 1);
  RowMatrix bank = RowMatrix::Zero(static_cast<Eigen::Index>(o.num_mel_bins),
                                   static_cast<Eigen::Index>(num_fft_bins));
  for (std::size_t m = 0; m < o.num_mel_bins; ++m) {
    const double left = mel_low + static_cast<double>(m) * mel_step;
    const double center = left + mel_step;
    const double right = center + mel_step;
    for (std::size_t k = 0; k < num_fft_bins; ++k) {
      const double mel = mel_scale(sample_rate * static_cast<double>(k) / static_cast<double>(o.fft_size));
      double w = 0.0;
      if (mel > left && mel <= center) {
        w = (mel - left) / (center - left);
      } else if (mel > center && mel < right) {
        w = (right - mel) / (right - center);
      }
      bank(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = w;
    }
  }
  return bank;
}

/// Orthonormal DCT-II rows 0..num_ceps-1 over num_bins inputs.
RowMatrix dct_matrix(std::size_t num_ceps, std::size_t num_bins) {
  RowMatrix dct(static_cast<Eigen::Index>(num_ceps), static_cast<Eigen::Index>(num_bins));
  const double n = static_cast<double>(num_bins);
  for (std::size_t k = 0; k < num_ceps; ++k) {
    const double norm = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t j = 0; j < num_bins; ++j) {
      dct(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
          norm * std::cos(std::numbers::pi * static_cast<double>(k) * (static_cast<double>(j) + 0.5) / n);
    }
  }
  return dct;
}

}  // namespace

double log_energy_floor() { return std::log(std::numeric_limits<double>::epsilon()); }

FeatureMatrix compute_mfcc(const Waveform& wave, const MfccOptions& o) {
  require(wave.sample_rate > 0.0, "compute_mfcc: sample rate must be positive, got ",
          wave.sample_rate);
  const auto window = static_cast<std::size_t>(std::lround(o.frame_length * wave.sample_rate));
  const auto shift = static_cast<std::size_t>(std::lround(o.frame_shift * wave.sample_rate));
  require(window > 0 && shift > 0, "compute_mfcc: window and shift must be positive");
  require(o.fft_size >= window, "compute_mfcc: FFT size ", o.fft_size, " shorter than window ",
          window);
  require(o.num_ceps >= 1 && o.num_ceps <= o.num_mel_bins,
          "compute_mfcc: need 1 <= num_ceps <= num_mel_bins");
  require(wave.samples.size() >= window, "compute_mfcc: signal of ", wave.samples.size(),
          " samples is shorter than one ", window, "-sample window");

  const std::size_t num_frames = 1 + (wave.samples.size() - window) / shift;
  const RowMatrix bank = mel_filterbank(o, wave.sample_rate);
  const RowMatrix dct = dct_matrix(o.num_ceps, o.num_mel_bins);
  std::vector<double> hamming(window);
  for (std::size_t i = 0; i < window; ++i) {
    hamming[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                         static_cast<double>(window - 1));
  }

  const double eps = std::numeric_limits<double>::epsilon();
  const std::size_t num_fft_bins = o.fft_size / 2 + 1;
  Eigen::FFT<double> fft;
  std::vector<double> frame(o.fft_size);
  std::vector<std::complex<double>> spectrum;
  Vector power(static_cast<Eigen::Index>(num_fft_bins));

  FeatureMatrix out;
  out.frame_shift = o.frame_shift;
  out.frame_length = o.frame_length;
  out.frames.resize(static_cast<Eigen::Index>(num_frames), static_cast<Eigen::Index>(o.num_ceps));
  for (std::size_t f = 0; f < num_frames; ++f) {
    const double* src = wave.samples.data() + f * shift;
    double energy = 0.0;
    for (std::size_t i = 0; i < window; ++i) energy += src[i] * src[i];

    std::fill(frame.begin(), frame.end(), 0.0);
    for (std::size_t i = window; i-- > 0;) {
      const double prev = i > 0 ? src[i - 1] : src[0];
      frame[i] = (src[i] - o.preemphasis * prev) * hamming[i];
    }
    fft.fwd(spectrum, frame);
    for (std::size_t k = 0; k < num_fft_bins; ++k) {
      power[static_cast<Eigen::Index>(k)] = std::norm(spectrum[k]);
    }
    const Vector log_mel = (bank * power).array().max(eps).log().matrix();
    Vector ceps = dct * log_mel;
    if (o.use_energy) ceps[0] = std::log(std::max(energy, eps));
    out.frames.row(static_cast<Eigen::Index>(f)) = ceps.transpose();
  }
  return out;
}

FeatureMatrix add_deltas(const FeatureMatrix& feats, int order, int window) {
  require(feats.num_frames() > 0, "add_deltas: empty feature matrix");
  require(order >= 0 && window >= 1, "add_deltas: invalid order/window");
  const auto T = static_cast<Eigen::Index>(feats.num_frames());
  const auto d = static_cast<Eigen::Index>(feats.dim());
  double denom = 0.0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;

  FeatureMatrix out = feats;
  out.frames.resize(T, d * (order + 1));
  out.frames.leftCols(d) = feats.frames;
  RowMatrix prev = feats.frames;
  for (int k = 1; k <= order; ++k) {
    RowMatrix next = RowMatrix::Zero(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int n = 1; n <= window; ++n) {
        const Eigen::Index fwd = std::min<Eigen::Index>(T - 1, t + n);
        const Eigen::Index back = std::max<Eigen::Index>(0, t - n);
        next.row(t) += n * (prev.row(fwd) - prev.row(back));
      }
    }
    next /= denom;
    out.frames.middleCols(d * k, d) = next;
    prev = std::move(next);
  }
  return out;
}

FeatureMatrix sliding_cmn(const FeatureMatrix& feats, double window_seconds) {
  require(feats.num_frames() > 0, "sliding_cmn: empty feature matrix");
  require(window_seconds > feats.frame_shift, "sliding_cmn: window ", window_seconds,
          " s must exceed the frame shift ", feats.frame_shift, " s");
  const auto T = static_cast<Eigen::Index>(feats.num_frames());
  const auto half = static_cast<Eigen::Index>(std::lround(0.5 * window_seconds / feats.frame_shift));
  FeatureMatrix out = feats;
  Eigen::RowVectorXd sum(feats.frames.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, t - half);
    const Eigen::Index hi = std::min<Eigen::Index>(T - 1, t + half);
    sum.setZero();
    for (Eigen::Index s = lo; s <= hi; ++s) sum += feats.frames.row(s);
    out.frames.row(t) = feats.frames.row(t) - sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

std::vector<bool> energy_vad_mask(const FeatureMatrix& feats, const VadOptions& o) {
  require(feats.num_frames() > 0, "energy_vad: empty feature matrix");
  require(o.energy_column < feats.dim(), "energy_vad: energy column ", o.energy_column,
          " out of range for dimension ", feats.dim());
  const auto energy = feats.frames.col(static_cast<Eigen::Index>(o.energy_column));
  const double threshold = energy.mean() + o.mean_offset;
  std::vector<bool> keep(feats.num_frames());
  for (std::size_t t = 0; t < keep.size(); ++t) {
    const double e = energy[static_cast<Eigen::Index>(t)];
    keep[t] = e > threshold && e > o.absolute_threshold;
  }
  return keep;
}

FeatureMatrix energy_vad(const FeatureMatrix& feats, const VadOptions& o) {
  const auto keep = energy_vad_mask(feats, o);
  const auto kept = static_cast<Eigen::Index>(std::count(keep.begin(), keep.end(), true));
  if (kept == 0) fail<NoSpeechError>("energy_vad: no speech frames detected");
  FeatureMatrix out;
  out.frame_shift = feats.frame_shift;
  out.frame_length = feats.frame_length;
  out.frames.resize(kept, feats.frames.cols());
  Eigen::Index row = 0;
  for (std::size_t t = 0; t < keep.size(); ++t) {
    if (keep[t]) out.frames.row(row++) = feats.frames.row(static_cast<Eigen::Index>(t));
  }
  return out;
}

}  // namespace xvf
