#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xvf/archive.hpp"
#include "xvf/features.hpp"
#include "xvf/linalg.hpp"

namespace xvf {

/// Diagonal-covariance Gaussian mixture.
class DiagGmm {
 public:
  DiagGmm() = default;
  DiagGmm(Vector weights, RowMatrix means, RowMatrix variances);

  std::size_t num_components() const { return static_cast<std::size_t>(weights_.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(means_.cols()); }

  const Vector& weights() const { return weights_; }
  const RowMatrix& means() const { return means_; }
  const RowMatrix& variances() const { return variances_; }

  /// log(w_m) + log N(x; mu_m, diag(var_m)) for every component.
  Vector component_log_likelihoods(std::span<const double> frame) const;
  double log_likelihood(std::span<const double> frame) const;

  /// Stable 64-bit digest of all parameters; statistics and TV models record
  /// it so they cannot be paired with a different UBM.
  std::uint64_t fingerprint() const { return fingerprint_; }

  void save(Archive& archive, const std::string& prefix = "ubm") const;
  static DiagGmm load(const Archive& archive, const std::string& prefix = "ubm");

 private:
  void refresh();

  Vector weights_;
  RowMatrix means_;
  RowMatrix variances_;
  Vector log_consts_;
  RowMatrix inv_variances_;
  std::uint64_t fingerprint_ = 0;
};

/// Component posteriors for one frame, computed in the log domain.
Vector posteriors(const DiagGmm& gmm, std::span<const double> frame);

struct UbmTrainOptions {
  std::size_t num_components = 512;
  std::size_t iterations = 20;
  /// Variance floor = this fraction of the global per-dimension variance.
  double variance_floor_scale = 1e-3;
  /// k-means++ seeding draws centres from at most this many frames.
  std::size_t max_seed_frames = 20000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct UbmTrainResult {
  DiagGmm gmm;
  /// Total data log-likelihood before each EM update, plus the final model's.
  std::vector<double> log_likelihood;
};

UbmTrainResult train_ubm(std::span<const FeatureMatrix> features, const UbmTrainOptions& options);

enum class StatsNormalization : std::uint8_t {
  /// f_m = sum_t gamma_t(m) x_t / T
  kFrameCount = 0,
  /// f_m = sum_t gamma_t(m) x_t / sum_t gamma_t(m)
  kOccupancy = 1,
};

/// Zeroth- and normalized first-order Baum-Welch statistics of one utterance.
struct BwStats {
  Vector occupancy;        // M
  RowMatrix first_order;   // M x d, the F matrix
  std::size_t frame_count = 0;
  StatsNormalization normalization = StatsNormalization::kFrameCount;
  std::uint64_t ubm_fingerprint = 0;

  std::size_t num_components() const { return static_cast<std::size_t>(occupancy.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(first_order.cols()); }

  /// sum_t gamma_t(m) x_t, independent of the normalization.
  RowMatrix raw_first_order() const;

  void save(Archive& archive, const std::string& prefix) const;
  static BwStats load(const Archive& archive, const std::string& prefix);
};

BwStats accumulate_bw_stats(const DiagGmm& gmm, const FeatureMatrix& feats,
                            StatsNormalization normalization = StatsNormalization::kFrameCount);

}  // namespace xvf
