#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "xvf/gmm.hpp"

namespace xvf {

/// Total-variability loading matrix, (M*d) x R, in the feature domain.
/// Block m (rows m*d .. m*d+d-1) shifts the mean of UBM component m.
struct TvModel {
  RowMatrix loading;
  std::uint64_t ubm_fingerprint = 0;

  std::size_t rank() const { return static_cast<std::size_t>(loading.cols()); }

  void save(Archive& archive, const std::string& prefix = "tv") const;
  static TvModel load(const Archive& archive, const std::string& prefix = "tv");
};

struct TvTrainOptions {
  std::size_t rank = 400;
  std::size_t iterations = 10;
  /// Stddev of the random initialization relative to the UBM standard deviations.
  double init_scale = 0.1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct TvTrainResult {
  TvModel model;
  /// EM auxiliary objective (marginal log-likelihood of the centred
  /// statistics up to a model-independent constant) before each update and
  /// after the last one.
  std::vector<double> objective;
};

TvModel init_total_variability(const DiagGmm& ubm, std::size_t rank, double init_scale,
                               std::uint64_t seed);

/// EM for the loading matrix starting from `initial`.
TvTrainResult train_total_variability(const DiagGmm& ubm, std::span<const BwStats> stats,
                                      TvModel initial, std::size_t iterations,
                                      std::size_t threads = 1);

TvTrainResult train_total_variability(const DiagGmm& ubm, std::span<const BwStats> stats,
                                      const TvTrainOptions& options);

/// Posterior mean of the latent factor given centred statistics.
Vector extract_ivector(const TvModel& tv, const DiagGmm& ubm, const BwStats& stats);

/// Caches the per-component products so repeated extraction is cheap.
/// Holds references to `tv` and `ubm`, which must outlive it.
class IvectorExtractor {
 public:
  IvectorExtractor(const TvModel& tv, const DiagGmm& ubm);
  ~IvectorExtractor();
  IvectorExtractor(IvectorExtractor&&) noexcept;

  Vector extract(const BwStats& stats) const;

 private:
  struct Cache;
  const TvModel& tv_;
  const DiagGmm& ubm_;
  std::unique_ptr<const Cache> cache_;
};

/// Model-dependent part of log p(stats | T) used as the EM objective.
double tv_objective(const TvModel& tv, const DiagGmm& ubm, std::span<const BwStats> stats);

}  // namespace xvf
