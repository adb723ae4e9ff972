#include "xvf/ivector.hpp"

#include <bit>
#include <cmath>

#include "xvf/error.hpp"
#include "xvf/parallel.hpp"
#include "xvf/rng.hpp"

namespace xvf {

namespace {

void check_pairing(const TvModel& tv, const DiagGmm& ubm) {
  require<ShapeError>(tv.loading.rows() ==
                          static_cast<Eigen::Index>(ubm.num_components() * ubm.dim()),
                      "TV model has ", tv.loading.rows(), " rows but the UBM supervector has ",
                      ubm.num_components() * ubm.dim());
  require(tv.ubm_fingerprint == ubm.fingerprint(),
          "TV model was trained with a different UBM");
}

void check_pairing(const BwStats& stats, const DiagGmm& ubm) {
  require<ShapeError>(stats.num_components() == ubm.num_components() && stats.dim() == ubm.dim(),
                      "statistics shape (", stats.num_components(), " x ", stats.dim(),
                      ") does not match UBM (", ubm.num_components(), " x ", ubm.dim(), ")");
  require(stats.ubm_fingerprint == ubm.fingerprint(),
          "statistics were accumulated with a different UBM");
}

/// Per-component quantities that stay fixed during one E-step.
struct Precomputed {
  std::vector<RowMatrix> scaled_loading;  // Sigma_m^{-1} T_m, d x R
  std::vector<Matrix> gram;               // T_m^T Sigma_m^{-1} T_m, R x R

  Precomputed(const TvModel& tv, const DiagGmm& ubm) {
    const auto M = static_cast<Eigen::Index>(ubm.num_components());
    const auto d = static_cast<Eigen::Index>(ubm.dim());
    scaled_loading.resize(static_cast<std::size_t>(M));
    gram.resize(static_cast<std::size_t>(M));
    for (Eigen::Index m = 0; m < M; ++m) {
      const auto block = tv.loading.middleRows(m * d, d);
      const Vector inv_var = ubm.variances().row(m).transpose().cwiseInverse();
      scaled_loading[static_cast<std::size_t>(m)] = inv_var.asDiagonal() * block;
      gram[static_cast<std::size_t>(m)] = block.transpose() * scaled_loading[static_cast<std::size_t>(m)];
    }
  }
};

struct Posterior {
  Vector linear;     // b = sum_m T_m^T Sigma_m^{-1} (F_m - N_m mu_m)
  Matrix precision;  // L = I + sum_m N_m T_m^T Sigma_m^{-1} T_m
  Vector mean;       // L^{-1} b
  Matrix covariance; // L^{-1}
  double objective = 0.0;
};

RowMatrix centred_stats(const BwStats& stats, const DiagGmm& ubm) {
  return stats.raw_first_order() - stats.occupancy.asDiagonal() * ubm.means();
}

Posterior posterior(const Precomputed& pre, const TvModel& tv, const DiagGmm& ubm,
                    const BwStats& stats, bool want_covariance) {
  const auto R = static_cast<Eigen::Index>(tv.rank());
  const RowMatrix centred = centred_stats(stats, ubm);
  Posterior p;
  p.linear = Vector::Zero(R);
  p.precision = Matrix::Identity(R, R);
  for (std::size_t m = 0; m < ubm.num_components(); ++m) {
    const auto mi = static_cast<Eigen::Index>(m);
    p.linear.noalias() += pre.scaled_loading[m].transpose() * centred.row(mi).transpose();
    p.precision.noalias() += stats.occupancy[mi] * pre.gram[m];
  }
  Eigen::LLT<Matrix> llt(p.precision);
  require<NumericError>(llt.info() == Eigen::Success, "i-vector precision is not positive definite");
  p.mean = llt.solve(p.linear);
  const Matrix L = llt.matrixL();
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  p.objective = 0.5 * p.linear.dot(p.mean) - 0.5 * log_det;
  if (want_covariance) p.covariance = llt.solve(Matrix::Identity(R, R));
  return p;
}

}  // namespace

void TvModel::save(Archive& archive, const std::string& prefix) const {
  archive.put(prefix + "/loading", loading);
  const std::int64_t meta[1] = {std::bit_cast<std::int64_t>(ubm_fingerprint)};
  archive.put_ints(prefix + "/meta", meta);
}

TvModel TvModel::load(const Archive& archive, const std::string& prefix) {
  TvModel tv;
  tv.loading = archive.matrix(prefix + "/loading");
  tv.ubm_fingerprint = std::bit_cast<std::uint64_t>(archive.ints(prefix + "/meta").at(0));
  return tv;
}

TvModel init_total_variability(const DiagGmm& ubm, std::size_t rank, double init_scale,
                               std::uint64_t seed) {
  const std::size_t supervector = ubm.num_components() * ubm.dim();
  require(rank >= 1, "total variability rank must be at least 1");
  require(rank <= supervector, "total variability rank ", rank,
          " exceeds the supervector dimension ", supervector);
  Rng rng(seed);
  TvModel tv;
  tv.ubm_fingerprint = ubm.fingerprint();
  tv.loading.resize(static_cast<Eigen::Index>(supervector), static_cast<Eigen::Index>(rank));
  const auto d = static_cast<Eigen::Index>(ubm.dim());
  for (Eigen::Index r = 0; r < tv.loading.rows(); ++r) {
    const double stddev = std::sqrt(ubm.variances()(r / d, r % d));
    for (Eigen::Index c = 0; c < tv.loading.cols(); ++c) {
      tv.loading(r, c) = init_scale * stddev * rng.normal();
    }
  }
  return tv;
}

double tv_objective(const TvModel& tv, const DiagGmm& ubm, std::span<const BwStats> stats) {
  check_pairing(tv, ubm);
  const Precomputed pre(tv, ubm);
  double total = 0.0;
  for (const auto& s : stats) {
    check_pairing(s, ubm);
    total += posterior(pre, tv, ubm, s, false).objective;
  }
  return total;
}

TvTrainResult train_total_variability(const DiagGmm& ubm, std::span<const BwStats> stats,
                                      TvModel initial, std::size_t iterations,
                                      std::size_t threads) {
  check_pairing(initial, ubm);
  require(!stats.empty(), "train_total_variability: no statistics");
  for (const auto& s : stats) check_pairing(s, ubm);

  const auto M = static_cast<Eigen::Index>(ubm.num_components());
  const auto d = static_cast<Eigen::Index>(ubm.dim());
  const auto R = static_cast<Eigen::Index>(initial.rank());

  std::vector<RowMatrix> centred(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) centred[i] = centred_stats(stats[i], ubm);

  TvTrainResult result;
  result.model = std::move(initial);
  for (std::size_t it = 0; it < iterations; ++it) {
    const Precomputed pre(result.model, ubm);
    std::vector<Posterior> post(stats.size());
    parallel_for(stats.size(), threads, [&](std::size_t i) {
      post[i] = posterior(pre, result.model, ubm, stats[i], true);
    });

    // Second-moment (C_m) and cross (A_m) accumulators, reduced in utterance order.
    std::vector<Matrix> second(static_cast<std::size_t>(M), Matrix::Zero(R, R));
    std::vector<RowMatrix> cross(static_cast<std::size_t>(M), RowMatrix::Zero(d, R));
    double objective = 0.0;
    for (std::size_t i = 0; i < stats.size(); ++i) {
      const Posterior& p = post[i];
      objective += p.objective;
      const Matrix moment = p.covariance + p.mean * p.mean.transpose();
      for (Eigen::Index m = 0; m < M; ++m) {
        const double occ = stats[i].occupancy[m];
        second[static_cast<std::size_t>(m)].noalias() += occ * moment;
        cross[static_cast<std::size_t>(m)].noalias() +=
            centred[i].row(m).transpose() * p.mean.transpose();
      }
    }
    result.objective.push_back(objective);

    for (Eigen::Index m = 0; m < M; ++m) {
      Eigen::LDLT<Matrix> ldlt(second[static_cast<std::size_t>(m)]);
      if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12) continue;
      result.model.loading.middleRows(m * d, d) =
          ldlt.solve(cross[static_cast<std::size_t>(m)].transpose()).transpose();
    }
  }
  result.objective.push_back(tv_objective(result.model, ubm, stats));
  return result;
}

TvTrainResult train_total_variability(const DiagGmm& ubm, std::span<const BwStats> stats,
                                      const TvTrainOptions& o) {
  return train_total_variability(ubm, stats,
                                 init_total_variability(ubm, o.rank, o.init_scale, o.seed),
                                 o.iterations, o.threads);
}

Vector extract_ivector(const TvModel& tv, const DiagGmm& ubm, const BwStats& stats) {
  return IvectorExtractor(tv, ubm).extract(stats);
}

struct IvectorExtractor::Cache : Precomputed {
  using Precomputed::Precomputed;
};

IvectorExtractor::IvectorExtractor(const TvModel& tv, const DiagGmm& ubm) : tv_(tv), ubm_(ubm) {
  check_pairing(tv, ubm);
  cache_ = std::make_unique<const Cache>(tv, ubm);
}

IvectorExtractor::~IvectorExtractor() = default;
IvectorExtractor::IvectorExtractor(IvectorExtractor&&) noexcept = default;

Vector IvectorExtractor::extract(const BwStats& stats) const {
  check_pairing(stats, ubm_);
  return posterior(*cache_, tv_, ubm_, stats, false).mean;
}

}  // namespace xvf
