#include "xvf/gmm.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <numbers>

#include "xvf/error.hpp"
#include "xvf/parallel.hpp"
#include "xvf/rng.hpp"

namespace xvf {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    auto bits = std::bit_cast<std::uint64_t>(data[i]);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

double log_sum_exp(const Vector& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

// exp(ll - max) normalized to sum 1. Scalar std::exp so far-off components
// get exactly zero (Eigen's packet exp clamps to the smallest normal).
Vector normalized_exp(const Vector& ll) {
  const double mx = ll.maxCoeff();
  Vector p(ll.size());
  for (Eigen::Index m = 0; m < ll.size(); ++m) p[m] = std::exp(ll[m] - mx);
  return p / p.sum();
}

Eigen::Map<const Eigen::RowVectorXd> row_view(std::span<const double> x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

struct EmAccumulator {
  Vector occupancy;
  RowMatrix sum_x;
  RowMatrix sum_xx;
  double log_likelihood = 0.0;

  EmAccumulator(Eigen::Index m, Eigen::Index d)
      : occupancy(Vector::Zero(m)), sum_x(RowMatrix::Zero(m, d)), sum_xx(RowMatrix::Zero(m, d)) {}

  void add(const EmAccumulator& o) {
    occupancy += o.occupancy;
    sum_x += o.sum_x;
    sum_xx += o.sum_xx;
    log_likelihood += o.log_likelihood;
  }
};

EmAccumulator accumulate_em(const DiagGmm& gmm, const FeatureMatrix& feats) {
  const auto M = static_cast<Eigen::Index>(gmm.num_components());
  const auto d = static_cast<Eigen::Index>(gmm.dim());
  EmAccumulator acc(M, d);
  for (Eigen::Index t = 0; t < feats.frames.rows(); ++t) {
    const auto x = feats.frames.row(t);
    const std::span<const double> frame(x.data(), static_cast<std::size_t>(d));
    Vector ll = gmm.component_log_likelihoods(frame);
    const double total = log_sum_exp(ll);
    acc.log_likelihood += total;
    const Vector gamma = normalized_exp(ll);
    acc.occupancy += gamma;
    acc.sum_x.noalias() += gamma * x;
    acc.sum_xx.noalias() += gamma * x.array().square().matrix();
  }
  return acc;
}

EmAccumulator accumulate_em(const DiagGmm& gmm, std::span<const FeatureMatrix> features,
                            std::size_t threads) {
  const auto M = static_cast<Eigen::Index>(gmm.num_components());
  const auto d = static_cast<Eigen::Index>(gmm.dim());
  std::vector<EmAccumulator> parts(features.size(), EmAccumulator(0, 0));
  parallel_for(features.size(), threads, [&](std::size_t i) { parts[i] = accumulate_em(gmm, features[i]); });
  EmAccumulator total(M, d);
  for (const auto& p : parts) total.add(p);
  return total;
}

}  // namespace

DiagGmm::DiagGmm(Vector weights, RowMatrix means, RowMatrix variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
  require<ShapeError>(weights_.size() >= 1 && means_.rows() == weights_.size() &&
                          variances_.rows() == weights_.size() &&
                          variances_.cols() == means_.cols() && means_.cols() >= 1,
                      "DiagGmm: inconsistent parameter shapes");
  require((weights_.array() >= 0.0).all() && std::abs(weights_.sum() - 1.0) <= 1e-10,
          "DiagGmm: weights must be a probability simplex (sum ", weights_.sum(), ")");
  require((variances_.array() > 0.0).all(), "DiagGmm: variances must be positive");
  refresh();
}

void DiagGmm::refresh() {
  const double d = static_cast<double>(dim());
  inv_variances_ = variances_.cwiseInverse();
  log_consts_.resize(weights_.size());
  for (Eigen::Index m = 0; m < weights_.size(); ++m) {
    log_consts_[m] = std::log(weights_[m]) -
                     0.5 * (d * std::log(2.0 * std::numbers::pi) +
                            variances_.row(m).array().log().sum());
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(h, weights_.data(), static_cast<std::size_t>(weights_.size()));
  h = fnv1a(h, means_.data(), static_cast<std::size_t>(means_.size()));
  h = fnv1a(h, variances_.data(), static_cast<std::size_t>(variances_.size()));
  fingerprint_ = h;
}

Vector DiagGmm::component_log_likelihoods(std::span<const double> frame) const {
  require<ShapeError>(frame.size() == dim(), "GMM: frame dimension ", frame.size(),
                      " does not match model dimension ", dim());
  const auto x = row_view(frame);
  return log_consts_ -
         0.5 * ((means_.rowwise() - x).array().square() * inv_variances_.array())
                   .rowwise()
                   .sum()
                   .matrix();
}

double DiagGmm::log_likelihood(std::span<const double> frame) const {
  return log_sum_exp(component_log_likelihoods(frame));
}

void DiagGmm::save(Archive& archive, const std::string& prefix) const {
  archive.put(prefix + "/weights", weights_);
  archive.put(prefix + "/means", means_);
  archive.put(prefix + "/variances", variances_);
}

DiagGmm DiagGmm::load(const Archive& archive, const std::string& prefix) {
  return DiagGmm(archive.vector(prefix + "/weights"), archive.matrix(prefix + "/means"),
                 archive.matrix(prefix + "/variances"));
}

Vector posteriors(const DiagGmm& gmm, std::span<const double> frame) {
  const Vector ll = gmm.component_log_likelihoods(frame);
  return normalized_exp(ll);
}

UbmTrainResult train_ubm(std::span<const FeatureMatrix> features, const UbmTrainOptions& o) {
  require(o.num_components >= 1, "train_ubm: need at least one component");
  require(!features.empty(), "train_ubm: no training utterances");
  const auto d = static_cast<Eigen::Index>(features.front().dim());
  const auto M = static_cast<Eigen::Index>(o.num_components);

  std::vector<const double*> frames;
  for (const auto& f : features) {
    require<ShapeError>(f.frames.cols() == d, "train_ubm: inconsistent feature dimensions");
    for (Eigen::Index t = 0; t < f.frames.rows(); ++t) frames.push_back(f.frames.row(t).data());
  }
  require(frames.size() >= o.num_components, "train_ubm: ", frames.size(),
          " frames is fewer than ", o.num_components, " components");
  const double n = static_cast<double>(frames.size());

  Eigen::RowVectorXd global_mean = Eigen::RowVectorXd::Zero(d);
  for (const double* x : frames) global_mean += Eigen::Map<const Eigen::RowVectorXd>(x, d);
  global_mean /= n;
  Eigen::RowVectorXd global_var = Eigen::RowVectorXd::Zero(d);
  for (const double* x : frames) {
    global_var += (Eigen::Map<const Eigen::RowVectorXd>(x, d) - global_mean).array().square().matrix();
  }
  global_var /= n;
  const Eigen::RowVectorXd var_floor =
      (o.variance_floor_scale * global_var).cwiseMax(std::numeric_limits<double>::min());

  // k-means++ seeding on a random subset of frames.
  Rng rng(o.seed);
  std::vector<std::size_t> pool(frames.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  const std::size_t pool_size = std::min(pool.size(), std::max(o.max_seed_frames, o.num_components));
  for (std::size_t i = 0; i < pool_size; ++i) {
    std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
  }
  pool.resize(pool_size);

  RowMatrix means(M, d);
  std::vector<double> dist2(pool.size(), std::numeric_limits<double>::infinity());
  std::size_t chosen = pool[rng.index(pool.size())];
  for (Eigen::Index m = 0; m < M; ++m) {
    means.row(m) = Eigen::Map<const Eigen::RowVectorXd>(frames[chosen], d);
    double total = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const double dd =
          (Eigen::Map<const Eigen::RowVectorXd>(frames[pool[i]], d) - means.row(m)).squaredNorm();
      dist2[i] = std::min(dist2[i], dd);
      total += dist2[i];
    }
    if (total <= 0.0) {
      chosen = pool[rng.index(pool.size())];
      continue;
    }
    double target = rng.uniform() * total;
    std::size_t pick = pool.size() - 1;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      target -= dist2[i];
      if (target < 0.0) {
        pick = i;
        break;
      }
    }
    chosen = pool[pick];
  }

  RowMatrix variances = global_var.cwiseMax(var_floor).replicate(M, 1);
  DiagGmm gmm(Vector::Constant(M, 1.0 / static_cast<double>(M)), means, variances);

  UbmTrainResult result;
  constexpr double kMinOccupancy = 1e-8;
  for (std::size_t it = 0; it < o.iterations; ++it) {
    const EmAccumulator acc = accumulate_em(gmm, features, o.threads);
    result.log_likelihood.push_back(acc.log_likelihood);

    Vector weights = gmm.weights();
    RowMatrix new_means = gmm.means();
    RowMatrix new_vars = gmm.variances();
    for (Eigen::Index m = 0; m < M; ++m) {
      const double occ = acc.occupancy[m];
      weights[m] = occ / n;
      if (occ < kMinOccupancy) continue;
      new_means.row(m) = acc.sum_x.row(m) / occ;
      new_vars.row(m) = (acc.sum_xx.row(m) / occ - new_means.row(m).array().square().matrix())
                            .cwiseMax(var_floor);
    }
    weights = weights.cwiseMax(std::numeric_limits<double>::min());
    weights /= weights.sum();
    gmm = DiagGmm(weights, new_means, new_vars);
  }
  result.log_likelihood.push_back(accumulate_em(gmm, features, o.threads).log_likelihood);
  result.gmm = std::move(gmm);
  return result;
}

RowMatrix BwStats::raw_first_order() const {
  if (normalization == StatsNormalization::kFrameCount) {
    return first_order * static_cast<double>(frame_count);
  }
  return occupancy.asDiagonal() * first_order;
}

void BwStats::save(Archive& archive, const std::string& prefix) const {
  archive.put(prefix + "/occupancy", occupancy);
  archive.put(prefix + "/first_order", first_order);
  const std::int64_t meta[3] = {static_cast<std::int64_t>(frame_count),
                                static_cast<std::int64_t>(normalization),
                                std::bit_cast<std::int64_t>(ubm_fingerprint)};
  archive.put_ints(prefix + "/meta", meta);
}

BwStats BwStats::load(const Archive& archive, const std::string& prefix) {
  BwStats s;
  s.occupancy = archive.vector(prefix + "/occupancy");
  s.first_order = archive.matrix(prefix + "/first_order");
  const auto meta = archive.ints(prefix + "/meta");
  require<IoError>(meta.size() == 3, "stats record '", prefix, "/meta' malformed");
  s.frame_count = static_cast<std::size_t>(meta[0]);
  s.normalization = static_cast<StatsNormalization>(meta[1]);
  s.ubm_fingerprint = std::bit_cast<std::uint64_t>(meta[2]);
  return s;
}

BwStats accumulate_bw_stats(const DiagGmm& gmm, const FeatureMatrix& feats,
                            StatsNormalization normalization) {
  require(feats.num_frames() > 0, "accumulate_bw_stats: empty feature matrix");
  require<ShapeError>(feats.dim() == gmm.dim(), "accumulate_bw_stats: feature dimension ",
                      feats.dim(), " does not match UBM dimension ", gmm.dim());
  const auto M = static_cast<Eigen::Index>(gmm.num_components());
  BwStats stats;
  stats.occupancy = Vector::Zero(M);
  stats.first_order = RowMatrix::Zero(M, feats.frames.cols());
  stats.frame_count = feats.num_frames();
  stats.normalization = normalization;
  stats.ubm_fingerprint = gmm.fingerprint();
  for (Eigen::Index t = 0; t < feats.frames.rows(); ++t) {
    const auto x = feats.frames.row(t);
    const Vector gamma = posteriors(gmm, {x.data(), feats.dim()});
    stats.occupancy += gamma;
    stats.first_order.noalias() += gamma * x;
  }
  if (normalization == StatsNormalization::kFrameCount) {
    stats.first_order /= static_cast<double>(stats.frame_count);
  } else {
    for (Eigen::Index m = 0; m < M; ++m) {
      const double occ = stats.occupancy[m];
      stats.first_order.row(m) = occ > 0.0 ? (stats.first_order.row(m) / occ).eval()
                                            : Eigen::RowVectorXd::Zero(stats.first_order.cols());
    }
  }
  return stats;
}

}  // namespace xvf
