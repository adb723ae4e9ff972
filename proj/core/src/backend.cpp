#include "xvf/backend.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "xvf/error.hpp"

namespace xvf {

namespace {

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Vector mean_of(const RowMatrix& data) { return data.colwise().mean().transpose(); }

/// Maximum-likelihood covariance about the sample mean.
Matrix covariance_of(const RowMatrix& data) {
  const RowMatrix centered = data.rowwise() - data.colwise().mean();
  return symmetrize(centered.transpose() * centered / double(data.rows()));
}

/// Rows grouped by label, in increasing label order.
std::map<std::size_t, std::vector<Eigen::Index>> group_rows(const RowMatrix& data,
                                                            std::span<const std::size_t> labels) {
  require<ShapeError>(labels.size() == static_cast<std::size_t>(data.rows()), "got ", labels.size(),
                      " labels for ", data.rows(), " rows");
  std::map<std::size_t, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<Eigen::Index>(i));
  return groups;
}

double log_det_spd(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  require<NumericError>(llt.info() == Eigen::Success, what, " is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Matrix inverse_spd(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  require<NumericError>(llt.info() == Eigen::Success, what, " is not positive definite");
  return symmetrize(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

/// Clamps eigenvalues from below.
Matrix floor_eigenvalues(const Matrix& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
  const Vector values = eig.eigenvalues().cwiseMax(floor);
  return symmetrize(eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose());
}

struct SpeakerSums {
  std::size_t count;
  Vector sum;
  Matrix scatter;  // sum of (x - xbar)(x - xbar)^T
};

std::vector<SpeakerSums> speaker_sums(const RowMatrix& data, std::span<const std::size_t> labels,
                                      std::size_t* excluded) {
  std::vector<SpeakerSums> out;
  std::size_t dropped = 0;
  for (const auto& [label, rows] : group_rows(data, labels)) {
    if (rows.size() < 2) {
      ++dropped;
      continue;
    }
    RowMatrix x(static_cast<Eigen::Index>(rows.size()), data.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = data.row(rows[i]);
    const Vector mean = mean_of(x);
    const RowMatrix c = x.rowwise() - mean.transpose();
    out.push_back({rows.size(), x.colwise().sum().transpose(), c.transpose() * c});
  }
  if (excluded) *excluded = dropped;
  return out;
}

double log_likelihood_from_sums(const PldaModel& model, std::span<const SpeakerSums> speakers) {
  const double d = double(model.dim());
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const Matrix w_inv = inverse_spd(model.within, "PLDA within-class covariance");
  const double log_det_w = log_det_spd(model.within, "PLDA within-class covariance");
  double total = 0.0;
  for (const auto& s : speakers) {
    const double n = double(s.count);
    const Matrix cov = model.between + model.within / n;
    const Vector diff = s.sum / n - model.mean;
    Eigen::LLT<Matrix> llt(cov);
    require<NumericError>(llt.info() == Eigen::Success, "PLDA speaker-mean covariance is not positive definite");
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    total += -0.5 * (d * log2pi + log_det + diff.dot(llt.solve(diff)));
    total += -0.5 * (n - 1.0) * (d * log2pi + log_det_w) - 0.5 * (w_inv.cwiseProduct(s.scatter)).sum() -
             0.5 * d * std::log(n);
  }
  return total;
}

}  // namespace

// ---------------------------------------------------------------------------
// LDA

Vector LdaTransform::apply(const Vector& x) const {
  require<ShapeError>(static_cast<std::size_t>(x.size()) == input_dim(), "LDA expects dimension ",
                      input_dim(), ", got ", x.size());
  return projection * (x - mean);
}

RowMatrix LdaTransform::apply(const RowMatrix& rows) const {
  require<ShapeError>(static_cast<std::size_t>(rows.cols()) == input_dim(), "LDA expects dimension ",
                      input_dim(), ", got ", rows.cols());
  return (rows.rowwise() - mean.transpose()) * projection.transpose();
}

void LdaTransform::save(Archive& archive, const std::string& prefix) const {
  archive.put(prefix + ".projection", RowMatrix(projection));
  archive.put(prefix + ".mean", mean);
}

LdaTransform LdaTransform::load(const Archive& archive, const std::string& prefix) {
  LdaTransform t;
  t.projection = archive.matrix(prefix + ".projection");
  t.mean = archive.vector(prefix + ".mean");
  require<IoError>(t.projection.cols() == t.mean.size(), "LDA archive is inconsistent");
  return t;
}

LdaTransform fit_lda(const RowMatrix& data, std::span<const std::size_t> labels, std::size_t output_dim) {
  std::size_t dropped = 0;
  const auto speakers = speaker_sums(data, labels, &dropped);
  if (dropped > 0) warn("LDA: ignoring ", dropped, " classes with a single embedding");
  require(speakers.size() >= 2, "LDA needs at least two classes with two or more embeddings, got ",
          speakers.size());
  require(output_dim >= 1, "LDA output dimension must be positive");
  require(output_dim <= speakers.size() - 1, "LDA output dimension ", output_dim,
          " exceeds number of classes minus one (", speakers.size() - 1, ")");
  const Eigen::Index d = data.cols();
  require(output_dim <= static_cast<std::size_t>(d), "LDA output dimension ", output_dim,
          " exceeds input dimension ", d);

  double total = 0.0;
  Vector mean = Vector::Zero(d);
  for (const auto& s : speakers) {
    mean += s.sum;
    total += double(s.count);
  }
  mean /= total;
  Matrix within = Matrix::Zero(d, d), between = Matrix::Zero(d, d);
  for (const auto& s : speakers) {
    within += s.scatter;
    const Vector diff = s.sum / double(s.count) - mean;
    between += double(s.count) * diff * diff.transpose();
  }
  within = symmetrize(within / total);
  between = symmetrize(between / total);

  const double scale = within.trace() / double(d);
  require<NumericError>(scale > 0.0, "LDA: within-class scatter is zero");
  const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(within, Eigen::EigenvaluesOnly).eigenvalues()(0);
  if (min_eig <= 1e-10 * scale) {
    warn("LDA: within-class scatter is singular; adding a ridge");
    within += 1e-6 * scale * Matrix::Identity(d, d);
  }

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(between, within);
  require<NumericError>(solver.info() == Eigen::Success, "LDA eigendecomposition failed");
  LdaTransform t;
  t.mean = mean;
  t.projection.resize(static_cast<Eigen::Index>(output_dim), d);
  for (std::size_t k = 0; k < output_dim; ++k) {
    Vector v = solver.eigenvectors().col(d - 1 - static_cast<Eigen::Index>(k));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    t.projection.row(static_cast<Eigen::Index>(k)) = v.transpose();
  }
  return t;
}

// ---------------------------------------------------------------------------
// Whitening and length normalization

Whitener Whitener::identity(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return {Matrix::Identity(n, n), Vector::Zero(n)};
}

Vector Whitener::apply(const Vector& x) const {
  require<ShapeError>(x.size() == mean.size(), "whitener expects dimension ", mean.size(), ", got ", x.size());
  return transform * (x - mean);
}

void Whitener::save(Archive& archive, const std::string& prefix) const {
  archive.put(prefix + ".transform", RowMatrix(transform));
  archive.put(prefix + ".mean", mean);
}

Whitener Whitener::load(const Archive& archive, const std::string& prefix) {
  Whitener w;
  w.transform = archive.matrix(prefix + ".transform");
  w.mean = archive.vector(prefix + ".mean");
  require<IoError>(w.transform.cols() == w.mean.size(), "whitener archive is inconsistent");
  return w;
}

Whitener fit_whitener(const RowMatrix& data) {
  require(data.rows() >= 2, "whitener needs at least two rows");
  const Matrix cov = covariance_of(data);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const double floor = 1e-10 * std::max(cov.trace() / double(cov.rows()), 1e-300);
  Vector values = eig.eigenvalues();
  if (values.minCoeff() <= floor) {
    warn("whitener: covariance is singular; small eigenvalues floored");
    values = values.cwiseMax(floor);
  }
  Whitener w;
  w.mean = mean_of(data);
  w.transform = symmetrize(eig.eigenvectors() * values.cwiseSqrt().cwiseInverse().asDiagonal() *
                           eig.eigenvectors().transpose());
  return w;
}

Vector length_normalize(const Vector& x) {
  const double norm = x.norm();
  require<NumericError>(norm > 0.0 && std::isfinite(norm), "cannot length-normalize a zero vector");
  return x / norm;
}

Vector whiten_and_length_norm(const Vector& x, const Whitener& whitener) {
  return length_normalize(whitener.apply(x));
}

// ---------------------------------------------------------------------------
// PLDA

void PldaModel::save(Archive& archive, const std::string& prefix) const {
  archive.put(prefix + ".mean", mean);
  archive.put(prefix + ".between", RowMatrix(between));
  archive.put(prefix + ".within", RowMatrix(within));
}

PldaModel PldaModel::load(const Archive& archive, const std::string& prefix) {
  PldaModel m;
  m.mean = archive.vector(prefix + ".mean");
  m.between = archive.matrix(prefix + ".between");
  m.within = archive.matrix(prefix + ".within");
  const auto d = m.mean.size();
  require<IoError>(m.between.rows() == d && m.between.cols() == d && m.within.rows() == d &&
                       m.within.cols() == d,
                   "PLDA archive is inconsistent");
  return m;
}

double plda_log_likelihood(const PldaModel& model, const RowMatrix& data,
                           std::span<const std::size_t> labels) {
  require<ShapeError>(static_cast<std::size_t>(data.cols()) == model.dim(), "PLDA expects dimension ",
                      model.dim(), ", got ", data.cols());
  const auto speakers = speaker_sums(data, labels, nullptr);
  return log_likelihood_from_sums(model, speakers);
}

PldaTrainResult train_plda(const RowMatrix& data, std::span<const std::size_t> labels,
                           std::size_t iterations) {
  PldaTrainResult result;
  const auto speakers = speaker_sums(data, labels, &result.excluded_speakers);
  if (result.excluded_speakers > 0) {
    warn("PLDA: excluding ", result.excluded_speakers, " speakers with a single embedding");
  }
  require(speakers.size() >= 2, "PLDA needs at least two speakers with two or more embeddings, got ",
          speakers.size());
  const Eigen::Index d = data.cols();
  const double S = double(speakers.size());

  // Method-of-moments start.
  double N = 0.0;
  Matrix within = Matrix::Zero(d, d);
  Vector mean = Vector::Zero(d);
  for (const auto& s : speakers) {
    N += double(s.count);
    within += s.scatter;
    mean += s.sum / double(s.count);
  }
  mean /= S;
  within /= N - S;
  const double scale = within.trace() / double(d);
  require<NumericError>(scale > 0.0, "PLDA: within-class scatter is zero");
  within = floor_eigenvalues(within, 1e-6 * scale);
  Matrix mean_scatter = Matrix::Zero(d, d);
  double inv_count = 0.0;
  for (const auto& s : speakers) {
    const Vector diff = s.sum / double(s.count) - mean;
    mean_scatter += diff * diff.transpose();
    inv_count += 1.0 / double(s.count);
  }
  Matrix between = mean_scatter / S - within * (inv_count / S);
  between = floor_eigenvalues(between, 1e-8 * scale);

  PldaModel& model = result.model;
  model = {mean, between, within};
  for (std::size_t it = 0; it < iterations; ++it) {
    result.log_likelihood.push_back(log_likelihood_from_sums(model, speakers));
    const Matrix b_inv = inverse_spd(model.between, "PLDA between-class covariance");
    const Matrix w_inv = inverse_spd(model.within, "PLDA within-class covariance");
    const Vector b_inv_mu = b_inv * model.mean;
    std::vector<Vector> y_hat;
    std::vector<Matrix> y_cov;
    y_hat.reserve(speakers.size());
    y_cov.reserve(speakers.size());
    Vector new_mean = Vector::Zero(d);
    for (const auto& s : speakers) {
      const Matrix cov = inverse_spd(b_inv + double(s.count) * w_inv, "PLDA posterior precision");
      y_hat.push_back(cov * (b_inv_mu + w_inv * s.sum));
      y_cov.push_back(cov);
      new_mean += y_hat.back();
    }
    new_mean /= S;
    Matrix new_between = Matrix::Zero(d, d), new_within = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < speakers.size(); ++i) {
      const auto& s = speakers[i];
      const double n = double(s.count);
      const Vector diff = y_hat[i] - new_mean;
      new_between += y_cov[i] + diff * diff.transpose();
      // sum_j (x_j - y)(x_j - y)^T = scatter + n (xbar - y)(xbar - y)^T
      const Vector offset = s.sum / n - y_hat[i];
      new_within += s.scatter + n * (offset * offset.transpose() + y_cov[i]);
    }
    model.mean = new_mean;
    model.between = symmetrize(new_between / S);
    model.within = symmetrize(new_within / N);
  }
  result.log_likelihood.push_back(log_likelihood_from_sums(model, speakers));
  return result;
}

PldaModel adapt_plda(const PldaModel& model, const RowMatrix& unlabeled, double alpha,
                     double within_share) {
  require(alpha >= 0.0 && alpha <= 1.0, "PLDA adaptation alpha must be in [0, 1], got ", alpha);
  require(within_share >= 0.0 && within_share <= 1.0, "PLDA adaptation within share must be in [0, 1]");
  if (alpha == 0.0) return model;
  const Eigen::Index d = static_cast<Eigen::Index>(model.dim());
  require<ShapeError>(unlabeled.cols() == d, "PLDA adaptation data has dimension ", unlabeled.cols(),
                      ", model has ", d);
  require(unlabeled.rows() >= 2, "PLDA adaptation needs at least two embeddings");
  Matrix cov = covariance_of(unlabeled);
  if (unlabeled.rows() < d) {
    warn("PLDA adaptation: ", unlabeled.rows(), " embeddings for dimension ", d, "; adding a ridge");
    cov += 1e-6 * (cov.trace() / double(d)) * Matrix::Identity(d, d);
  }
  // Positive part taken where the model's total covariance is the identity,
  // so the update does not depend on the embedding basis.
  const Matrix total = model.between + model.within;
  Eigen::SelfAdjointEigenSolver<Matrix> total_eig(total);
  require<NumericError>(total_eig.eigenvalues().minCoeff() > 0.0, "PLDA total covariance is not positive definite");
  const Matrix root = total_eig.operatorSqrt();
  const Matrix inv_root = total_eig.operatorInverseSqrt();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(alpha * (inv_root * cov * inv_root - Matrix::Identity(d, d))));
  const Vector positive = eig.eigenvalues().cwiseMax(0.0);
  const Matrix excess =
      symmetrize(root * eig.eigenvectors() * positive.asDiagonal() * eig.eigenvectors().transpose() * root);
  PldaModel adapted = model;
  adapted.within = symmetrize(model.within + within_share * excess);
  adapted.between = symmetrize(model.between + (1.0 - within_share) * excess);
  return adapted;
}

PldaScorer::PldaScorer(const PldaModel& model) : mean_(model.mean) {
  const Matrix total = model.between + model.within;
  const Matrix total_inv = inverse_spd(total, "PLDA total covariance");
  const Matrix conditional = symmetrize(total - model.between * total_inv * model.between);
  const Matrix conditional_inv = inverse_spd(conditional, "PLDA conditional covariance");
  quad_ = symmetrize(total_inv - conditional_inv);
  cross_ = symmetrize(total_inv * model.between * conditional_inv);
  offset_ = 0.5 * log_det_spd(total, "PLDA total covariance") -
            0.5 * log_det_spd(conditional, "PLDA conditional covariance");
}

double PldaScorer::score(const Vector& enroll, const Vector& test) const {
  require<ShapeError>(enroll.size() == mean_.size() && test.size() == mean_.size(),
                      "PLDA scoring expects dimension ", mean_.size(), ", got ", enroll.size(), " and ",
                      test.size());
  const Vector a = enroll - mean_;
  const Vector b = test - mean_;
  return 0.5 * a.dot(quad_ * a) + 0.5 * b.dot(quad_ * b) + a.dot(cross_ * b) + offset_;
}

double score_plda(const PldaModel& model, const Vector& enroll, const Vector& test) {
  return PldaScorer(model).score(enroll, test);
}

// ---------------------------------------------------------------------------
// Full backend

Vector Backend::transform(const Vector& embedding) const {
  require<ShapeError>(embedding.size() == center.size(), "backend expects embeddings of dimension ",
                      center.size(), ", got ", embedding.size());
  return whiten_and_length_norm(lda.apply(Vector(embedding - center)), whitener);
}

void Backend::save(Archive& archive) const {
  archive.put("backend.center", center);
  lda.save(archive, "backend.lda");
  whitener.save(archive, "backend.whitener");
  plda.save(archive, "backend.plda");
}

Backend Backend::load(const Archive& archive) {
  Backend b;
  b.center = archive.vector("backend.center");
  b.lda = LdaTransform::load(archive, "backend.lda");
  b.whitener = Whitener::load(archive, "backend.whitener");
  b.plda = PldaModel::load(archive, "backend.plda");
  return b;
}

Backend fit_backend(const RowMatrix& train, std::span<const std::size_t> labels,
                    const RowMatrix& unlabeled, const BackendOptions& options) {
  require(unlabeled.rows() >= 2, "backend: need at least two unlabeled embeddings");
  require<ShapeError>(train.cols() == unlabeled.cols(), "backend: training and unlabeled embeddings differ in dimension");
  Backend b;
  b.center = mean_of(unlabeled);
  const RowMatrix train_c = train.rowwise() - b.center.transpose();
  const RowMatrix unlabeled_c = unlabeled.rowwise() - b.center.transpose();

  std::size_t classes = 0;
  for (const auto& [label, rows] : group_rows(train, labels)) classes += rows.size() >= 2 ? 1 : 0;
  require(classes >= 2, "backend: need at least two speakers with two or more embeddings");
  const std::size_t dim = std::min({options.lda_dim, classes - 1, static_cast<std::size_t>(train.cols())});
  b.lda = fit_lda(train_c, labels, dim);
  b.whitener = fit_whitener(b.lda.apply(unlabeled_c));

  auto process = [&](const RowMatrix& rows) {
    RowMatrix out(rows.rows(), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      out.row(i) = whiten_and_length_norm(b.lda.apply(Vector(rows.row(i).transpose())), b.whitener).transpose();
    }
    return out;
  };
  const RowMatrix train_p = process(train_c);
  b.plda = train_plda(train_p, labels, options.plda_iterations).model;
  b.plda = adapt_plda(b.plda, process(unlabeled_c), options.adapt_alpha, options.within_share);
  return b;
}

}  // namespace xvf
