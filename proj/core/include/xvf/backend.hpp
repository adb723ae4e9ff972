#pragma once

// Embedding post-processing and two-covariance PLDA.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "xvf/archive.hpp"
#include "xvf/linalg.hpp"

namespace xvf {

/// y = projection * (x - mean).
struct LdaTransform {
  Matrix projection;  // d_out x d_in
  Vector mean;        // d_in

  std::size_t input_dim() const { return static_cast<std::size_t>(projection.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(projection.rows()); }
  Vector apply(const Vector& x) const;
  RowMatrix apply(const RowMatrix& rows) const;

  void save(Archive& archive, const std::string& prefix = "lda") const;
  static LdaTransform load(const Archive& archive, const std::string& prefix = "lda");
};

/// Rows of `data` are embeddings; labels[i] is the class of row i. Classes
/// with a single embedding are ignored. Output directions are scaled so the
/// projected within-class covariance is the identity and ordered by
/// decreasing between/within ratio.
LdaTransform fit_lda(const RowMatrix& data, std::span<const std::size_t> labels, std::size_t output_dim);

/// y = transform * (x - mean) with transform = Sigma^{-1/2}.
struct Whitener {
  Matrix transform;
  Vector mean;

  static Whitener identity(std::size_t dim);
  std::size_t dim() const { return static_cast<std::size_t>(transform.rows()); }
  Vector apply(const Vector& x) const;

  void save(Archive& archive, const std::string& prefix = "whitener") const;
  static Whitener load(const Archive& archive, const std::string& prefix = "whitener");
};

Whitener fit_whitener(const RowMatrix& data);

/// Scales to unit L2 norm. Throws NumericError for a zero vector.
Vector length_normalize(const Vector& x);
Vector whiten_and_length_norm(const Vector& x, const Whitener& whitener);

struct PldaModel {
  Vector mean;
  Matrix between;
  Matrix within;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  void save(Archive& archive, const std::string& prefix = "plda") const;
  static PldaModel load(const Archive& archive, const std::string& prefix = "plda");
};

struct PldaTrainResult {
  PldaModel model;
  /// Marginal log-likelihood of the training data before each update, then after the last.
  std::vector<double> log_likelihood;
  std::size_t excluded_speakers = 0;
};

/// Two-covariance PLDA by EM. Speakers with fewer than two rows are dropped with a warning.
PldaTrainResult train_plda(const RowMatrix& data, std::span<const std::size_t> labels,
                           std::size_t iterations);

/// Exact log p(data) under the model, speakers independent.
double plda_log_likelihood(const PldaModel& model, const RowMatrix& data,
                           std::span<const std::size_t> labels);

/// Moves the total covariance toward the covariance of `unlabeled`: the
/// positive part of alpha * (C - (B + W)) is added, `within_share` of it to W
/// and the rest to B.
PldaModel adapt_plda(const PldaModel& model, const RowMatrix& unlabeled, double alpha,
                     double within_share = 0.75);

/// Log-likelihood ratio, same speaker vs different speakers.
class PldaScorer {
 public:
  explicit PldaScorer(const PldaModel& model);
  double score(const Vector& enroll, const Vector& test) const;
  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }

 private:
  Vector mean_;
  Matrix quad_;   // applied to each side
  Matrix cross_;  // couples the two sides
  double offset_ = 0.0;
};

double score_plda(const PldaModel& model, const Vector& enroll, const Vector& test);

struct BackendOptions {
  std::size_t lda_dim = 200;
  std::size_t plda_iterations = 10;
  double adapt_alpha = 1.0;
  double within_share = 0.75;
};

/// Center on the unlabeled set, LDA, whiten (fit on unlabeled), length-normalize, PLDA, adapt.
struct Backend {
  Vector center;
  LdaTransform lda;
  Whitener whitener;
  PldaModel plda;

  Vector transform(const Vector& embedding) const;
  void save(Archive& archive) const;
  static Backend load(const Archive& archive);
};

Backend fit_backend(const RowMatrix& train, std::span<const std::size_t> labels,
                    const RowMatrix& unlabeled, const BackendOptions& options);

}  // namespace xvf
