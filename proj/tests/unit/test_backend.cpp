#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "xvf/archive.hpp"
#include "xvf/backend.hpp"
#include "xvf/error.hpp"
#include "xvf/rng.hpp"

using namespace xvf;

TEST_SUITE_BEGIN("backend");

namespace {

Matrix random_spd(Rng& rng, Eigen::Index d, double ridge) {
  Matrix a(d, d);
  for (auto i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  return a * a.transpose() / double(d) + ridge * Matrix::Identity(d, d);
}

Vector draw(Rng& rng, const Matrix& chol_l) {
  Vector z(chol_l.rows());
  for (auto& v : z) v = rng.normal();
  return chol_l * z;
}

struct PldaData {
  RowMatrix rows;
  std::vector<std::size_t> labels;
};

PldaData sample_plda(Rng& rng, const Vector& mu, const Matrix& B, const Matrix& W, std::size_t speakers,
                     std::size_t per_speaker) {
  const Matrix lb = Eigen::LLT<Matrix>(B).matrixL(), lw = Eigen::LLT<Matrix>(W).matrixL();
  PldaData d;
  d.rows.resize(static_cast<Eigen::Index>(speakers * per_speaker), mu.size());
  Eigen::Index r = 0;
  for (std::size_t s = 0; s < speakers; ++s) {
    const Vector y = mu + draw(rng, lb);
    for (std::size_t j = 0; j < per_speaker; ++j) {
      d.rows.row(r++) = (y + draw(rng, lw)).transpose();
      d.labels.push_back(s);
    }
  }
  return d;
}

double rel_frobenius(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

double log_gauss(const Vector& x, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (double(x.size()) * std::log(2.0 * std::numbers::pi) + logdet + x.dot(llt.solve(x)));
}

}  // namespace

TEST_CASE("lda on an axis-aligned two-class problem") {
  // Class means (+-3, 0); each class is mean + (+-1, 0), (0, +-1) so the
  // within-class scatter is exactly isotropic.
  RowMatrix data(8, 2);
  std::vector<std::size_t> labels;
  const double offs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (int c = 0; c < 2; ++c) {
    for (int j = 0; j < 4; ++j) {
      data.row(c * 4 + j) << (c == 0 ? -3.0 : 3.0) + offs[j][0], offs[j][1];
      labels.push_back(std::size_t(c));
    }
  }
  const LdaTransform t = fit_lda(data, labels, 1);
  CHECK(t.output_dim() == 1);
  CHECK(std::abs(t.projection(0, 1)) <= 1e-6 * std::abs(t.projection(0, 0)));
  CHECK(t.projection(0, 0) > 0.0);
  CHECK(t.mean.norm() <= 1e-12);
  // Projected within-class variance is 1 (ML normalization).
  const RowMatrix y = t.apply(data);
  double within = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double m = y.block(c * 4, 0, 4, 1).mean();
    for (int j = 0; j < 4; ++j) within += std::pow(y(c * 4 + j, 0) - m, 2);
  }
  CHECK(within / 8.0 == doctest::Approx(1.0).epsilon(1e-10));
  CHECK_THROWS(fit_lda(data, labels, 2));
}

TEST_CASE("lda orders directions by separability") {
  Rng rng(1);
  RowMatrix data(300, 3);
  std::vector<std::size_t> labels;
  for (int i = 0; i < 300; ++i) {
    const int c = i % 3;
    data.row(i) << 5.0 * c + rng.normal(), 0.5 * (c == 1) + rng.normal(), rng.normal();
    labels.push_back(std::size_t(c));
  }
  const LdaTransform t = fit_lda(data, labels, 2);
  CHECK(std::abs(t.projection(0, 0)) > 10.0 * std::abs(t.projection(0, 1)));
  CHECK(std::abs(t.projection(0, 0)) > 10.0 * std::abs(t.projection(0, 2)));
}

TEST_CASE("length normalization and whitening") {
  Vector x(3);
  x << 3, 4, 12;
  CHECK(length_normalize(x).norm() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(length_normalize(x)(0) == doctest::Approx(3.0 / 13.0).epsilon(1e-15));
  CHECK_THROWS_AS(length_normalize(Vector::Zero(3)), NumericError);

  Rng rng(2);
  const Matrix cov = random_spd(rng, 4, 0.1);
  const Matrix l = Eigen::LLT<Matrix>(cov).matrixL();
  RowMatrix data(500, 4);
  for (int i = 0; i < 500; ++i) data.row(i) = (draw(rng, l) + Vector::Constant(4, 2.0)).transpose();
  const Whitener w = fit_whitener(data);
  RowMatrix out(500, 4);
  for (int i = 0; i < 500; ++i) out.row(i) = w.apply(Vector(data.row(i).transpose())).transpose();
  const RowMatrix c = out.rowwise() - out.colwise().mean();
  const Matrix emp = c.transpose() * c / 500.0;
  CHECK((emp - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(out.colwise().mean().cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((w.transform - w.transform.transpose()).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(whiten_and_length_norm(Vector(data.row(0).transpose()), w).norm() == doctest::Approx(1.0));
  CHECK(Whitener::identity(3).apply(x) == x);
}

TEST_CASE("plda recovers generative covariances") {
  Rng rng(3);
  const Eigen::Index d = 3;
  const Matrix B = random_spd(rng, d, 0.5), W = random_spd(rng, d, 0.2);
  Vector mu(d);
  mu << 1, -2, 0.5;
  const auto data = sample_plda(rng, mu, B, W, 1000, 10);
  const auto r = train_plda(data.rows, data.labels, 50);
  CHECK(r.excluded_speakers == 0);
  CHECK(rel_frobenius(r.model.between, B) < 0.10);
  CHECK(rel_frobenius(r.model.within, W) < 0.10);
  CHECK((r.model.mean - mu).norm() < 0.15);
  REQUIRE(r.log_likelihood.size() == 51);
  for (std::size_t i = 1; i < r.log_likelihood.size(); ++i) {
    CHECK(r.log_likelihood[i] >= r.log_likelihood[i - 1] - 1e-8 * std::abs(r.log_likelihood[i - 1]));
  }
  CHECK(plda_log_likelihood(r.model, data.rows, data.labels) == doctest::Approx(r.log_likelihood.back()));
}

TEST_CASE("plda with no between-speaker variation") {
  Rng rng(4);
  const Matrix W = random_spd(rng, 2, 0.5);
  const auto data = sample_plda(rng, Vector::Zero(2), 1e-12 * Matrix::Identity(2, 2), W, 300, 8);
  const auto r = train_plda(data.rows, data.labels, 30);
  CHECK(r.model.between.trace() < 0.02 * r.model.within.trace());
  CHECK(rel_frobenius(r.model.within, W) < 0.1);
}

TEST_CASE("plda training drops singleton speakers and validates input") {
  Rng rng(5);
  auto data = sample_plda(rng, Vector::Zero(2), Matrix::Identity(2, 2), Matrix::Identity(2, 2), 5, 3);
  data.labels.back() = 99;
  const auto r = train_plda(data.rows, data.labels, 2);
  CHECK(r.excluded_speakers == 1);
  std::vector<std::size_t> one(data.labels.size(), 0);
  CHECK_THROWS(train_plda(data.rows, one, 2));
  CHECK_THROWS_AS(train_plda(data.rows, std::span(data.labels).first(3), 2), ShapeError);
}

TEST_CASE("plda scoring") {
  Rng rng(6);
  const Eigen::Index d = 2;
  PldaModel m{Vector::Zero(d), random_spd(rng, d, 0.3), random_spd(rng, d, 0.3)};
  m.mean << 0.3, -0.1;
  const PldaScorer scorer(m);
  for (int rep = 0; rep < 20; ++rep) {
    Vector a(d), b(d);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    CHECK(scorer.score(a, b) == doctest::Approx(scorer.score(b, a)).epsilon(1e-12));
    CHECK(score_plda(m, a, b) == scorer.score(a, b));
    const Vector ac = a - m.mean;
    CHECK(scorer.score(a, a) > scorer.score(a, Vector(m.mean - ac)));

    // Dense oracle: joint Gaussian of the pair under each hypothesis.
    const Matrix T = m.between + m.within;
    Matrix same(2 * d, 2 * d), diff = Matrix::Zero(2 * d, 2 * d);
    same << T, m.between, m.between, T;
    diff.topLeftCorner(d, d) = T;
    diff.bottomRightCorner(d, d) = T;
    Vector x(2 * d);
    x << a - m.mean, b - m.mean;
    const double oracle = log_gauss(x, same) - log_gauss(x, diff);
    CHECK(scorer.score(a, b) == doctest::Approx(oracle).epsilon(1e-9));
  }
  CHECK_THROWS_AS(scorer.score(Vector::Zero(3), Vector::Zero(2)), ShapeError);
}

TEST_CASE("plda adaptation") {
  Rng rng(7);
  const Eigen::Index d = 3;
  const PldaModel m{Vector::Zero(d), random_spd(rng, d, 0.2), random_spd(rng, d, 0.2)};
  RowMatrix unlabeled(400, d);
  for (auto i = 0; i < unlabeled.size(); ++i) unlabeled.data()[i] = 3.0 * rng.normal();

  SUBCASE("alpha 0 leaves the model unchanged") {
    const PldaModel a = adapt_plda(m, unlabeled, 0.0);
    CHECK(a.between == m.between);
    CHECK(a.within == m.within);
  }
  SUBCASE("full adaptation is a fixed point") {
    const PldaModel a = adapt_plda(m, unlabeled, 1.0);
    const PldaModel b = adapt_plda(a, unlabeled, 1.0);
    CHECK((b.between - a.between).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((b.within - a.within).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((a.between + a.within).trace() > (m.between + m.within).trace());
  }
  SUBCASE("data with smaller spread changes nothing") {
    const RowMatrix tiny = 1e-3 * unlabeled;
    const PldaModel a = adapt_plda(m, tiny, 1.0);
    CHECK((a.within - m.within).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((a.between - m.between).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("identity total: added trace is alpha times the positive eigenvalue mass") {
    const PldaModel unit{Vector::Zero(d), 0.4 * Matrix::Identity(d, d), 0.6 * Matrix::Identity(d, d)};
    const RowMatrix c = unlabeled.rowwise() - unlabeled.colwise().mean();
    const Matrix cov = c.transpose() * c / double(unlabeled.rows());
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(cov - Matrix::Identity(d, d)).eigenvalues();
    const double mass = ev.cwiseMax(0.0).sum();
    for (double alpha : {0.25, 0.5, 1.0}) {
      const PldaModel a = adapt_plda(unit, unlabeled, alpha, 0.75);
      CHECK((a.within - unit.within).trace() == doctest::Approx(0.75 * alpha * mass).epsilon(1e-10));
      CHECK((a.between - unit.between).trace() == doctest::Approx(0.25 * alpha * mass).epsilon(1e-10));
    }
  }
  CHECK_THROWS(adapt_plda(m, unlabeled, 1.5));
  CHECK_THROWS_AS(adapt_plda(m, RowMatrix::Zero(10, 2), 0.5), ShapeError);
}

TEST_CASE("full backend") {
  Rng rng(8);
  const Eigen::Index d = 6;
  const auto train = sample_plda(rng, Vector::Zero(d), random_spd(rng, d, 0.5), random_spd(rng, d, 0.2), 40, 6);
  RowMatrix unlabeled(100, d);
  for (auto i = 0; i < unlabeled.size(); ++i) unlabeled.data()[i] = rng.normal();
  BackendOptions o;
  o.lda_dim = 4;
  o.plda_iterations = 5;
  const Backend b = fit_backend(train.rows, train.labels, unlabeled, o);
  const Vector y = b.transform(Vector(train.rows.row(0).transpose()));
  CHECK(y.size() == 4);
  CHECK(y.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.plda.dim() == 4);
  o.lda_dim = 200;
  CHECK(fit_backend(train.rows, train.labels, unlabeled, o).plda.dim() == 6);

  Archive ar;
  b.save(ar);
  const Backend r = Backend::load(Archive::deserialize(ar.serialize()));
  CHECK(r.center == b.center);
  CHECK(r.lda.projection == b.lda.projection);
  CHECK(r.whitener.transform == b.whitener.transform);
  CHECK(r.plda.between == b.plda.between);
  CHECK(r.plda.within == b.plda.within);
  CHECK(r.transform(Vector(train.rows.row(3).transpose())) == b.transform(Vector(train.rows.row(3).transpose())));
}

TEST_SUITE_END();
