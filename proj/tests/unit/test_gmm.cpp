#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "xvf/error.hpp"
#include "xvf/gmm.hpp"
#include "xvf/ivector.hpp"

using namespace xvf;
using testing::naive_bw_stats;
using testing::naive_posteriors;
using testing::random_gmm;

TEST_SUITE_BEGIN("gmm");

namespace {

FeatureMatrix random_feats(Rng& rng, std::size_t T, std::size_t d, double sd = 1.5) {
  FeatureMatrix f;
  f.frames.resize(T, d);
  for (auto i = 0; i < f.frames.size(); ++i) f.frames.data()[i] = rng.normal(0.0, sd);
  return f;
}

std::vector<FeatureMatrix> clustered(Rng& rng, std::size_t utts, std::size_t T, std::size_t d, std::size_t clusters) {
  RowMatrix centres(clusters, d);
  for (auto i = 0; i < centres.size(); ++i) centres.data()[i] = rng.normal(0.0, 3.0);
  std::vector<FeatureMatrix> out;
  for (std::size_t u = 0; u < utts; ++u) {
    FeatureMatrix f;
    f.frames.resize(T, d);
    for (std::size_t t = 0; t < T; ++t) {
      const auto c = rng.index(clusters);
      for (std::size_t k = 0; k < d; ++k) f.frames(t, k) = centres(c, k) + rng.normal(0.0, 0.7 + 0.1 * k);
    }
    out.push_back(std::move(f));
  }
  return out;
}

bool non_decreasing(const std::vector<double>& v, double slack) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[i - 1] - slack) return false;
  return true;
}

}  // namespace

TEST_CASE("DiagGmm validation") {
  CHECK_THROWS(DiagGmm(Vector::Constant(2, 0.4), RowMatrix::Zero(2, 3), RowMatrix::Ones(2, 3)));
  CHECK_THROWS(DiagGmm(Vector::Constant(2, 0.5), RowMatrix::Zero(2, 3), RowMatrix::Zero(2, 3)));
  CHECK_THROWS_AS(DiagGmm(Vector::Constant(2, 0.5), RowMatrix::Zero(3, 3), RowMatrix::Ones(2, 3)), ShapeError);
}

TEST_CASE("posteriors") {
  Rng rng(1);
  SUBCASE("single component") {
    const DiagGmm g = random_gmm(rng, 1, 3);
    const std::vector<double> x{0.3, -1.0, 2.0};
    CHECK(posteriors(g, x)[0] == 1.0);
  }
  SUBCASE("identical components split evenly") {
    const RowMatrix mu = RowMatrix::Constant(2, 2, 0.5);
    const DiagGmm g(Vector::Constant(2, 0.5), mu, RowMatrix::Ones(2, 2));
    const std::vector<double> x{1.0, -3.0};
    const Vector p = posteriors(g, x);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
  }
  SUBCASE("matches direct Bayes in extended precision") {
    for (int rep = 0; rep < 20; ++rep) {
      const DiagGmm g = random_gmm(rng, 3, 4);
      std::vector<double> x(4);
      for (auto& v : x) v = rng.normal(0.0, 2.0);
      const Vector p = posteriors(g, x);
      const auto ref = naive_posteriors(g, x.data());
      CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
      for (int m = 0; m < 3; ++m) {
        CHECK(p[m] >= 0.0);
        CHECK(std::abs(p[m] - double(ref[m])) <= 1e-13);
      }
    }
  }
  const DiagGmm g = random_gmm(rng, 2, 3);
  const std::vector<double> bad{1.0, 2.0};
  CHECK_THROWS_AS(posteriors(g, bad), ShapeError);
}

TEST_CASE("Baum-Welch statistics") {
  Rng rng(2);
  SUBCASE("random cases match the naive double loop") {
    for (int rep = 0; rep < 30; ++rep) {
      const std::size_t M = 1 + rng.index(8), d = 1 + rng.index(5), T = 1 + rng.index(20);
      const DiagGmm g = random_gmm(rng, M, d);
      const FeatureMatrix f = random_feats(rng, T, d);
      const BwStats s = accumulate_bw_stats(g, f);
      const auto ref = naive_bw_stats(g, f.frames);
      CHECK(s.frame_count == T);
      CHECK(std::abs(s.occupancy.sum() - double(T)) <= 1e-8);
      for (std::size_t m = 0; m < M; ++m) {
        CHECK(std::abs(s.occupancy[m] - double(ref.occupancy[m])) <= 1e-12);
        for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(s.first_order(m, k) - double(ref.first[m][k])) <= 1e-12);
      }
    }
  }
  SUBCASE("single component gives the frame mean") {
    const DiagGmm g = random_gmm(rng, 1, 3);
    const FeatureMatrix f = random_feats(rng, 17, 3);
    const BwStats s = accumulate_bw_stats(g, f);
    for (int k = 0; k < 3; ++k) CHECK(s.first_order(0, k) == doctest::Approx(f.frames.col(k).mean()).epsilon(1e-14));
  }
  SUBCASE("a component without posterior mass has zero statistics") {
    RowMatrix mu(2, 2);
    mu << 0.0, 0.0, 1e3, 1e3;
    const DiagGmm g(Vector::Constant(2, 0.5), mu, RowMatrix::Ones(2, 2));
    const BwStats s = accumulate_bw_stats(g, random_feats(rng, 10, 2, 1.0));
    CHECK(s.first_order.row(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.occupancy[1] == 0.0);
  }
  SUBCASE("linear in frames and order-free") {
    const DiagGmm g = random_gmm(rng, 4, 3);
    const FeatureMatrix a = random_feats(rng, 11, 3), b = random_feats(rng, 7, 3);
    FeatureMatrix ab;
    ab.frames.resize(18, 3);
    ab.frames << a.frames, b.frames;
    const BwStats sa = accumulate_bw_stats(g, a), sb = accumulate_bw_stats(g, b), sab = accumulate_bw_stats(g, ab);
    const RowMatrix combined = (11.0 * sa.first_order + 7.0 * sb.first_order) / 18.0;
    CHECK((sab.first_order - combined).cwiseAbs().maxCoeff() <= 1e-12);

    FeatureMatrix rev = ab;
    rev.frames = ab.frames.colwise().reverse();
    const BwStats sr = accumulate_bw_stats(g, rev);
    CHECK((sr.first_order - sab.first_order).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((sr.occupancy - sab.occupancy).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("occupancy normalization divides by the soft count") {
    const DiagGmm g = random_gmm(rng, 3, 2);
    const FeatureMatrix f = random_feats(rng, 25, 2);
    const BwStats t = accumulate_bw_stats(g, f);
    const BwStats o = accumulate_bw_stats(g, f, StatsNormalization::kOccupancy);
    for (int m = 0; m < 3; ++m)
      for (int k = 0; k < 2; ++k)
        CHECK(o.first_order(m, k) == doctest::Approx(t.first_order(m, k) * 25.0 / t.occupancy[m]).epsilon(1e-12));
    CHECK((o.raw_first_order() - t.raw_first_order()).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const DiagGmm g = random_gmm(rng, 2, 3);
  CHECK_THROWS(accumulate_bw_stats(g, random_feats(rng, 0, 3)));
  CHECK_THROWS_AS(accumulate_bw_stats(g, random_feats(rng, 4, 2)), ShapeError);
}

TEST_CASE("UBM training") {
  Rng rng(3);
  SUBCASE("one component is the sample mean and variance") {
    std::vector<FeatureMatrix> data{random_feats(rng, 200, 3), random_feats(rng, 150, 3)};
    UbmTrainOptions o;
    o.num_components = 1;
    o.iterations = 3;
    const DiagGmm g = train_ubm(data, o).gmm;
    RowMatrix all(350, 3);
    all << data[0].frames, data[1].frames;
    const Eigen::RowVectorXd mean = all.colwise().mean();
    const Eigen::RowVectorXd var = (all.rowwise() - mean).array().square().colwise().mean();
    CHECK((g.means().row(0) - mean).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((g.variances().row(0) - var).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("two separated clusters get one component each") {
    std::vector<FeatureMatrix> data;
    RowMatrix m(400, 2);
    for (int t = 0; t < 400; ++t) {
      const double c = t < 200 ? -6.0 : 6.0;
      m(t, 0) = c + rng.normal(0.0, 0.5);
      m(t, 1) = rng.normal(0.0, 0.5);
    }
    FeatureMatrix f;
    f.frames = m;
    data.push_back(f);
    UbmTrainOptions o;
    o.num_components = 2;
    o.iterations = 10;
    const DiagGmm g = train_ubm(data, o).gmm;
    const std::size_t left = g.means()(0, 0) < 0 ? 0 : 1;
    for (int t = 0; t < 400; ++t) {
      const std::vector<double> x{m(t, 0), m(t, 1)};
      CHECK(posteriors(g, x)[t < 200 ? left : 1 - left] >= 0.99);
    }
  }
  SUBCASE("log-likelihood never decreases and variances respect the floor") {
    const auto data = clustered(rng, 10, 80, 3, 5);
    UbmTrainOptions o;
    o.num_components = 8;
    o.iterations = 20;
    const auto r = train_ubm(data, o);
    CHECK(r.log_likelihood.size() == 21);
    CHECK(non_decreasing(r.log_likelihood, 1e-8));
    CHECK(std::abs(r.gmm.weights().sum() - 1.0) <= 1e-10);
  }
  SUBCASE("deterministic and thread-count independent") {
    const auto data = clustered(rng, 6, 60, 3, 4);
    UbmTrainOptions o;
    o.num_components = 4;
    o.iterations = 5;
    o.seed = 9;
    const auto a = train_ubm(data, o);
    o.threads = 3;
    const auto b = train_ubm(data, o);
    CHECK(a.gmm.fingerprint() == b.gmm.fingerprint());
    CHECK(a.log_likelihood == b.log_likelihood);
  }
  SUBCASE("errors") {
    std::vector<FeatureMatrix> tiny{random_feats(rng, 3, 2)};
    UbmTrainOptions o;
    o.num_components = 4;
    CHECK_THROWS(train_ubm(tiny, o));
  }
}

TEST_CASE("total variability and i-vectors") {
  Rng rng(4);
  const auto data = clustered(rng, 30, 60, 2, 3);
  UbmTrainOptions uo;
  uo.num_components = 3;
  uo.iterations = 8;
  const DiagGmm ubm = train_ubm(data, uo).gmm;
  std::vector<BwStats> stats;
  for (const auto& f : data) stats.push_back(accumulate_bw_stats(ubm, f));

  SUBCASE("zero iterations return the initialization") {
    const TvModel init = init_total_variability(ubm, 2, 0.1, 5);
    const auto r = train_total_variability(ubm, stats, init, 0);
    CHECK(r.model.loading == init.loading);
  }
  SUBCASE("objective never decreases over 20 iterations") {
    TvTrainOptions o;
    o.rank = 3;
    o.iterations = 20;
    o.seed = 2;
    const auto r = train_total_variability(ubm, stats, o);
    CHECK(r.objective.size() == 21);
    CHECK(non_decreasing(r.objective, 1e-8));
    CHECK(r.model.loading.allFinite());
  }
  SUBCASE("tiny case matches the closed-form posterior mean") {
    RowMatrix mu(2, 2), var(2, 2);
    mu << 0.0, 1.0, -1.0, 2.0;
    var << 1.0, 2.0, 0.5, 1.5;
    const DiagGmm g(Vector::Constant(2, 0.5), mu, var);
    TvModel tv = init_total_variability(g, 1, 0.5, 3);
    const FeatureMatrix f = random_feats(rng, 9, 2);
    const BwStats s = accumulate_bw_stats(g, f);
    // w = (I + T' S^-1 N T)^-1 T' S^-1 (F - N mu), dense over the supervector.
    Matrix Sinv = Matrix::Zero(4, 4), N = Matrix::Zero(4, 4);
    Vector centred(4);
    const RowMatrix raw = s.raw_first_order();
    for (int m = 0; m < 2; ++m) {
      for (int k = 0; k < 2; ++k) {
        Sinv(2 * m + k, 2 * m + k) = 1.0 / var(m, k);
        N(2 * m + k, 2 * m + k) = s.occupancy[m];
        centred[2 * m + k] = raw(m, k) - s.occupancy[m] * mu(m, k);
      }
    }
    const Matrix T = tv.loading;
    const Matrix L = Matrix::Identity(1, 1) + T.transpose() * Sinv * N * T;
    const Vector ref = L.ldlt().solve(T.transpose() * Sinv * centred);
    const Vector w = extract_ivector(tv, g, s);
    CHECK(w.size() == 1);
    CHECK(w[0] == doctest::Approx(ref[0]).epsilon(1e-12));
  }
  SUBCASE("rank-3 i-vector matches a dense solve; extractor agrees") {
    TvTrainOptions o;
    o.rank = 3;
    o.iterations = 2;
    const TvModel tv = train_total_variability(ubm, stats, o).model;
    const std::size_t M = 3, d = 2, R = 3;
    Matrix Sinv = Matrix::Zero(M * d, M * d), N = Matrix::Zero(M * d, M * d);
    Vector centred(M * d);
    const BwStats& s = stats[0];
    const RowMatrix raw = s.raw_first_order();
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t k = 0; k < d; ++k) {
        Sinv(m * d + k, m * d + k) = 1.0 / ubm.variances()(m, k);
        N(m * d + k, m * d + k) = s.occupancy[m];
        centred[m * d + k] = raw(m, k) - s.occupancy[m] * ubm.means()(m, k);
      }
    }
    const Matrix T = tv.loading;
    const Matrix L = Matrix::Identity(R, R) + T.transpose() * Sinv * N * T;
    const Vector ref = L.fullPivLu().solve(T.transpose() * Sinv * centred);
    const Vector w = extract_ivector(tv, ubm, s);
    CHECK((w - ref).cwiseAbs().maxCoeff() <= 1e-10);
    const IvectorExtractor ex(tv, ubm);
    CHECK((ex.extract(s) - w).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("statistics matching the UBM means give a zero i-vector") {
    BwStats s = stats[0];
    // first order whose raw sums equal N_m * mu_m
    for (std::size_t m = 0; m < 3; ++m) s.first_order.row(m) = ubm.means().row(m) * (s.occupancy[m] / double(s.frame_count));
    const TvModel tv = init_total_variability(ubm, 2, 0.3, 1);
    CHECK(extract_ivector(tv, ubm, s).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("errors") {
    CHECK_THROWS(init_total_variability(ubm, 7, 0.1, 0));
    CHECK_THROWS(init_total_variability(ubm, 0, 0.1, 0));
    const DiagGmm other = random_gmm(rng, 3, 2);
    const TvModel tv = init_total_variability(other, 2, 0.1, 0);
    CHECK_THROWS(extract_ivector(tv, ubm, stats[0]));
  }
}

TEST_SUITE_END();
