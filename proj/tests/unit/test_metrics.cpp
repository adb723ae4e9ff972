#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "xvf/error.hpp"
#include "xvf/metrics.hpp"

using namespace xvf;
using testing::oracle_eer;
using testing::oracle_mindcf;

TEST_SUITE_BEGIN("metrics");

namespace {

std::vector<double> normals(Rng& rng, std::size_t n, double mean, bool quantize) {
  std::vector<double> v(n);
  for (auto& x : v) {
    x = mean + rng.normal();
    if (quantize) x = std::round(4.0 * x) / 4.0;  // forces ties
  }
  return v;
}

}  // namespace

TEST_CASE("eer worked examples") {
  const std::vector<double> tgt{2, 0}, non{3, 1};
  CHECK(compute_eer(tgt, non) == 0.5);
  CHECK(compute_eer(std::vector<double>{5, 6, 7}, std::vector<double>{1, 2}) == 0.0);
  CHECK(compute_eer(std::vector<double>{1, 2}, std::vector<double>{5, 6, 7}) == 1.0);
  CHECK(compute_eer(std::vector<double>{1, 1}, std::vector<double>{1, 1}) == doctest::Approx(0.5));
  CHECK_THROWS(compute_eer(std::vector<double>{}, non));
  CHECK_THROWS(compute_eer(tgt, std::vector<double>{}));
}

TEST_CASE("roc curve vertices") {
  const auto roc = roc_curve(std::vector<double>{2, 0}, std::vector<double>{3, 1});
  REQUIRE(roc.size() == 5);
  CHECK(roc.front().threshold == 0.0);
  CHECK(roc.front().p_miss == 0.0);
  CHECK(roc.front().p_fa == 1.0);
  CHECK(std::isinf(roc.back().threshold));
  CHECK(roc.back().p_miss == 1.0);
  CHECK(roc.back().p_fa == 0.0);
  for (std::size_t i = 1; i < roc.size(); ++i) {
    CHECK(roc[i].threshold > roc[i - 1].threshold);
    CHECK(roc[i].p_miss >= roc[i - 1].p_miss);
    CHECK(roc[i].p_fa <= roc[i - 1].p_fa);
  }
}

TEST_CASE("eer and mindcf match an exhaustive threshold sweep") {
  Rng rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    const bool ties = rep % 2 == 1;
    const auto tgt = normals(rng, 1 + rng.index(60), 1.0 + rng.uniform(), ties);
    const auto non = normals(rng, 1 + rng.index(200), 0.0, ties);
    CHECK(compute_eer(tgt, non) == doctest::Approx(oracle_eer(tgt, non)).epsilon(1e-12));
    for (double p : {0.01, 0.005, 0.5, 0.9}) {
      const double dcf = compute_mindcf(tgt, non, p);
      CHECK(dcf == doctest::Approx(oracle_mindcf(tgt, non, p)).epsilon(1e-12));
      CHECK(dcf <= 1.0 + 1e-12);
      CHECK(dcf >= 0.0);
    }
    DcfOptions o;
    CHECK(compute_mindcf(tgt, non, o) ==
          doctest::Approx(0.5 * (oracle_mindcf(tgt, non, 0.01) + oracle_mindcf(tgt, non, 0.005))).epsilon(1e-12));
  }
}

TEST_CASE("metrics are invariant to increasing transforms") {
  Rng rng(2);
  const auto tgt = normals(rng, 50, 1.5, false), non = normals(rng, 300, 0.0, false);
  auto map = [](std::vector<double> v) {
    for (auto& x : v) x = std::exp(0.7 * x) + 3.0;
    return v;
  };
  CHECK(compute_eer(map(tgt), map(non)) == doctest::Approx(compute_eer(tgt, non)).epsilon(1e-12));
  CHECK(compute_mindcf(map(tgt), map(non), 0.01) == doctest::Approx(compute_mindcf(tgt, non, 0.01)).epsilon(1e-12));
}

TEST_CASE("perfect separation gives zero cost") {
  const std::vector<double> tgt{3, 4, 5}, non{-1, 0, 1, 2};
  CHECK(compute_eer(tgt, non) == 0.0);
  CHECK(compute_mindcf(tgt, non, 0.01) == 0.0);
}

TEST_CASE("trial and score files") {
  const auto dir = std::filesystem::temp_directory_path() / "xvf_test_metrics";
  std::filesystem::create_directories(dir);
  const TrialSet trials{{"a", "b", TrialLabel::kTarget}, {"a", "c", TrialLabel::kNontarget},
                        {"d", "b", TrialLabel::kNontarget}, {"d", "e", TrialLabel::kTarget}};
  write_trials(dir / "trials", trials);
  const TrialSet back = read_trials(dir / "trials");
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[i].enroll == trials[i].enroll);
    CHECK(back[i].test == trials[i].test);
    CHECK(back[i].label == trials[i].label);
  }

  ScoreSet s{trials, {2.5, -1.0, 0.25, 1.123456789}};
  write_scores(dir / "scores", s);
  const ScoreSet rs = read_scores(dir / "scores", trials);
  CHECK(rs.scores[3] == 1.123457);
  CHECK(rs.target_scores() == std::vector<double>{2.5, 1.123457});
  CHECK(rs.nontarget_scores() == std::vector<double>{-1.0, 0.25});
  const MetricsReport rep = evaluate_scores(rs);
  CHECK(rep.eer == 0.0);
  CHECK(rep.num_target == 2);
  CHECK(rep.num_nontarget == 2);
  CHECK(rep.to_text().find("eer=0.000000") != std::string::npos);

  {
    std::ofstream out(dir / "unlabeled");
    out << "x y\n";
  }
  CHECK(read_trials(dir / "unlabeled").front().label == TrialLabel::kUnknown);
  TrialSet swapped = trials;
  std::swap(swapped[0], swapped[1]);
  CHECK_THROWS(read_scores(dir / "scores", swapped));
  CHECK_THROWS_AS(read_trials(dir / "missing"), IoError);
  CHECK_THROWS(parse_trial_label("maybe"));
  std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
