#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "doctest.h"
#include "xvf/corpus.hpp"
#include "xvf/error.hpp"

using namespace xvf;

TEST_SUITE_BEGIN("corpus");

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Vector frame_mean(const FeatureMatrix& f) { return f.frames.colwise().mean().transpose(); }

CorpusOptions small_options() {
  CorpusOptions o;
  o.train_speakers = 4;
  o.utterances_per_train_speaker = 3;
  o.eval_speakers = 3;
  o.enroll_per_speaker = 2;
  o.test_per_speaker = 3;
  o.unlabeled_speakers = 2;
  o.utterances_per_unlabeled_speaker = 2;
  o.min_frames = 50;
  o.max_frames = 80;
  o.dim = 5;
  o.seed = 11;
  return o;
}

}  // namespace

TEST_CASE("generation is deterministic and seed dependent") {
  const Corpus a = generate_corpus(small_options()), b = generate_corpus(small_options());
  REQUIRE(a.features.size() == b.features.size());
  for (std::size_t i = 0; i < a.features.size(); ++i) CHECK(a.features[i].frames == b.features[i].frames);

  const auto dir = std::filesystem::temp_directory_path() / "xvf_test_corpus";
  std::filesystem::create_directories(dir);
  std::vector<std::string> ids;
  for (const auto& u : a.manifest.utterances) ids.push_back(u.id);
  write_feature_archive(dir / "a.ark", ids, a.features);
  write_feature_archive(dir / "b.ark", ids, b.features);
  CHECK(slurp(dir / "a.ark") == slurp(dir / "b.ark"));
  const FeatureArchive back = read_feature_archive(dir / "a.ark");
  CHECK(back.ids == ids);
  CHECK(back.at(ids[3]).frames == a.features[3].frames);
  CHECK_THROWS(back.at("nope"));

  a.manifest.save(dir / "manifest.txt");
  const CorpusManifest m = CorpusManifest::load(dir / "manifest.txt");
  CHECK(m.seed == 11);
  REQUIRE(m.utterances.size() == a.manifest.utterances.size());
  for (std::size_t i = 0; i < m.utterances.size(); ++i) {
    CHECK(m.utterances[i].id == a.manifest.utterances[i].id);
    CHECK(m.utterances[i].speaker == a.manifest.utterances[i].speaker);
    CHECK(m.utterances[i].frames == a.manifest.utterances[i].frames);
    CHECK(m.utterances[i].split == a.manifest.utterances[i].split);
  }
  std::filesystem::remove_all(dir);

  auto o = small_options();
  o.seed = 12;
  CHECK(generate_corpus(o).features[0].frames != a.features[0].frames);
}

TEST_CASE("manifest structure") {
  const Corpus c = generate_corpus(small_options());
  std::set<std::string> ids;
  for (std::size_t i = 0; i < c.manifest.utterances.size(); ++i) {
    const auto& u = c.manifest.utterances[i];
    CHECK(ids.insert(u.id).second);
    CHECK(u.frames == c.features[i].num_frames());
    CHECK(u.frames >= 50);
    CHECK(u.frames <= 80);
    CHECK(c.features[i].dim() == 5);
  }
  CHECK(c.manifest.in_split(Split::kTrain).size() == 12);
  CHECK(c.manifest.in_split(Split::kEnroll).size() == 6);
  CHECK(c.manifest.in_split(Split::kTest).size() == 9);
  CHECK(c.manifest.in_split(Split::kUnlabeled).size() == 4);
  std::set<std::string> train_spk, eval_spk;
  for (const auto* u : c.manifest.in_split(Split::kTrain)) train_spk.insert(u->speaker);
  for (const auto* u : c.manifest.in_split(Split::kTest)) eval_spk.insert(u->speaker);
  for (const auto& s : eval_spk) CHECK(train_spk.count(s) == 0);
  for (Split s : {Split::kTrain, Split::kEnroll, Split::kTest, Split::kUnlabeled}) CHECK(parse_split(split_name(s)) == s);
}

TEST_CASE("without session variability utterance means agree within sampling error") {
  CorpusOptions o = small_options();
  o.train_speakers = 3;
  o.utterances_per_train_speaker = 2;
  o.eval_speakers = 0;
  o.unlabeled_speakers = 0;
  o.num_components = 1;
  o.session_scale = 0.0;
  o.min_frames = o.max_frames = 4000;
  const Corpus c = generate_corpus(o);
  const double T = 4000.0;
  for (std::size_t s = 0; s < 3; ++s) {
    const Vector a = frame_mean(c.features[2 * s]), b = frame_mean(c.features[2 * s + 1]);
    // Difference of two means of T iid frames: sd sigma * sqrt(2 / T), sigma <= noise_max.
    for (Eigen::Index k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= 3.0 * o.noise_max * std::sqrt(2.0 / T));
  }
}

TEST_CASE("speakers are farther apart than sessions") {
  // Short utterances are dominated by which mixture components get visited, so use long ones.
  const Corpus c = generate_corpus(100, 2, 1000, 5);
  REQUIRE(c.features.size() == 200);
  double intra = 0.0, inter = 0.0;
  std::size_t n_inter = 0;
  for (std::size_t s = 0; s < 100; ++s) {
    intra += (frame_mean(c.features[2 * s]) - frame_mean(c.features[2 * s + 1])).norm();
    for (std::size_t t = s + 1; t < 100; ++t, ++n_inter)
      inter += (frame_mean(c.features[2 * s]) - frame_mean(c.features[2 * t])).norm();
  }
  intra /= 100.0;
  inter /= double(n_inter);
  CHECK(inter > 1.2 * intra);
  CHECK_THROWS(generate_corpus(1, 2, 200, 5));
  CHECK_THROWS(generate_corpus(3, 0, 200, 5));
  CHECK_THROWS(generate_corpus(3, 2, 0, 5));
}

TEST_CASE("trial generation") {
  const Corpus c = generate_corpus(small_options());
  const auto& m = c.manifest;
  // 6 enroll x 9 test pairs: each enroll utterance has 3 target tests.
  const TrialSet t = generate_trials(m, 10, 20, 3);
  CHECK(t.size() == 30);
  std::map<std::string, std::string> spk;
  for (const auto& u : m.utterances) spk[u.id] = u.speaker;
  std::size_t targets = 0;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& tr : t) {
    CHECK(tr.enroll != tr.test);
    CHECK(seen.insert({tr.enroll, tr.test}).second);
    CHECK((tr.label == TrialLabel::kTarget) == (spk.at(tr.enroll) == spk.at(tr.test)));
    targets += tr.label == TrialLabel::kTarget;
  }
  CHECK(targets == 10);
  const TrialSet again = generate_trials(m, 10, 20, 3);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK((again[i].enroll == t[i].enroll && again[i].test == t[i].test));

  const TrialSet only = generate_trials(m, 18, 0, 4);
  CHECK(only.size() == 18);
  for (const auto& tr : only) CHECK(tr.label == TrialLabel::kTarget);
  CHECK_THROWS(generate_trials(m, 19, 0, 4));
  CHECK_THROWS(generate_trials(m, 0, 37, 4));
}

TEST_SUITE_END();
