#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "xvf/config.hpp"
#include "xvf/error.hpp"
#include "xvf/pipeline.hpp"

using namespace xvf;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("pipeline");

namespace {

constexpr const char* kTinyConfig = R"(
scale = desk
seed = 3
corpus.train_speakers = 4
corpus.utterances_per_train_speaker = 4
corpus.eval_speakers = 3
corpus.enroll_per_speaker = 1
corpus.test_per_speaker = 2
corpus.unlabeled_speakers = 2
corpus.utterances_per_unlabeled_speaker = 2
corpus.min_frames = 60
corpus.max_frames = 80
corpus.dim = 6
ubm.num_components = 4
ubm.iterations = 2
tv.rank = 4
tv.iterations = 1
model.frame_channels = 8,8,8,8,12
model.utterance_dims = 8,8
model.pooling.attention_hidden = 6
model.pooling.key_dim = 6
model.pooling.stats_hidden = 6
model.pooling.num_keys = 2
train.epochs = 2
train.chunk_frames = 40
backend.lda_dim = 3
)";

PipelineConfig tiny(const std::string& system, const fs::path& dir) {
  auto kv = KeyValueConfig::parse(kTinyConfig, "tiny.conf");
  kv.set("system", system);
  return PipelineConfig::from(kv, dir);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("config validation") {
  const auto dir = fs::temp_directory_path() / "xvf_pipe_cfg";
  const auto msg = error_of([&] { (void)tiny("BA+MS-7L", dir); });
  CHECK(msg.find("BA+MS-7L") != std::string::npos);
  const auto typo = error_of([&] {
    (void)PipelineConfig::from(KeyValueConfig::parse("system = BA\nbackend_lda = 3\n", "t.conf"));
  });
  CHECK(typo.find("backend_lda") != std::string::npos);
  const auto c = PipelineConfig::from(KeyValueConfig::parse("system = SA\nseed = 4\nthreads = 2\n"), dir, 9, 3);
  CHECK(c.seed == 9);
  CHECK(c.threads == 3);
  CHECK(c.workdir == dir);
  std::ostringstream sink;
  CHECK_THROWS_AS(run_stage("bogus", c, sink, sink), ConfigError);
}

TEST_CASE("planned stages follow the system") {
  const auto dir = fs::temp_directory_path() / "xvf_pipe_plan";
  using V = std::vector<std::string>;
  CHECK(planned_stages(tiny("baseline", dir)) ==
        V{"gen-corpus", "features", "train-embedder", "extract-xvec", "train-backend", "score", "evaluate"});
  CHECK(planned_stages(tiny("BA", dir)) == V{"gen-corpus", "features", "train-ubm", "bw-stats", "train-embedder",
                                              "extract-xvec", "train-backend", "score", "evaluate"});
  CHECK(planned_stages(tiny("IA", dir)) ==
        V{"gen-corpus", "features", "train-ubm", "bw-stats", "train-tv", "extract-ivec", "train-embedder",
          "extract-xvec", "train-backend", "score", "evaluate"});
  CHECK(planned_stages(tiny("i-vector", dir)) == V{"gen-corpus", "features", "train-ubm", "bw-stats", "train-tv",
                                                    "extract-ivec", "train-backend", "score", "evaluate"});
  CHECK(pipeline_stages().size() == 11);
}

TEST_CASE("missing upstream artifacts are named") {
  const auto dir = fs::temp_directory_path() / "xvf_pipe_missing";
  fs::remove_all(dir);
  std::ostringstream out, log;
  const auto msg = error_of([&] { run_stage("train-ubm", tiny("BA", dir), out, log); });
  CHECK(msg.find("manifest.txt") != std::string::npos);
  CHECK(msg.find("gen-corpus") != std::string::npos);
  run_stage("gen-corpus", tiny("BA", dir), out, log);
  const auto next = error_of([&] { run_stage("train-ubm", tiny("BA", dir), out, log); });
  CHECK(next.find("feats.ark") != std::string::npos);
  CHECK(next.find("'features'") != std::string::npos);
  CHECK(error_of([&] { run_stage("evaluate", tiny("BA", dir), out, log); }).find("scores.txt") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("tiny end-to-end runs are reproducible") {
  for (const char* system : {"i-vector", "BA", "IA"}) {
    INFO(system);
    const auto dir = fs::temp_directory_path() / (std::string("xvf_pipe_") + (system[0] == 'i' ? "ivec" : system));
    fs::remove_all(dir);
    const auto c = tiny(system, dir);
    std::ostringstream out, log;
    run_stage("run-all", c, out, log);
    CHECK(out.str().find("eer=") != std::string::npos);
    CHECK(slurp(dir / "metrics.txt") == out.str());
    const std::string scores = slurp(dir / "scores.txt");
    CHECK_FALSE(scores.empty());

    // Re-running a stage with the same inputs rewrites identical bytes.
    const std::string backend = slurp(dir / "backend.ark");
    run_stage("train-backend", c, out, log);
    CHECK(slurp(dir / "backend.ark") == backend);
    run_stage("score", c, out, log);
    CHECK(slurp(dir / "scores.txt") == scores);
    fs::remove_all(dir);
  }
}

TEST_SUITE_END();
