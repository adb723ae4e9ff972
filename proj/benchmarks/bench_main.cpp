#include <benchmark/benchmark.h>

#include "xvf/backend.hpp"
#include "xvf/embedder.hpp"
#include "xvf/features.hpp"
#include "xvf/gmm.hpp"
#include "xvf/ops.hpp"
#include "xvf/rng.hpp"

namespace {

void BM_Conv1dFull(benchmark::State& state) {
  xvf::Rng rng(1);
  const auto channels = static_cast<std::size_t>(state.range(0));
  const xvf::Var input = xvf::Var::constant(xvf::Tensor::randn({4, 200, channels}, rng));
  const xvf::Var kernel = xvf::Var::leaf(xvf::Tensor::randn({3, channels, channels}, rng, 0.1));
  const xvf::Var bias = xvf::Var::leaf(xvf::Tensor({channels}, 0.0));
  for (auto _ : state) {
    const xvf::Var out = xvf::conv1d(input, kernel, bias, 2, xvf::ConvMode::kFull);
    benchmark::DoNotOptimize(out.value().ptr());
  }
  state.SetItemsProcessed(state.iterations() * 4 * 200);
}
BENCHMARK(BM_Conv1dFull)->Arg(64)->Arg(256);

void BM_Conv1dBackward(benchmark::State& state) {
  xvf::Rng rng(2);
  const xvf::Var input = xvf::Var::leaf(xvf::Tensor::randn({4, 200, 64}, rng));
  const xvf::Var kernel = xvf::Var::leaf(xvf::Tensor::randn({3, 64, 64}, rng, 0.1));
  for (auto _ : state) {
    const xvf::Var loss = xvf::sum(xvf::conv1d(input, kernel, xvf::Var(), 2, xvf::ConvMode::kFull));
    xvf::backward(loss);
  }
}
BENCHMARK(BM_Conv1dBackward);

void BM_Posteriors(benchmark::State& state) {
  xvf::Rng rng(3);
  const auto m = static_cast<Eigen::Index>(state.range(0));
  xvf::RowMatrix means(m, 23), vars(m, 23);
  for (Eigen::Index i = 0; i < means.size(); ++i) {
    means.data()[i] = rng.normal();
    vars.data()[i] = 0.5 + rng.uniform();
  }
  const xvf::DiagGmm gmm(xvf::Vector::Constant(m, 1.0 / double(m)), means, vars);
  std::vector<double> frame(23);
  for (auto& x : frame) x = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(xvf::posteriors(gmm, frame));
}
BENCHMARK(BM_Posteriors)->Arg(64)->Arg(512);

void BM_BwStats(benchmark::State& state) {
  xvf::Rng rng(4);
  xvf::RowMatrix means(64, 23), vars(64, 23);
  for (Eigen::Index i = 0; i < means.size(); ++i) {
    means.data()[i] = rng.normal();
    vars.data()[i] = 0.5 + rng.uniform();
  }
  const xvf::DiagGmm gmm(xvf::Vector::Constant(64, 1.0 / 64.0), means, vars);
  xvf::FeatureMatrix feats;
  feats.frames.resize(300, 23);
  for (Eigen::Index i = 0; i < feats.frames.size(); ++i) feats.frames.data()[i] = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(xvf::accumulate_bw_stats(gmm, feats));
}
BENCHMARK(BM_BwStats);

void BM_PldaScore(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  xvf::PldaModel model{xvf::Vector::Zero(d), xvf::Matrix::Identity(d, d) * 2.0, xvf::Matrix::Identity(d, d)};
  const xvf::PldaScorer scorer(model);
  const xvf::Vector a = xvf::Vector::LinSpaced(d, -1.0, 1.0);
  const xvf::Vector b = xvf::Vector::LinSpaced(d, 1.0, -0.5);
  for (auto _ : state) benchmark::DoNotOptimize(scorer.score(a, b));
}
BENCHMARK(BM_PldaScore)->Arg(64)->Arg(200);

void BM_DeskEmbedding(benchmark::State& state) {
  const xvf::EmbedderModel model(xvf::make_embedder_config("baseline", xvf::ModelScale::kDesk));
  xvf::Rng rng(5);
  xvf::FeatureMatrix feats;
  feats.frames.resize(300, 23);
  for (Eigen::Index i = 0; i < feats.frames.size(); ++i) feats.frames.data()[i] = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(model.extract_embedding(feats));
}
BENCHMARK(BM_DeskEmbedding);

}  // namespace
BENCHMARK_MAIN();
