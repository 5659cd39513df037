#include <benchmark/benchmark.h>

#include "batchal/posterior.hpp"
#include "batchal/rng.hpp"
#include "batchal/strategies.hpp"

using namespace batchal;

namespace {

CenteredMargins random_candidates(std::size_t m, std::size_t k) {
  Rng rng(1);
  MarginSampleMatrix msm;
  msm.samples.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  for (Eigen::Index r = 0; r < msm.samples.rows(); ++r)
    for (Eigen::Index c = 0; c < msm.samples.cols(); ++c) msm.samples(r, c) = rng.normal();
  for (std::size_t t = 0; t < m; ++t) msm.candidate_ids.push_back(t);
  return center(msm);
}

void BM_JointEntropy(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto b = static_cast<std::size_t>(state.range(1));
  const CenteredMargins cm = random_candidates(m, 70);
  SelectionConfig cfg;
  cfg.batch_size = b;
  for (auto _ : state) benchmark::DoNotOptimize(select_joint_entropy(cm, cfg));
  state.SetComplexityN(static_cast<benchmark::IterationCount>(b * m));
}
BENCHMARK(BM_JointEntropy)->Args({1000, 10})->Args({1000, 50})->Args({5000, 50})->Args({5000, 100})->Complexity();

void BM_Variance(benchmark::State& state) {
  const CenteredMargins cm = random_candidates(static_cast<std::size_t>(state.range(0)), 70);
  SelectionConfig cfg;
  cfg.batch_size = 100;
  for (auto _ : state) benchmark::DoNotOptimize(select_variance(cm, cfg));
}
BENCHMARK(BM_Variance)->Arg(1000)->Arg(5000);

void BM_BatchEntropy(benchmark::State& state) {
  const CenteredMargins cm = random_candidates(static_cast<std::size_t>(state.range(0)), 70);
  for (auto _ : state) benchmark::DoNotOptimize(batch_entropy(cm, 1e-8));
}
BENCHMARK(BM_BatchEntropy)->Arg(50)->Arg(100);

}  // namespace
