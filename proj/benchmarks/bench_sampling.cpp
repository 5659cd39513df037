#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "batchal/data.hpp"
#include "batchal/model.hpp"
#include "batchal/posterior.hpp"

using namespace batchal;

namespace {

void BM_SampleMargins(benchmark::State& state) {
  SyntheticSpec spec;
  const SyntheticDataset syn = generate_synthetic(spec);
  const auto triplets = triplets_from_matrix(syn.dissim, static_cast<std::size_t>(state.range(0)), 1,
                                             default_min_gap(syn.dissim));
  std::vector<TripletId> ids(triplets.size());
  std::iota(ids.begin(), ids.end(), TripletId{0});
  const auto params = EmbeddingParams::initialize({10, 32, 32, 8}, Activation::Relu, 2);
  SamplingConfig cfg;
  cfg.passes = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_margins(params, syn.features.rows, triplets, ids, cfg));
  }
}
BENCHMARK(BM_SampleMargins)->Args({1000, 70})->Args({5000, 70})->Args({5000, 20});

}  // namespace
