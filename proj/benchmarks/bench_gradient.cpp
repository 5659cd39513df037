#include <benchmark/benchmark.h>

#include "batchal/data.hpp"
#include "batchal/model.hpp"

using namespace batchal;

namespace {

void BM_LossAndGrad(benchmark::State& state) {
  SyntheticSpec spec;
  const SyntheticDataset syn = generate_synthetic(spec);
  const auto triplets = triplets_from_matrix(syn.dissim, static_cast<std::size_t>(state.range(0)), 1,
                                             default_min_gap(syn.dissim));
  const auto params = EmbeddingParams::initialize({10, 32, 32, 8}, Activation::Relu, 2);
  for (auto _ : state) benchmark::DoNotOptimize(batch_loss_and_grad(params, triplets, syn.features.rows));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrad)->Arg(100)->Arg(500);

}  // namespace
