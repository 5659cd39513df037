#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "batchal/error.hpp"
#include "batchal/loop.hpp"
#include "batchal/rng.hpp"

using namespace batchal;

namespace {

std::shared_ptr<const Dataset> small_dataset(std::size_t triplets = 600) {
  SyntheticSpec spec;
  spec.n = 40;
  spec.d = 5;
  spec.latent_dim = 2;
  spec.seed = 11;
  auto syn = generate_synthetic(spec);
  return std::make_shared<Dataset>(make_dataset("small", syn.features, syn.dissim, triplets, 3));
}

SessionConfig small_session(std::uint64_t seed, std::size_t init_pool = 50) {
  SessionConfig c;
  c.seed = seed;
  c.init_pool = init_pool;
  c.hidden_layers = {8};
  c.embedding_dim = 3;
  c.pretrain.epochs = 30;
  c.pretrain.learning_rate = 1e-2;
  c.warm_start.epochs = 10;
  c.warm_start.learning_rate = 1e-2;
  return c;
}

RoundConfig round_cfg(Strategy s, std::size_t b = 20) {
  RoundConfig r;
  r.strategy = s;
  r.batch_size = b;
  r.passes = 12;
  r.dropout_p = 0.1;
  return r;
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::InvalidArgument;
}

}  // namespace

TEST_CASE("init with an empty pool leaves the random initialization") {
  auto ds = small_dataset();
  auto cfg = small_session(4, 0);
  auto s = ActiveLearningSession::init(ds, cfg);
  CHECK(s.labeled().empty());
  CHECK(s.round() == 0);
  CHECK(s.params() == EmbeddingParams::initialize({5, 8, 3}, Activation::Relu, mix_seed(4, 4)));
  REQUIRE(s.history().size() == 1);
  CHECK(s.history()[0].strategy == "init");
}

TEST_CASE("init rejects an initial pool larger than the annotation pool") {
  auto ds = small_dataset();
  CHECK(code_of([&] { ActiveLearningSession::init(ds, small_session(1, 301)); }) == Errc::PoolTooSmall);
}

TEST_CASE("pretrained model beats coin flipping") {
  SyntheticSpec spec;
  auto syn = generate_synthetic(spec);
  auto ds = std::make_shared<Dataset>(make_dataset("syn", syn.features, syn.dissim, 6000, 0));
  SessionConfig cfg;
  cfg.seed = 1;
  cfg.pretrain.learning_rate = 1e-3;
  auto s = ActiveLearningSession::init(ds, cfg);
  CHECK(s.labeled().size() == 200);
  CHECK(s.history()[0].accuracy > 0.5);
}

TEST_CASE("sessions are deterministic") {
  auto ds = small_dataset();
  for (Strategy st : {Strategy::JointEntropy, Strategy::Random, Strategy::Uncertainty, Strategy::Variance}) {
    auto a = ActiveLearningSession::init(ds, small_session(9));
    auto b = ActiveLearningSession::init(ds, small_session(9));
    for (int r = 0; r < 2; ++r) {
      a.run_round(round_cfg(st));
      b.run_round(round_cfg(st));
    }
    REQUIRE(a.history().size() == b.history().size());
    for (std::size_t r = 0; r < a.history().size(); ++r) CHECK(a.history()[r].same_outcome(b.history()[r]));
    CHECK(a.params() == b.params());
    CHECK(a.adam_state() == b.adam_state());
  }
}

TEST_CASE("labels are conserved and never re-annotated") {
  auto ds = small_dataset();
  for (Strategy st : {Strategy::JointEntropy, Strategy::Random, Strategy::Uncertainty, Strategy::Variance}) {
    auto s = ActiveLearningSession::init(ds, small_session(2));
    const std::size_t total = s.labeled_ids().size() + s.unlabeled_ids().size();
    std::set<TripletId> seen(s.labeled_ids().begin(), s.labeled_ids().end());
    for (std::size_t r = 1; r <= 4; ++r) {
      const auto& rec = s.run_round(round_cfg(st));
      CHECK(rec.round == r);
      CHECK(rec.strategy == strategy_name(st));
      CHECK(rec.accuracy >= 0.0);
      CHECK(rec.accuracy <= 1.0);
      CHECK(s.labeled_ids().size() + s.unlabeled_ids().size() == total);
      CHECK(s.labeled_ids().size() == 50 + r * 20);
      CHECK(s.labeled().size() == s.labeled_ids().size());
      for (TripletId id : rec.chosen) {
        CHECK(seen.insert(id).second);
        CHECK_FALSE(std::binary_search(s.unlabeled_ids().begin(), s.unlabeled_ids().end(), id));
      }
    }
    std::vector<TripletId> labeled(s.labeled_ids().begin(), s.labeled_ids().end());
    std::sort(labeled.begin(), labeled.end());
    std::vector<TripletId> both;
    std::set_intersection(labeled.begin(), labeled.end(), s.unlabeled_ids().begin(), s.unlabeled_ids().end(),
                          std::back_inserter(both));
    CHECK(both.empty());
  }
}

TEST_CASE("random batch of the whole pool exhausts it") {
  auto ds = small_dataset();
  auto s = ActiveLearningSession::init(ds, small_session(3));
  const std::size_t rest = s.unlabeled_ids().size();
  s.run_round(round_cfg(Strategy::Random, rest));
  CHECK(s.unlabeled_ids().empty());
  CHECK(code_of([&] { s.run_round(round_cfg(Strategy::Random, 1)); }) == Errc::BatchTooLarge);
}

TEST_CASE("oracle noise") {
  auto ds = small_dataset(3000);
  auto truth = std::shared_ptr<const GroundTruth>(ds, &ds->truth);
  std::vector<TripletId> ids(ds->universe.size());
  std::iota(ids.begin(), ids.end(), TripletId{0});

  Oracle clean(truth, 0.0, 1);
  CHECK(clean.annotate(ids, ds->universe) == ds->universe);
  std::vector<Triplet> swapped;
  for (const Triplet& t : ds->universe) swapped.push_back(t.swapped());
  CHECK(clean.annotate(ids, swapped) == ds->universe);

  Oracle always(truth, 1.0, 1);
  auto flipped = always.annotate(ids, ds->universe);
  for (std::size_t t = 0; t < ids.size(); ++t) CHECK(flipped[t] == ds->universe[t].swapped());

  // 10,000 annotations: the 3000-triplet universe under four oracle seeds.
  std::size_t flips = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Oracle noisy(truth, 0.3, seed);
    auto out = noisy.annotate(ids, ds->universe);
    for (std::size_t t = 0; t < ids.size() && total < 10000; ++t, ++total) {
      if (!(out[t] == ds->universe[t])) ++flips;
    }
  }
  REQUIRE(total == 10000);
  const double sigma = std::sqrt(10000 * 0.3 * 0.7);
  CHECK(std::abs(static_cast<double>(flips) - 3000.0) <= 3.0 * sigma);

  // Same id, same answer regardless of batch composition.
  Oracle noisy(truth, 0.3, 5);
  auto full = noisy.annotate(ids, ds->universe);
  std::vector<TripletId> some{7, 3, 1000};
  auto part = noisy.annotate(some, ds->universe);
  for (std::size_t q = 0; q < some.size(); ++q) CHECK(part[q] == full[some[q]]);

  DissimMatrix tie;
  tie.values = Matrix::Ones(3, 3);
  tie.values.diagonal().setZero();
  Oracle tied(std::make_shared<GroundTruth>(tie), 0.0, 0);
  CHECK(code_of([&] { tied.true_order({0, 1, 2}); }) == Errc::TieUndefined);
}

TEST_CASE("triplet-list ground truth") {
  FeatureTable f;
  f.rows = Matrix::Zero(4, 2);
  TripletList list;
  list.triplets = {{0, 1, 2}, {1, 3, 0}};
  auto ds = make_dataset("list", f, list, 0, 0);
  CHECK(ds.universe == list.triplets);
  Oracle o(std::make_shared<GroundTruth>(list), 0.0, 0);
  CHECK(o.true_order({0, 2, 1}) == Triplet{0, 1, 2});
  CHECK(o.true_order({1, 3, 0}) == Triplet{1, 3, 0});
  CHECK(code_of([&] { o.true_order({2, 3, 0}); }) == Errc::IndexOutOfRange);
}

TEST_CASE("experiments aggregate per strategy and round") {
  auto ds = small_dataset();
  ExperimentSpec spec;
  spec.session = small_session(0);
  spec.round = round_cfg(Strategy::JointEntropy);
  spec.strategies = {Strategy::Random, Strategy::JointEntropy};
  spec.rounds = 2;
  spec.seeds = {5};
  auto one = run_experiment(ds, spec);
  CHECK(one.rows.size() == 2 * 3);
  for (const auto& a : one.aggregate) CHECK(a.std_accuracy == 0.0);
  // Both strategies share round 0.
  CHECK(one.rows[0].accuracy == one.rows[3].accuracy);

  spec.strategies = {Strategy::Random};
  spec.seeds = {1, 2, 3};
  auto a = run_experiment(ds, spec);
  auto b = run_experiment(ds, spec);
  REQUIRE(a.aggregate.size() == b.aggregate.size());
  for (std::size_t q = 0; q < a.aggregate.size(); ++q) {
    CHECK(a.aggregate[q].mean_accuracy == b.aggregate[q].mean_accuracy);
    CHECK(a.aggregate[q].std_accuracy == b.aggregate[q].std_accuracy);
  }

  std::map<std::size_t, std::vector<double>> by_round;
  for (const auto& row : a.rows) by_round[row.round].push_back(row.accuracy);
  for (const auto& agg : a.aggregate) {
    const auto& xs = by_round[agg.round];
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    CHECK(agg.mean_accuracy == doctest::Approx(mean).epsilon(1e-14));
    CHECK(agg.std_accuracy == doctest::Approx(std::sqrt(ss / static_cast<double>(xs.size() - 1))).epsilon(1e-12));
    CHECK(agg.seeds == 3);
  }

  std::stringstream raw, agg;
  write_metrics_csv(a.rows, raw);
  write_aggregate_csv(a.aggregate, agg);
  auto raw_back = read_metrics_csv(raw);
  auto agg_back = read_aggregate_csv(agg);
  REQUIRE(raw_back.size() == a.rows.size());
  for (std::size_t q = 0; q < raw_back.size(); ++q) {
    CHECK(raw_back[q].accuracy == a.rows[q].accuracy);
    CHECK(raw_back[q].batch_entropy == a.rows[q].batch_entropy);
    CHECK(raw_back[q].select_ms == a.rows[q].select_ms);
    CHECK(raw_back[q].strategy == a.rows[q].strategy);
  }
  REQUIRE(agg_back.size() == a.aggregate.size());
  for (std::size_t q = 0; q < agg_back.size(); ++q) {
    CHECK(agg_back[q].mean_accuracy == a.aggregate[q].mean_accuracy);
    CHECK(agg_back[q].std_accuracy == a.aggregate[q].std_accuracy);
  }
}
