#include "batchal/loop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "batchal/error.hpp"
#include "batchal/rng.hpp"

namespace batchal {

namespace {

// Seed streams derived from the session seed.
enum : std::uint64_t {
  kSplitStream = 1,
  kOrientationStream = 2,
  kInitPoolStream = 3,
  kParamStream = 4,
  kOracleStream = 5,
  kPretrainStream = 6,
  kWarmStartStream = 7,
  kPosteriorStream = 8,
  kCandidateStream = 9,
  kRandomStrategyStream = 10,
};

std::uint64_t round_seed(std::uint64_t session_seed, std::uint64_t stream, std::size_t round) {
  return mix_seed(mix_seed(session_seed, stream), round);
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

// Jitter for reported batch entropies: explicit value, else 1e-8 x mean batch
// variance, floored so a zero-variance batch still has a finite entropy.
double reporting_jitter(const CenteredMargins& batch, const std::optional<double>& jitter) {
  if (jitter) return *jitter;
  return std::max(default_jitter(batch), 1e-300);
}

std::vector<std::size_t> positions_of(const CenteredMargins& cm, std::span<const TripletId> ids) {
  std::map<TripletId, std::size_t> where;
  for (std::size_t p = 0; p < cm.candidate_ids.size(); ++p) where.emplace(cm.candidate_ids[p], p);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (TripletId id : ids) out.push_back(where.at(id));
  return out;
}

bool same_objects(const Triplet& a, const Triplet& b) {
  return a.i == b.i && ((a.j == b.j && a.k == b.k) || (a.j == b.k && a.k == b.j));
}

}  // namespace

Dataset make_dataset(std::string name, FeatureTable features, GroundTruth truth,
                     std::size_t triplet_count, std::uint64_t seed) {
  Dataset ds;
  ds.name = std::move(name);
  if (const auto* list = std::get_if<TripletList>(&truth)) {
    ds.universe = list->triplets;
  } else {
    const auto& m = std::get<DissimMatrix>(truth);
    validate_dissim(m);
    if (m.n() != features.n()) {
      throw Error(Errc::DimensionMismatch, "dissimilarity matrix and feature table sizes differ");
    }
    ds.universe = triplets_from_matrix(m, triplet_count, seed, default_min_gap(m));
  }
  for (const Triplet& t : ds.universe) {
    if (t.i >= features.n() || t.j >= features.n() || t.k >= features.n()) {
      throw Error(Errc::IndexOutOfRange, "ground-truth triplet references a missing object");
    }
  }
  ds.features = std::move(features);
  ds.truth = std::move(truth);
  return ds;
}

Oracle::Oracle(std::shared_ptr<const GroundTruth> truth, double flip_rate, std::uint64_t seed)
    : truth_(std::move(truth)), flip_rate_(flip_rate), seed_(seed) {
  if (!(flip_rate >= 0.0 && flip_rate <= 1.0)) {
    throw Error(Errc::InvalidArgument, "flip rate must lie in [0, 1]");
  }
  if (truth_) {
    if (const auto* list = std::get_if<TripletList>(truth_.get())) {
      for (const Triplet& t : list->triplets) {
        listed_.emplace(key(t.i, t.j, t.k), t);
      }
    }
  }
}

std::uint64_t Oracle::key(ObjectId i, ObjectId a, ObjectId b) noexcept {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(i) << 42) ^ (static_cast<std::uint64_t>(a) << 21) ^
         static_cast<std::uint64_t>(b);
}

Triplet Oracle::true_order(const Triplet& t) const {
  if (!truth_) throw Error(Errc::InvalidArgument, "oracle has no ground truth");
  if (const auto* m = std::get_if<DissimMatrix>(truth_.get())) {
    const auto n = m->n();
    if (t.i >= n || t.j >= n || t.k >= n) {
      throw Error(Errc::IndexOutOfRange, "triplet outside dissimilarity matrix");
    }
    const double dij = m->values(static_cast<Eigen::Index>(t.i), static_cast<Eigen::Index>(t.j));
    const double dik = m->values(static_cast<Eigen::Index>(t.i), static_cast<Eigen::Index>(t.k));
    if (dij == dik) {
      throw Error(Errc::TieUndefined, "equal dissimilarities for triplet (" + std::to_string(t.i) +
                                          "," + std::to_string(t.j) + "," + std::to_string(t.k) + ")");
    }
    return dij < dik ? Triplet{t.i, t.j, t.k} : Triplet{t.i, t.k, t.j};
  }
  const auto it = listed_.find(key(t.i, t.j, t.k));
  if (it == listed_.end()) {
    throw Error(Errc::IndexOutOfRange, "triplet not present in ground-truth list");
  }
  return it->second;
}

std::vector<Triplet> Oracle::annotate(std::span<const TripletId> ids,
                                      std::span<const Triplet> pool) const {
  std::vector<Triplet> out;
  out.reserve(ids.size());
  for (TripletId id : ids) {
    if (id >= pool.size()) throw Error(Errc::IndexOutOfRange, "annotate: unknown triplet id");
    Triplet t = true_order(pool[id]);
    Rng rng(mix_seed(seed_, id));
    if (rng.bernoulli(flip_rate_)) t = t.swapped();
    out.push_back(t);
  }
  return out;
}

std::uint64_t oracle_seed(std::uint64_t session_seed) noexcept {
  return mix_seed(session_seed, kOracleStream);
}

bool RoundRecord::same_outcome(const RoundRecord& o) const {
  return round == o.round && strategy == o.strategy && chosen == o.chosen &&
         batch_entropy == o.batch_entropy && accuracy == o.accuracy;
}

ActiveLearningSession ActiveLearningSession::init(std::shared_ptr<const Dataset> dataset,
                                                  const SessionConfig& config) {
  if (!dataset) throw Error(Errc::InvalidArgument, "session needs a dataset");
  ActiveLearningSession s;
  s.dataset_ = dataset;
  s.config_ = config;
  const std::uint64_t seed = config.seed;

  const auto [train_idx, test_idx] =
      split_indices(dataset->universe.size(), config.train_fraction, mix_seed(seed, kSplitStream));
  Rng orient(mix_seed(seed, kOrientationStream));
  for (std::size_t idx : train_idx) {
    const Triplet& t = dataset->universe[idx];
    s.pool_.push_back(orient.bernoulli(0.5) ? t.swapped() : t);
  }
  for (std::size_t idx : test_idx) s.test_.push_back(dataset->universe[idx]);
  if (s.test_.empty()) throw Error(Errc::PoolTooSmall, "test split is empty");
  if (config.init_pool > s.pool_.size()) {
    throw Error(Errc::PoolTooSmall, "initial pool of " + std::to_string(config.init_pool) +
                                        " exceeds annotation pool of " +
                                        std::to_string(s.pool_.size()));
  }

  auto truth = std::shared_ptr<const GroundTruth>(dataset, &dataset->truth);
  s.oracle_ = Oracle(truth, config.noise, oracle_seed(seed));

  std::vector<std::size_t> layers{dataset->features.d()};
  layers.insert(layers.end(), config.hidden_layers.begin(), config.hidden_layers.end());
  layers.push_back(config.embedding_dim);
  s.params_ = EmbeddingParams::initialize(layers, config.activation, mix_seed(seed, kParamStream));
  s.adam_ = AdamState::for_params(s.params_, config.pretrain.learning_rate);

  const auto start = std::chrono::steady_clock::now();
  std::vector<TripletId> all(s.pool_.size());
  std::iota(all.begin(), all.end(), TripletId{0});
  SelectionConfig pick;
  pick.batch_size = config.init_pool;
  pick.seed = mix_seed(seed, kInitPoolStream);
  std::vector<TripletId> initial;
  if (config.init_pool > 0) initial = select_random(all, pick).chosen;
  std::sort(initial.begin(), initial.end());
  s.labeled_ids_ = initial;
  s.labeled_ = s.oracle_.annotate(initial, s.pool_);
  std::set_difference(all.begin(), all.end(), initial.begin(), initial.end(),
                      std::back_inserter(s.unlabeled_));
  const double select_ms = elapsed_ms(start);

  const auto train_start = std::chrono::steady_clock::now();
  if (!s.labeled_.empty()) {
    TrainConfig tc = config.pretrain;
    tc.seed = mix_seed(seed, kPretrainStream);
    TrainResult tr = train(s.params_, s.adam_, s.labeled_, dataset->features.rows, tc);
    s.params_ = std::move(tr.params);
    s.adam_ = std::move(tr.state);
  }
  RoundRecord rec;
  rec.round = 0;
  rec.strategy = "init";
  rec.chosen = initial;
  rec.batch_entropy = 0.0;
  rec.accuracy = evaluate(s.params_, s.test_, dataset->features.rows);
  rec.select_ms = select_ms;
  rec.train_ms = elapsed_ms(train_start);
  s.history_.push_back(std::move(rec));
  return s;
}

std::uint64_t ActiveLearningSession::posterior_seed(std::size_t round) const noexcept {
  return round_seed(config_.seed, kPosteriorStream, round);
}

std::vector<TripletId> ActiveLearningSession::draw_candidates(std::size_t cap) const {
  std::vector<TripletId> candidates = unlabeled_;
  if (cap > 0 && candidates.size() > cap) {
    SelectionConfig pick;
    pick.batch_size = cap;
    pick.seed = round_seed(config_.seed, kCandidateStream, round_ + 1);
    candidates = select_random(unlabeled_, pick).chosen;
    std::sort(candidates.begin(), candidates.end());
  }
  return candidates;
}

Proposal ActiveLearningSession::propose(const RoundConfig& rc) const {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t next = round_ + 1;
  const std::vector<TripletId> candidates = draw_candidates(rc.candidate_cap);
  if (rc.batch_size > candidates.size()) {
    throw Error(Errc::BatchTooLarge, "batch too large: b=" + std::to_string(rc.batch_size) +
                                         " exceeds " + std::to_string(candidates.size()) +
                                         " candidates");
  }
  const Matrix& x = dataset_->features.rows;
  SamplingConfig sc{rc.passes, rc.dropout_p, posterior_seed(next)};
  SelectionConfig sel;
  sel.batch_size = rc.batch_size;
  sel.jitter = rc.jitter;
  sel.seed = round_seed(config_.seed, kRandomStrategyStream, next);

  Proposal p;
  p.round = next;
  p.strategy = rc.strategy;
  std::optional<CenteredMargins> batch;
  switch (rc.strategy) {
    case Strategy::JointEntropy:
    case Strategy::Variance: {
      const CenteredMargins cm = center(sample_margins(params_, x, pool_, candidates, sc));
      // Saturation threshold relative to the typical spread of the margins.
      sel.min_norm = 1e-6 * std::sqrt(cm.variances.mean());
      SelectionResult r = rc.strategy == Strategy::JointEntropy ? select_joint_entropy(cm, sel)
                                                                : select_variance(cm, sel);
      batch = cm.subset(positions_of(cm, r.chosen));
      p.chosen = std::move(r.chosen);
      p.step_scores = std::move(r.step_scores);
      p.saturated_at = r.saturated_at;
      break;
    }
    case Strategy::Uncertainty: {
      const Vector margins = deterministic_margins(params_, x, pool_, candidates);
      SelectionResult r = select_uncertainty(candidates, margins, sel);
      p.chosen = std::move(r.chosen);
      p.step_scores = std::move(r.step_scores);
      break;
    }
    case Strategy::Random: {
      SelectionResult r = select_random(candidates, sel);
      p.chosen = std::move(r.chosen);
      p.step_scores = std::move(r.step_scores);
      break;
    }
  }
  if (!batch) batch = center(sample_margins(params_, x, pool_, p.chosen, sc));
  p.batch_entropy = batch_entropy(*batch, reporting_jitter(*batch, rc.jitter));
  p.select_ms = elapsed_ms(start);
  return p;
}

const RoundRecord& ActiveLearningSession::commit(const Proposal& proposal,
                                                 std::span<const Triplet> ordered) {
  if (proposal.round != round_ + 1) {
    throw Error(Errc::InvalidArgument, "proposal is for round " + std::to_string(proposal.round) +
                                           ", session expects " + std::to_string(round_ + 1));
  }
  if (ordered.size() != proposal.chosen.size()) {
    throw Error(Errc::DimensionMismatch, "one ordering per chosen triplet required");
  }
  for (std::size_t q = 0; q < ordered.size(); ++q) {
    const TripletId id = proposal.chosen[q];
    if (!std::binary_search(unlabeled_.begin(), unlabeled_.end(), id)) {
      throw Error(Errc::InvalidArgument, "triplet " + std::to_string(id) + " is not unlabeled");
    }
    if (!same_objects(pool_[id], ordered[q])) {
      throw Error(Errc::InvalidArgument, "ordering for triplet " + std::to_string(id) +
                                             " names different objects");
    }
  }

  std::vector<TripletId> sorted_chosen = proposal.chosen;
  std::sort(sorted_chosen.begin(), sorted_chosen.end());
  std::vector<TripletId> remaining;
  std::set_difference(unlabeled_.begin(), unlabeled_.end(), sorted_chosen.begin(),
                      sorted_chosen.end(), std::back_inserter(remaining));
  unlabeled_ = std::move(remaining);
  labeled_ids_.insert(labeled_ids_.end(), proposal.chosen.begin(), proposal.chosen.end());
  labeled_.insert(labeled_.end(), ordered.begin(), ordered.end());
  ++round_;

  const auto start = std::chrono::steady_clock::now();
  TrainConfig tc = config_.warm_start;
  tc.seed = round_seed(config_.seed, kWarmStartStream, round_);
  TrainResult tr = train(std::move(params_), std::move(adam_), labeled_, dataset_->features.rows, tc);
  params_ = std::move(tr.params);
  adam_ = std::move(tr.state);

  RoundRecord rec;
  rec.round = round_;
  rec.strategy = std::string(strategy_name(proposal.strategy));
  rec.chosen = proposal.chosen;
  rec.batch_entropy = proposal.batch_entropy;
  rec.accuracy = evaluate(params_, test_, dataset_->features.rows);
  rec.select_ms = proposal.select_ms;
  rec.train_ms = elapsed_ms(start);
  history_.push_back(std::move(rec));
  return history_.back();
}

const RoundRecord& ActiveLearningSession::run_round(const RoundConfig& config) {
  const Proposal p = propose(config);
  const std::vector<Triplet> ordered = oracle_.annotate(p.chosen, pool_);
  return commit(p, ordered);
}

ExperimentResult run_experiment(std::shared_ptr<const Dataset> dataset, const ExperimentSpec& spec,
                                const ProgressFn& progress) {
  if (spec.seeds.empty()) throw Error(Errc::InvalidArgument, "experiment needs at least one seed");
  if (spec.strategies.empty()) throw Error(Errc::InvalidArgument, "experiment needs a strategy");
  // cells[strategy][seed] -> records
  std::vector<std::vector<std::vector<RoundRecord>>> cells(
      spec.strategies.size(), std::vector<std::vector<RoundRecord>>(spec.seeds.size()));
  for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
    SessionConfig sc = spec.session;
    sc.seed = spec.seeds[si];
    const ActiveLearningSession base = ActiveLearningSession::init(dataset, sc);
    for (std::size_t ki = 0; ki < spec.strategies.size(); ++ki) {
      ActiveLearningSession session = base;
      RoundConfig rc = spec.round;
      rc.strategy = spec.strategies[ki];
      const std::string name(strategy_name(rc.strategy));
      if (progress) progress(name, sc.seed, session.history().front());
      for (std::size_t r = 0; r < spec.rounds; ++r) {
        const RoundRecord& rec = session.run_round(rc);
        if (progress) progress(name, sc.seed, rec);
      }
      cells[ki][si] = session.history();
    }
  }

  ExperimentResult out;
  for (std::size_t ki = 0; ki < spec.strategies.size(); ++ki) {
    const std::string name(strategy_name(spec.strategies[ki]));
    for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
      for (const RoundRecord& rec : cells[ki][si]) {
        out.rows.push_back(MetricsRow{name, rec.round, spec.seeds[si], rec.accuracy,
                                      rec.batch_entropy, rec.select_ms, rec.train_ms});
      }
    }
  }
  out.aggregate = aggregate(out.rows);
  return out;
}

std::vector<AggregateRow> aggregate(std::span<const MetricsRow> rows) {
  std::vector<std::string> order;
  std::map<std::pair<std::string, std::size_t>, std::vector<const MetricsRow*>> groups;
  for (const MetricsRow& r : rows) {
    if (std::find(order.begin(), order.end(), r.strategy) == order.end()) order.push_back(r.strategy);
    groups[{r.strategy, r.round}].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const std::string& name : order) {
    for (const auto& [key, members] : groups) {
      if (key.first != name) continue;
      AggregateRow a;
      a.strategy = name;
      a.round = key.second;
      a.seeds = members.size();
      double sum = 0.0;
      double entropy_sum = 0.0;
      for (const MetricsRow* r : members) {
        sum += r->accuracy;
        entropy_sum += r->batch_entropy;
      }
      const double n = static_cast<double>(members.size());
      a.mean_accuracy = sum / n;
      a.mean_batch_entropy = entropy_sum / n;
      double ss = 0.0;
      for (const MetricsRow* r : members) ss += (r->accuracy - a.mean_accuracy) * (r->accuracy - a.mean_accuracy);
      a.std_accuracy = members.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      out.push_back(std::move(a));
    }
  }
  return out;
}

void write_metrics_csv(std::span<const MetricsRow> rows, std::ostream& out) {
  out << "strategy,round,seed,accuracy,batch_entropy,select_ms,train_ms\n";
  for (const MetricsRow& r : rows) {
    out << r.strategy << ',' << r.round << ',' << r.seed << ',' << format_double(r.accuracy) << ','
        << format_double(r.batch_entropy) << ',' << format_double(r.select_ms) << ','
        << format_double(r.train_ms) << '\n';
  }
}

void write_aggregate_csv(std::span<const AggregateRow> rows, std::ostream& out) {
  out << "strategy,round,mean_accuracy,std_accuracy,mean_batch_entropy,seeds\n";
  for (const AggregateRow& r : rows) {
    out << r.strategy << ',' << r.round << ',' << format_double(r.mean_accuracy) << ','
        << format_double(r.std_accuracy) << ',' << format_double(r.mean_batch_entropy) << ','
        << r.seeds << '\n';
  }
}

namespace {

std::vector<std::string> csv_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw Error(Errc::ParseError, "bad number '" + s + "'");
  return v;
}

template <typename RowFn>
void read_csv(std::istream& in, const std::string& header, std::size_t columns, RowFn fn) {
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw Error(Errc::ParseError, "unexpected CSV header: '" + line + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = csv_cells(line);
    if (cells.size() != columns) {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(columns) + " columns");
    }
    try {
      fn(cells);
    } catch (const std::logic_error&) {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": bad value");
    }
  }
}

}  // namespace

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::vector<MetricsRow> rows;
  read_csv(in, "strategy,round,seed,accuracy,batch_entropy,select_ms,train_ms", 7,
           [&](const std::vector<std::string>& c) {
             rows.push_back(MetricsRow{c[0], std::stoull(c[1]), std::stoull(c[2]), to_double(c[3]),
                                       to_double(c[4]), to_double(c[5]), to_double(c[6])});
           });
  return rows;
}

std::vector<AggregateRow> read_aggregate_csv(std::istream& in) {
  std::vector<AggregateRow> rows;
  read_csv(in, "strategy,round,mean_accuracy,std_accuracy,mean_batch_entropy,seeds", 6,
           [&](const std::vector<std::string>& c) {
             rows.push_back(AggregateRow{c[0], std::stoull(c[1]), to_double(c[2]), to_double(c[3]),
                                         to_double(c[4]), std::stoull(c[5])});
           });
  return rows;
}

}  // namespace batchal
