#include "batchal/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "batchal/error.hpp"
#include "batchal/rng.hpp"

namespace batchal {

namespace {

// exp(-margin) overflows past ~709; margins this negative only appear when a
// badly mislabeled set has been fit hard.
constexpr double kMaxNegExponent = 700.0;

double exp_neg(double margin) { return std::exp(std::min(-margin, kMaxNegExponent)); }

void check_input(const EmbeddingParams& params, Eigen::Index dim) {
  if (params.layer_sizes.size() < 2 || static_cast<std::size_t>(dim) != params.input_dim()) {
    throw Error(Errc::DimensionMismatch,
                "embedding expects input dimension " +
                    std::to_string(params.layer_sizes.empty() ? 0 : params.input_dim()) +
                    ", got " + std::to_string(dim));
  }
}

void check_plan(const EmbeddingParams& params, const DropoutPlan* plan) {
  if (!plan) return;
  if (plan->keep.size() + 1 != params.num_layers()) {
    throw Error(Errc::DimensionMismatch, "dropout plan does not match network depth");
  }
  for (std::size_t h = 0; h < plan->keep.size(); ++h) {
    if (plan->keep[h].size() != params.layer_sizes[h + 1]) {
      throw Error(Errc::DimensionMismatch, "dropout mask width mismatch at layer " +
                                               std::to_string(h + 1));
    }
  }
}

// Column-batched activations. pre[l] and post[l] are layer_sizes[l] x n; the
// input is post[0] and the output post[L] (== pre[L]).
struct Trace {
  std::vector<Matrix> pre;
  std::vector<Matrix> post;
};

void apply_activation(Activation a, const Matrix& z, Matrix& out) {
  switch (a) {
    case Activation::Relu: out = z.cwiseMax(0.0); break;
    case Activation::Tanh: out = z.array().tanh().matrix(); break;
  }
}

Matrix activation_derivative(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::Relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh: return (1.0 - z.array().tanh().square()).matrix();
  }
  return Matrix();
}

void apply_mask(const DropoutPlan& plan, std::size_t hidden, Matrix& a) {
  const auto& keep = plan.keep[hidden];
  const double s = plan.scale();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    if (keep[static_cast<std::size_t>(r)]) {
      a.row(r) *= s;
    } else {
      a.row(r).setZero();
    }
  }
}

Trace forward_trace(const EmbeddingParams& params, Matrix input, const DropoutPlan* plan) {
  const std::size_t layers = params.num_layers();
  Trace tr;
  tr.pre.resize(layers + 1);
  tr.post.resize(layers + 1);
  tr.post[0] = std::move(input);
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = params.weights[l] * tr.post[l];
    z.colwise() += params.biases[l];
    if (l + 1 < layers) {
      Matrix act;
      apply_activation(params.activation, z, act);
      tr.pre[l + 1] = std::move(z);
      if (plan) apply_mask(*plan, l, act);
      tr.post[l + 1] = std::move(act);
    } else {
      tr.post[l + 1] = z;
      tr.pre[l + 1] = std::move(z);
    }
  }
  return tr;
}

// Accumulates parameter gradients given dLoss/dOutput (output_dim x n).
void backward(const EmbeddingParams& params, const Trace& tr, Matrix delta,
              const DropoutPlan* plan, EmbeddingParams& grad) {
  for (std::size_t l = params.num_layers(); l-- > 0;) {
    grad.weights[l].noalias() += delta * tr.post[l].transpose();
    grad.biases[l] += delta.rowwise().sum();
    if (l == 0) break;
    Matrix upstream = params.weights[l].transpose() * delta;
    if (plan) apply_mask(*plan, l - 1, upstream);
    delta = upstream.cwiseProduct(activation_derivative(params.activation, tr.pre[l]));
  }
}

struct ObjectBatch {
  std::vector<ObjectId> ids;            // sorted, unique
  std::vector<Eigen::Index> column;     // object id -> column, or -1
};

ObjectBatch gather_objects(std::span<const Triplet> triplets, Eigen::Index n_objects) {
  ObjectBatch b;
  b.column.assign(static_cast<std::size_t>(n_objects), -1);
  for (const Triplet& t : triplets) {
    for (ObjectId o : {t.i, t.j, t.k}) {
      if (o >= static_cast<ObjectId>(n_objects)) {
        throw Error(Errc::IndexOutOfRange, "triplet references object " + std::to_string(o) +
                                               " of " + std::to_string(n_objects));
      }
      b.column[o] = 0;
    }
  }
  for (std::size_t o = 0; o < b.column.size(); ++o) {
    if (b.column[o] == 0) {
      b.column[o] = static_cast<Eigen::Index>(b.ids.size());
      b.ids.push_back(o);
    }
  }
  return b;
}

Matrix gather_columns(const Matrix& features, const std::vector<ObjectId>& ids) {
  Matrix x(features.cols(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t c = 0; c < ids.size(); ++c) {
    x.col(static_cast<Eigen::Index>(c)) = features.row(static_cast<Eigen::Index>(ids[c])).transpose();
  }
  return x;
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw Error(Errc::InvalidArgument, "unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) noexcept {
  return a == Activation::Relu ? "relu" : "tanh";
}

std::size_t EmbeddingParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

EmbeddingParams EmbeddingParams::initialize(std::vector<std::size_t> layer_sizes,
                                            Activation activation, std::uint64_t seed) {
  if (layer_sizes.size() < 2) {
    throw Error(Errc::InvalidArgument, "network needs at least input and output layers");
  }
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw Error(Errc::InvalidArgument, "layer width must be positive");
  }
  EmbeddingParams p;
  p.layer_sizes = std::move(layer_sizes);
  p.activation = activation;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < p.layer_sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(p.layer_sizes[l]);
    const auto out = static_cast<Eigen::Index>(p.layer_sizes[l + 1]);
    double limit = std::sqrt(6.0 / static_cast<double>(in));
    if (l + 2 == p.layer_sizes.size()) limit *= kOutputInitGain;
    Matrix w(out, in);
    for (Eigen::Index c = 0; c < in; ++c) {
      for (Eigen::Index r = 0; r < out; ++r) w(r, c) = limit * (2.0 * rng.uniform() - 1.0);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(out));
  }
  return p;
}

EmbeddingParams EmbeddingParams::zeros_like() const {
  EmbeddingParams z;
  z.layer_sizes = layer_sizes;
  z.activation = activation;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    z.weights.push_back(Matrix::Zero(weights[l].rows(), weights[l].cols()));
    z.biases.push_back(Vector::Zero(biases[l].size()));
  }
  return z;
}

std::vector<double> EmbeddingParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.insert(flat.end(), weights[l].data(), weights[l].data() + weights[l].size());
    flat.insert(flat.end(), biases[l].data(), biases[l].data() + biases[l].size());
  }
  return flat;
}

void EmbeddingParams::assign_flat(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw Error(Errc::DimensionMismatch, "flat parameter vector has wrong length");
  }
  std::size_t pos = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), weights[l].size(), weights[l].data());
    pos += static_cast<std::size_t>(weights[l].size());
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), biases[l].size(), biases[l].data());
    pos += static_cast<std::size_t>(biases[l].size());
  }
}

DropoutPlan DropoutPlan::sample(const EmbeddingParams& params, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw Error(Errc::InvalidArgument, "dropout probability must lie in [0, 1)");
  }
  DropoutPlan plan;
  plan.p = p;
  plan.seed = seed;
  Rng rng(seed);
  for (std::size_t h = 1; h + 1 < params.layer_sizes.size(); ++h) {
    std::vector<std::uint8_t> keep(params.layer_sizes[h]);
    for (auto& k : keep) k = rng.bernoulli(p) ? 0 : 1;
    plan.keep.push_back(std::move(keep));
  }
  return plan;
}

AdamState AdamState::for_params(const EmbeddingParams& params, double learning_rate) {
  AdamState s;
  s.m.assign(params.parameter_count(), 0.0);
  s.v.assign(params.parameter_count(), 0.0);
  s.learning_rate = learning_rate;
  return s;
}

Vector forward(const EmbeddingParams& params, const Eigen::Ref<const Vector>& x,
               const DropoutPlan* plan) {
  check_input(params, x.size());
  check_plan(params, plan);
  Matrix input = x;
  return forward_trace(params, std::move(input), plan).post.back().col(0);
}

Matrix embed_all(const EmbeddingParams& params, const Matrix& features, const DropoutPlan* plan) {
  check_input(params, features.cols());
  check_plan(params, plan);
  Trace tr = forward_trace(params, features.transpose(), plan);
  return tr.post.back().transpose();
}

double margin_from_embeddings(const Matrix& embedded, const Triplet& t) {
  const auto i = static_cast<Eigen::Index>(t.i);
  const auto j = static_cast<Eigen::Index>(t.j);
  const auto k = static_cast<Eigen::Index>(t.k);
  return (embedded.row(i) - embedded.row(k)).squaredNorm() -
         (embedded.row(i) - embedded.row(j)).squaredNorm();
}

double triplet_margin(const EmbeddingParams& params, const Triplet& t, const Matrix& features,
                      const DropoutPlan* plan) {
  const auto n = static_cast<ObjectId>(features.rows());
  if (t.i >= n || t.j >= n || t.k >= n) {
    throw Error(Errc::IndexOutOfRange, "triplet index outside feature table");
  }
  const Vector ei = forward(params, features.row(static_cast<Eigen::Index>(t.i)).transpose(), plan);
  const Vector ej = forward(params, features.row(static_cast<Eigen::Index>(t.j)).transpose(), plan);
  const Vector ek = forward(params, features.row(static_cast<Eigen::Index>(t.k)).transpose(), plan);
  return (ei - ek).squaredNorm() - (ei - ej).squaredNorm();
}

LossAndGrad batch_loss_and_grad(const EmbeddingParams& params, std::span<const Triplet> triplets,
                                const Matrix& features, const DropoutPlan* plan) {
  check_input(params, features.cols());
  check_plan(params, plan);
  LossAndGrad out{0.0, params.zeros_like()};
  if (triplets.empty()) return out;

  // One forward/backward per distinct object rather than three per triplet.
  const ObjectBatch objs = gather_objects(triplets, features.rows());
  Trace tr = forward_trace(params, gather_columns(features, objs.ids), plan);
  const Matrix& e = tr.post.back();
  Matrix d_embed = Matrix::Zero(e.rows(), e.cols());
  for (const Triplet& t : triplets) {
    const Eigen::Index ci = objs.column[t.i];
    const Eigen::Index cj = objs.column[t.j];
    const Eigen::Index ck = objs.column[t.k];
    const Vector dij = e.col(ci) - e.col(cj);
    const Vector dik = e.col(ci) - e.col(ck);
    const double margin = dik.squaredNorm() - dij.squaredNorm();
    const double l = exp_neg(margin);
    out.loss += l;
    // dL/dmargin = -l; dmargin/de_i = 2(e_j - e_k), /de_j = 2 dij, /de_k = -2 dik.
    const double c = -2.0 * l;
    d_embed.col(ci) += c * (dik - dij);
    d_embed.col(cj) += c * dij;
    d_embed.col(ck) -= c * dik;
  }
  backward(params, tr, std::move(d_embed), plan, out.grad);
  return out;
}

double batch_loss(const EmbeddingParams& params, std::span<const Triplet> triplets,
                  const Matrix& features, const DropoutPlan* plan) {
  const Matrix e = embed_all(params, features, plan);
  double loss = 0.0;
  for (const Triplet& t : triplets) loss += exp_neg(margin_from_embeddings(e, t));
  return loss;
}

void adam_step(EmbeddingParams& params, const EmbeddingParams& grad, AdamState& state) {
  std::vector<double> theta = params.flatten();
  const std::vector<double> g = grad.flatten();
  if (g.size() != theta.size() || state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw Error(Errc::DimensionMismatch, "adam_step: parameter, gradient and state shapes differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < theta.size(); ++p) {
    state.m[p] = state.beta1 * state.m[p] + (1.0 - state.beta1) * g[p];
    state.v[p] = state.beta2 * state.v[p] + (1.0 - state.beta2) * g[p] * g[p];
    const double m_hat = state.m[p] / bc1;
    const double v_hat = state.v[p] / bc2;
    theta[p] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
  params.assign_flat(theta);
}

TrainResult train(EmbeddingParams params, AdamState state, std::span<const Triplet> labeled,
                  const Matrix& features, const TrainConfig& config) {
  TrainResult out;
  if (state.m.size() != params.parameter_count()) {
    state = AdamState::for_params(params, config.learning_rate);
  }
  state.learning_rate = config.learning_rate;
  out.initial_loss = batch_loss(params, labeled, features);
  if (config.epochs > 0 && !labeled.empty()) {
    const std::size_t batch = std::max<std::size_t>(1, config.sgd_batch);
    std::vector<std::size_t> order(labeled.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Triplet> mini;
    mini.reserve(std::min(batch, labeled.size()));
    Rng rng(config.seed);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(order.size(), start + batch);
        mini.clear();
        for (std::size_t q = start; q < stop; ++q) mini.push_back(labeled[order[q]]);
        const std::uint64_t plan_seed = rng.next();
        if (config.dropout_p > 0.0) {
          const DropoutPlan plan = DropoutPlan::sample(params, config.dropout_p, plan_seed);
          adam_step(params, batch_loss_and_grad(params, mini, features, &plan).grad, state);
        } else {
          adam_step(params, batch_loss_and_grad(params, mini, features).grad, state);
        }
      }
    }
  }
  out.final_loss = batch_loss(params, labeled, features);
  out.params = std::move(params);
  out.state = std::move(state);
  return out;
}

double evaluate(const EmbeddingParams& params, std::span<const Triplet> test,
                const Matrix& features) {
  if (test.empty()) throw Error(Errc::InvalidArgument, "evaluate: empty test set");
  const Matrix e = embed_all(params, features);
  std::size_t correct = 0;
  for (const Triplet& t : test) {
    if (margin_from_embeddings(e, t) > 0.0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::vector<ObjectId> retrieve(const EmbeddingParams& params, ObjectId query,
                               std::span<const ObjectId> gallery, const Matrix& features,
                               std::size_t top_k) {
  if (gallery.empty()) throw Error(Errc::EmptyGallery, "retrieve: empty gallery");
  const auto n = static_cast<ObjectId>(features.rows());
  if (query >= n) throw Error(Errc::IndexOutOfRange, "retrieve: query out of range");
  const Vector q = forward(params, features.row(static_cast<Eigen::Index>(query)).transpose());
  std::vector<std::pair<double, ObjectId>> scored;
  scored.reserve(gallery.size());
  for (ObjectId g : gallery) {
    if (g == query) throw Error(Errc::InvalidArgument, "retrieve: query is in the gallery");
    if (g >= n) throw Error(Errc::IndexOutOfRange, "retrieve: gallery id out of range");
    const Vector e = forward(params, features.row(static_cast<Eigen::Index>(g)).transpose());
    scored.emplace_back((q - e).squaredNorm(), g);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<ObjectId> out;
  for (std::size_t r = 0; r < std::min(top_k, scored.size()); ++r) out.push_back(scored[r].second);
  return out;
}

}  // namespace batchal
