#include "batchal/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "batchal/error.hpp"
#include "batchal/rng.hpp"

namespace batchal {

namespace {

constexpr double kReorthFraction = 1e-3;

void check_batch(std::size_t b, std::size_t m) {
  if (b == 0) throw Error(Errc::InvalidArgument, "batch size must be at least 1");
  if (b > m) {
    throw Error(Errc::BatchTooLarge, "batch too large: b=" + std::to_string(b) +
                                         " exceeds " + std::to_string(m) + " candidates");
  }
}

// log(x) floored at the smallest normal double so saturated steps with zero
// jitter still report a finite score.
double finite_log(double x) {
  return std::log(std::max(x, std::numeric_limits<double>::min()));
}

// Top-b positions by a strict weak order `before`.
template <typename Before>
std::vector<std::size_t> top_positions(std::size_t m, std::size_t b, Before before) {
  std::vector<std::size_t> pos(m);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::partial_sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(b), pos.end(), before);
  pos.resize(b);
  return pos;
}

}  // namespace

Strategy parse_strategy(std::string_view name) {
  if (name == "joint_entropy") return Strategy::JointEntropy;
  if (name == "random") return Strategy::Random;
  if (name == "uncertainty") return Strategy::Uncertainty;
  if (name == "variance") return Strategy::Variance;
  throw Error(Errc::InvalidArgument, "unknown strategy '" + std::string(name) + "'");
}

std::string_view strategy_name(Strategy s) noexcept {
  switch (s) {
    case Strategy::JointEntropy: return "joint_entropy";
    case Strategy::Random: return "random";
    case Strategy::Uncertainty: return "uncertainty";
    case Strategy::Variance: return "variance";
  }
  return "unknown";
}

double default_jitter(const CenteredMargins& cm) {
  if (cm.variances.size() == 0) return 0.0;
  return 1e-8 * cm.variances.mean();
}

SelectionResult select_joint_entropy(const CenteredMargins& cm, const SelectionConfig& cfg) {
  const std::size_t m = cm.size();
  const std::size_t b = cfg.batch_size;
  check_batch(b, m);
  const std::size_t k = cm.passes();
  if (k < 2) throw Error(Errc::InvalidArgument, "select_joint_entropy: need K >= 2");
  const double jitter = cfg.jitter.value_or(default_jitter(cm));
  if (jitter < 0.0) throw Error(Errc::InvalidArgument, "jitter must be non-negative");
  // Residuals are kept on the unscaled rows u_t; dividing squared norms by
  // K-1 gives the conditional variances of the covariance-scaled family, and
  // at step one exactly the marginal variances.
  const double dof = static_cast<double>(k - 1);

  SelectionResult out;
  out.strategy = Strategy::JointEntropy;
  InnerProductCounter counter;

  std::vector<Vector> residual(m);
  std::vector<double> sq(m);  // |residual|^2 / (K-1)
  std::vector<double> original_sq(m);
  for (std::size_t t = 0; t < m; ++t) {
    residual[t] = cm.centered.row(static_cast<Eigen::Index>(t)).transpose();
    sq[t] = dot(residual[t], residual[t], &counter) / dof;
    original_sq[t] = sq[t];
  }
  std::vector<char> taken(m, 0);
  OrthoBasis basis(k);

  auto better_residual = [&](std::size_t a, std::size_t c) {
    if (sq[a] != sq[c]) return sq[a] > sq[c];
    return cm.candidate_ids[a] < cm.candidate_ids[c];
  };
  auto better_variance = [&](std::size_t a, std::size_t c) {
    if (cm.variances(static_cast<Eigen::Index>(a)) != cm.variances(static_cast<Eigen::Index>(c))) {
      return cm.variances(static_cast<Eigen::Index>(a)) > cm.variances(static_cast<Eigen::Index>(c));
    }
    return cm.candidate_ids[a] < cm.candidate_ids[c];
  };

  for (std::size_t step = 1; step <= b; ++step) {
    std::size_t best = m;
    if (!out.saturated_at) {
      for (std::size_t t = 0; t < m; ++t) {
        if (!taken[t] && (best == m || better_residual(t, best))) best = t;
      }
      if (!(std::sqrt(sq[best]) >= cfg.min_norm)) out.saturated_at = step;
    }
    if (out.saturated_at) {
      best = m;
      for (std::size_t t = 0; t < m; ++t) {
        if (!taken[t] && (best == m || better_variance(t, best))) best = t;
      }
      taken[best] = 1;
      out.chosen.push_back(cm.candidate_ids[best]);
      out.step_scores.push_back(finite_log(sq[best] + jitter));
      continue;
    }

    taken[best] = 1;
    out.chosen.push_back(cm.candidate_ids[best]);
    out.step_scores.push_back(finite_log(sq[best] + jitter));
    if (step == b) break;

    Vector direction = residual[best];
    if (sq[best] < kReorthFraction * kReorthFraction * original_sq[best]) {
      for (const Vector& q : basis.vectors()) direction.noalias() -= dot(q, direction, &counter) * q;
      dot(direction, direction, &counter);
    }
    if (!basis.try_append(direction, 0.0)) {
      // Nothing left to project out; every later step saturates.
      continue;
    }
    const Vector& q = basis.vectors().back();
    for (std::size_t t = 0; t < m; ++t) {
      if (taken[t]) continue;
      residual[t].noalias() -= dot(q, residual[t], &counter) * q;
      sq[t] = dot(residual[t], residual[t], &counter) / dof;
    }
  }
  out.inner_products = counter.count;
  return out;
}

SelectionResult select_random(std::span<const TripletId> candidates, const SelectionConfig& cfg) {
  check_batch(cfg.batch_size, candidates.size());
  std::vector<TripletId> pool(candidates.begin(), candidates.end());
  Rng rng(cfg.seed);
  SelectionResult out;
  out.strategy = Strategy::Random;
  // Partial Fisher-Yates: the first b slots end up a uniform sample.
  for (std::size_t s = 0; s < cfg.batch_size; ++s) {
    const std::size_t pick = s + static_cast<std::size_t>(rng.below(pool.size() - s));
    std::swap(pool[s], pool[pick]);
    out.chosen.push_back(pool[s]);
    out.step_scores.push_back(0.0);
  }
  return out;
}

double ordering_entropy(double margin) {
  // With a = |margin| and p = sigmoid(a): H = log1p(e^-a) + (1 - p) a.
  const double a = std::abs(margin);
  const double e = std::exp(-a);
  return std::log1p(e) + a * e / (1.0 + e);
}

SelectionResult select_uncertainty(std::span<const TripletId> candidates, const Vector& margins,
                                   const SelectionConfig& cfg) {
  const std::size_t m = candidates.size();
  if (static_cast<std::size_t>(margins.size()) != m) {
    throw Error(Errc::DimensionMismatch, "select_uncertainty: one margin per candidate required");
  }
  check_batch(cfg.batch_size, m);
  // Ordering entropy is strictly decreasing in |margin|, so ranking by
  // |margin| is the entropy ranking without rounding plateaus.
  auto pos = top_positions(m, cfg.batch_size, [&](std::size_t a, std::size_t c) {
    const double ma = std::abs(margins(static_cast<Eigen::Index>(a)));
    const double mc = std::abs(margins(static_cast<Eigen::Index>(c)));
    if (ma != mc) return ma < mc;
    return candidates[a] < candidates[c];
  });
  SelectionResult out;
  out.strategy = Strategy::Uncertainty;
  for (std::size_t p : pos) {
    out.chosen.push_back(candidates[p]);
    out.step_scores.push_back(ordering_entropy(margins(static_cast<Eigen::Index>(p))));
  }
  return out;
}

SelectionResult select_variance(const CenteredMargins& cm, const SelectionConfig& cfg) {
  check_batch(cfg.batch_size, cm.size());
  auto pos = top_positions(cm.size(), cfg.batch_size, [&](std::size_t a, std::size_t c) {
    const double va = cm.variances(static_cast<Eigen::Index>(a));
    const double vc = cm.variances(static_cast<Eigen::Index>(c));
    if (va != vc) return va > vc;
    return cm.candidate_ids[a] < cm.candidate_ids[c];
  });
  SelectionResult out;
  out.strategy = Strategy::Variance;
  for (std::size_t p : pos) {
    out.chosen.push_back(cm.candidate_ids[p]);
    out.step_scores.push_back(cm.variances(static_cast<Eigen::Index>(p)));
  }
  return out;
}

double batch_entropy(const CenteredMargins& batch, double jitter) {
  const std::size_t b = batch.size();
  if (b == 0) throw Error(Errc::InvalidArgument, "batch_entropy: empty batch");
  std::vector<std::size_t> all(b);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Matrix cov = batch.covariance_of(all);
  cov.diagonal().array() += jitter;
  const double log_2pie = std::log(2.0 * std::numbers::pi * std::numbers::e);
  return 0.5 * (static_cast<double>(b) * log_2pie + cholesky_logdet(cov));
}

}  // namespace batchal
