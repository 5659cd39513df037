#include "batchal/diagnostics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

#include "batchal/data.hpp"
#include "batchal/error.hpp"

namespace batchal {

namespace {

double acklam(double q) {
  static constexpr std::array<double, 6> a{-3.969683028665376e+01, 2.209460984245205e+02,
                                           -2.759285104469687e+02, 1.383577518672690e+02,
                                           -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr std::array<double, 5> b{-5.447609879822406e+01, 1.615858368580409e+02,
                                           -1.556989798598866e+02, 6.680131188771972e+01,
                                           -1.328068155288572e+01};
  static constexpr std::array<double, 6> c{-7.784894002430293e-03, -3.223964580411365e-01,
                                           -2.400758277161838e+00, -2.549732539343734e+00,
                                           4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr std::array<double, 4> d{7.784695709041462e-03, 3.224671290700398e-01,
                                           2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double low = 0.02425;
  constexpr double high = 1.0 - low;
  if (q < low) {
    const double s = std::sqrt(-2.0 * std::log(q));
    return (((((c[0] * s + c[1]) * s + c[2]) * s + c[3]) * s + c[4]) * s + c[5]) /
           ((((d[0] * s + d[1]) * s + d[2]) * s + d[3]) * s + 1.0);
  }
  if (q > high) {
    const double s = std::sqrt(-2.0 * std::log1p(-q));
    return -(((((c[0] * s + c[1]) * s + c[2]) * s + c[3]) * s + c[4]) * s + c[5]) /
           ((((d[0] * s + d[1]) * s + d[2]) * s + d[3]) * s + 1.0);
  }
  const double s = q - 0.5;
  const double r = s * s;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * s /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Linear-interpolation quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double inverse_normal_cdf(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw Error(Errc::DomainError, "inverse_normal_cdf: q must lie in (0, 1), got " + format_double(q));
  }
  if (q == 0.5) return 0.0;
  // Work on the lower tail and mirror, so the result is exactly odd.
  const bool upper = q > 0.5;
  const double p = upper ? 1.0 - q : q;
  double x = acklam(p);
  x -= (normal_cdf(x) - p) / normal_pdf(x);
  return upper ? -x : x;
}

QQData qq_fit(std::span<const double> samples) {
  const std::size_t k = samples.size();
  if (k < 2) throw Error(Errc::DegenerateVariance, "qq_fit: need at least two samples");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  QQData qq;
  double sum = 0.0;
  for (double v : sorted) sum += v;
  qq.mean = sum / static_cast<double>(k);
  double ss = 0.0;
  for (double v : sorted) ss += (v - qq.mean) * (v - qq.mean);
  const double var = ss / static_cast<double>(k - 1);
  if (!(var > 0.0)) throw Error(Errc::DegenerateVariance, "qq_fit: samples have zero variance");
  qq.stddev = std::sqrt(var);

  qq.points.reserve(k);
  for (std::size_t r = 1; r <= k; ++r) {
    const double q = (static_cast<double>(r) - 0.5) / static_cast<double>(k);
    qq.points.push_back({inverse_normal_cdf(q) * qq.stddev + qq.mean, sorted[r - 1]});
  }

  double mx = 0.0, my = 0.0;
  for (const QQPoint& p : qq.points) {
    mx += p.theoretical;
    my += p.observed;
  }
  mx /= static_cast<double>(k);
  my /= static_cast<double>(k);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const QQPoint& p : qq.points) {
    sxx += (p.theoretical - mx) * (p.theoretical - mx);
    sxy += (p.theoretical - mx) * (p.observed - my);
    syy += (p.observed - my) * (p.observed - my);
  }
  qq.slope = sxy / sxx;
  qq.intercept = my - qq.slope * mx;
  qq.r_squared = std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
  return qq;
}

std::vector<HistogramBin> histogram(std::span<const double> samples, double mean, double stddev) {
  if (samples.empty()) return {};
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double k = static_cast<double>(sorted.size());
  const double lo = sorted.front();
  const double hi = sorted.back();
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double width = 2.0 * iqr / std::cbrt(k);
  if (!(width > 0.0)) width = 3.49 * stddev / std::cbrt(k);
  std::size_t bins = 1;
  if (width > 0.0 && hi > lo) {
    bins = static_cast<std::size_t>(std::ceil((hi - lo) / width));
    bins = std::clamp<std::size_t>(bins, 1, 1000);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  width = span / static_cast<double>(bins);

  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lower = lo + static_cast<double>(b) * width;
    out[b].upper = b + 1 == bins ? lo + span : lo + static_cast<double>(b + 1) * width;
  }
  for (double v : sorted) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    out[std::min(b, bins - 1)].count++;
  }
  for (HistogramBin& bin : out) {
    bin.density = static_cast<double>(bin.count) / (k * width);
    const double centre = 0.5 * (bin.lower + bin.upper);
    bin.normal_density = stddev > 0.0 ? normal_pdf((centre - mean) / stddev) / stddev : 0.0;
  }
  return out;
}

void write_qq_csv(const QQData& qq, std::ostream& out) {
  out << "theoretical,observed\n";
  for (const QQPoint& p : qq.points) {
    out << format_double(p.theoretical) << ',' << format_double(p.observed) << '\n';
  }
}

void write_histogram_csv(std::span<const HistogramBin> bins, std::ostream& out) {
  out << "lower,upper,count,density,normal_density\n";
  for (const HistogramBin& b : bins) {
    out << format_double(b.lower) << ',' << format_double(b.upper) << ',' << b.count << ','
        << format_double(b.density) << ',' << format_double(b.normal_density) << '\n';
  }
}

}  // namespace batchal
