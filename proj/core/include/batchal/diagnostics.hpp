#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace batchal {

double normal_cdf(double x);
double normal_pdf(double x);

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Newton step against the erfc-based CDF. Throws DomainError outside
/// (0, 1).
double inverse_normal_cdf(double q);

struct QQPoint {
  double theoretical = 0.0;
  double observed = 0.0;
};

// Sorted samples against fitted-normal quantiles at Hazen positions
// (r - 0.5) / K, with the least-squares line observed ~ theoretical.
struct QQData {
  std::vector<QQPoint> points;
  double mean = 0.0;
  double stddev = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Throws DegenerateVariance when the samples have zero spread.
QQData qq_fit(std::span<const double> samples);

struct HistogramBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double density = 0.0;         // count / (K * width)
  double normal_density = 0.0;  // fitted N(mean, sd) at the bin centre
};

/// Freedman-Diaconis bins (Scott's rule when the IQR is zero).
std::vector<HistogramBin> histogram(std::span<const double> samples, double mean, double stddev);

void write_qq_csv(const QQData& qq, std::ostream& out);
void write_histogram_csv(std::span<const HistogramBin> bins, std::ostream& out);

}  // namespace batchal
