#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "osclab/errors.hpp"
#include "osclab/matrix.hpp"
#include "osclab/quantizer.hpp"

namespace osclab {

/// Counts oscillations per tracked weight. A step oscillates when the bin
/// index changed AND the change runs opposite to that weight's previous
/// change; direction is the sign of the index difference, so a multi-bin
/// jump counts as one change.
class OscillationTracker {
 public:
  explicit OscillationTracker(std::size_t size)
      : last_bin_(size), last_dir_(size, 0), counts_(size, 0) {}

  std::size_t size() const { return counts_.size(); }
  std::uint64_t samples_seen() const { return samples_seen_; }

  /// Feed one snapshot of bin indices. Returns how many weights
  /// oscillated on this step.
  std::size_t observe(std::span<const std::int64_t> bins) {
    if (bins.size() != counts_.size()) {
      throw ContractError("OscillationTracker::observe: got " + std::to_string(bins.size()) +
                          " bins, tracker holds " + std::to_string(counts_.size()));
    }
    std::size_t flipped = 0;
    if (samples_seen_ == 0) {
      for (std::size_t i = 0; i < bins.size(); ++i) last_bin_[i] = bins[i];
    } else {
      for (std::size_t i = 0; i < bins.size(); ++i) {
        if (bins[i] == last_bin_[i]) continue;
        const std::int8_t dir = bins[i] > last_bin_[i] ? 1 : -1;
        if (last_dir_[i] != 0 && dir != last_dir_[i]) {
          counts_[i] += 1;
          ++flipped;
        }
        last_dir_[i] = dir;
        last_bin_[i] = bins[i];
      }
    }
    samples_seen_ += 1;
    return flipped;
  }

  std::size_t observe(const std::vector<std::int64_t>& bins) {
    return observe(std::span<const std::int64_t>(bins));
  }

  const std::vector<std::uint64_t>& counts() const { return counts_; }

  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (std::uint64_t c : counts_) sum += c;
    return sum;
  }

 private:
  std::vector<std::int64_t> last_bin_;
  std::vector<std::int8_t> last_dir_;  // 0 until a weight's first change
  std::vector<std::uint64_t> counts_;
  std::uint64_t samples_seen_ = 0;
};

struct OscillationHistogram {
  std::map<std::uint64_t, std::size_t> buckets;  // count -> number of weights, counts > 0 only
  double fraction_oscillating = 0.0;             // share of weights with count > 0
};

inline OscillationHistogram oscillation_histogram(const OscillationTracker& tracker) {
  if (tracker.samples_seen() < 2) {
    throw ContractError("oscillation_histogram: needs at least 2 observations, saw " +
                        std::to_string(tracker.samples_seen()));
  }
  OscillationHistogram hist;
  std::size_t oscillating = 0;
  for (std::uint64_t c : tracker.counts()) {
    if (c == 0) continue;
    hist.buckets[c] += 1;
    ++oscillating;
  }
  hist.fraction_oscillating =
      tracker.size() == 0 ? 0.0
                          : static_cast<double>(oscillating) / static_cast<double>(tracker.size());
  return hist;
}

inline constexpr std::size_t kClusterBuckets = 64;

/// Where weights sit inside their quantization bins: the distribution of
/// w/s modulo 1 (0 and 1 are on levels, 0.5 is on a threshold) plus the
/// share of weights closer than s/10 to a threshold.
struct ClusterStats {
  std::array<double, kClusterBuckets> histogram{};  // mass per bucket, sums to 1
  double near_threshold_fraction = 0.0;             // min(d_low, d_up) < s/10
  double scale = 0.0;
};

inline ClusterStats cluster_stats(const Matrix& weights, double scale) {
  if (weights.size() == 0) throw ShapeError("cluster_stats: empty weight tensor");
  if (!(scale > 0.0)) throw NumericError("cluster_stats: scale must be positive");
  ClusterStats stats;
  stats.scale = scale;
  const double inv_mass = 1.0 / static_cast<double>(weights.size());
  std::size_t near = 0;
  for (double w : weights.values()) {
    const double pos = w / stats.scale - std::floor(w / stats.scale);  // in [0,1)
    auto bucket = static_cast<std::size_t>(pos * kClusterBuckets);
    if (bucket >= kClusterBuckets) bucket = kClusterBuckets - 1;
    stats.histogram[bucket] += inv_mass;
    const ThresholdDistances d = threshold_distances(w, stats.scale);
    if (std::min(d.d_low, d.d_up) < stats.scale / 10.0) ++near;
  }
  stats.near_threshold_fraction = static_cast<double>(near) * inv_mass;
  return stats;
}

inline ClusterStats cluster_stats(const Matrix& weights, const QuantSpec& spec) {
  if (weights.size() == 0) throw ShapeError("cluster_stats: empty weight tensor");
  return cluster_stats(weights, scale_factor(weights, spec));
}

// ---------------------------------------------------------------------------
// Welch's t-test. The two-sided p-value comes from the Student-t CDF via the
// regularized incomplete beta function, evaluated with a Lentz-style
// continued fraction to well past 1e-8.
// ---------------------------------------------------------------------------

namespace detail {

/// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_cont_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

/// Regularized incomplete beta I_x(a, b).
inline double reg_inc_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw NumericError("incomplete beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  // Use the half of the domain where the continued fraction converges fast.
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cont_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_cont_fraction(b, a, 1.0 - x) / b;
}

inline double sample_mean(std::span<const double> xs) {
  double sum = 0.0;
  for (double v : xs) sum += v;
  return sum / static_cast<double>(xs.size());
}

inline double sample_variance(std::span<const double> xs, double mean) {
  double sum = 0.0;
  for (double v : xs) sum += (v - mean) * (v - mean);
  return sum / static_cast<double>(xs.size() - 1);
}

}  // namespace detail

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Two-sided p-value of a Student-t statistic:
/// P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2).
inline double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw NumericError("student_t_two_sided_p: df must be positive");
  return detail::reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom and a two-sided p-value.
inline WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw NumericError("welch_t: both samples need at least 2 values (got " +
                       std::to_string(a.size()) + " and " + std::to_string(b.size()) + ")");
  }
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double mean_a = detail::sample_mean(a);
  const double mean_b = detail::sample_mean(b);
  const double var_a = detail::sample_variance(a, mean_a);
  const double var_b = detail::sample_variance(b, mean_b);
  if (var_a == 0.0 && var_b == 0.0) {
    throw NumericError("welch_t: both samples have zero variance");
  }
  const double sa = var_a / na;
  const double sb = var_b / nb;
  WelchResult r;
  r.t = (mean_a - mean_b) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

inline WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
  return welch_t(std::span<const double>(a), std::span<const double>(b));
}

}  // namespace osclab
