#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ckmerge/errors.hpp"

namespace ckmerge {

/// Quartile summary of one score vector plus the derived selection threshold.
struct ImportanceStats {
  std::string scope;  // tensor name or "GLOBAL"
  double median = 0.0;
  double q1 = 0.0;  // lower quartile (25th percentile)
  double q3 = 0.0;  // upper quartile (75th percentile)
  double iqr = 0.0;
  double threshold = 0.0;
  std::uint64_t updated = 0;  // |{i : v_i > threshold}|
  std::uint64_t total = 0;
};

struct Quartiles {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

namespace detail {

// k-th smallest of buf (mutates buf). Expected O(N); values must equal the
// ones a full sort would place at k.
inline double order_stat(std::vector<double>& buf, std::size_t k) {
  std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k), buf.end());
  return buf[k];
}

// Median of the sorted range [base, base+len) by global order statistics.
inline double range_median(std::vector<double>& buf, std::size_t base, std::size_t len) {
  if (len % 2 == 1) return order_stat(buf, base + len / 2);
  const double lo = order_stat(buf, base + len / 2 - 1);
  const double hi = order_stat(buf, base + len / 2);
  return (lo + hi) / 2.0;
}

}  // namespace detail

/// Median and Moore–McCabe quartiles: q1/q3 are medians of the lower/upper
/// halves, excluding the middle element when the count is odd. For a single
/// element all three coincide.
inline Quartiles exact_quartiles(std::span<const double> values) {
  if (values.empty()) throw ValidationError("exact_quartiles: empty input");
  std::vector<double> buf(values.begin(), values.end());
  const std::size_t n = buf.size();
  Quartiles q;
  q.median = detail::range_median(buf, 0, n);
  const std::size_t half = n / 2;  // lower-half size for both parities
  if (half == 0) {
    q.q1 = q.q3 = q.median;
  } else {
    q.q1 = detail::range_median(buf, 0, half);
    q.q3 = detail::range_median(buf, n - half, half);
  }
  return q;
}

/// Threshold = median + lambda * IQR, all order statistics and arithmetic in
/// F64. `updated` counts entries strictly above the threshold.
inline ImportanceStats dynamic_threshold(std::span<const double> values, double lambda,
                                         std::string scope = {}) {
  if (values.empty()) throw ValidationError("dynamic_threshold: empty input");
  const Quartiles q = exact_quartiles(values);
  ImportanceStats stats;
  stats.scope = std::move(scope);
  stats.median = q.median;
  stats.q1 = q.q1;
  stats.q3 = q.q3;
  stats.iqr = q.q3 - q.q1;
  stats.threshold = q.median + lambda * stats.iqr;
  stats.total = values.size();
  for (double v : values)
    if (v > stats.threshold) ++stats.updated;
  return stats;
}

inline constexpr std::uint64_t kGlobalQuartileCap = std::uint64_t{1} << 31;

/// Quartiles over the concatenation of several score vectors; bit-identical
/// to exact_quartiles on the concatenated array. Refuses element counts past
/// the cap instead of approximating.
inline Quartiles global_quartiles(std::span<const std::vector<double>> parts,
                                  std::uint64_t cap = kGlobalQuartileCap) {
  std::uint64_t total = 0;
  for (const auto& part : parts) total += part.size();
  if (total == 0) throw ValidationError("global_quartiles: empty input");
  if (total > cap)
    throw ValidationError("global_quartiles: " + std::to_string(total) +
                          " elements exceed the exact-computation cap of " + std::to_string(cap));
  std::vector<double> all;
  all.reserve(static_cast<std::size_t>(total));
  for (const auto& part : parts) all.insert(all.end(), part.begin(), part.end());
  return exact_quartiles(all);
}

}  // namespace ckmerge
