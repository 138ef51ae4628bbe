#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace npcf {

// Linear-interpolation quantile on sorted data: h = (n-1)*q, interpolate
// between the bracketing order statistics.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile_sorted: empty data");
  if (sorted.size() == 1) return sorted[0];
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double w = h - static_cast<double>(lo);
  return sorted[lo] + w * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, q);
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean_of: empty data");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Population standard deviation; zero for a single value.
inline double pop_std(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("pop_std: empty data");
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

struct SeriesStats {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

inline SeriesStats series_stats(std::span<const double> values) {
  SeriesStats st;
  st.n = values.size();
  if (values.empty()) return st;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  st.mean = mean_of(values);
  st.stddev = pop_std(values);
  st.min = sorted.front();
  st.max = sorted.back();
  st.q1 = quantile_sorted(sorted, 0.25);
  st.median = quantile_sorted(sorted, 0.5);
  st.q3 = quantile_sorted(sorted, 0.75);
  return st;
}

}  // namespace npcf
