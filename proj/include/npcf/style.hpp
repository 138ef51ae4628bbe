#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <array>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "npcf/calibration.hpp"
#include "npcf/errors.hpp"
#include "npcf/io_util.hpp"
#include "npcf/neural_process.hpp"
#include "npcf/stats.hpp"

namespace npcf {

// Sign vector R of the aggressiveness sum over (v0, T, s0, a_max, b).
inline constexpr std::array<double, 5> kAggressivenessSigns{+1.0, -1.0, -1.0, +1.0, -1.0};

// theta'(t) = theta(t) - theta(t-1), split by sign; zeros are discarded.
// Values keep their sign here; scaling happens against pooled population
// constants.
inline std::pair<std::vector<double>, std::vector<double>> differential_sequences(
    std::span<const double> series) {
  std::vector<double> pos, neg;
  for (std::size_t i = 1; i < series.size(); ++i) {
    const double d = series[i] - series[i - 1];
    if (d > 0.0)
      pos.push_back(d);
    else if (d < 0.0)
      neg.push_back(d);
  }
  return {std::move(pos), std::move(neg)};
}

// Pooled min-max constants for scaling differential sub-sequences to [0, 1].
// Increase amplitudes are scaled as-is, decrease amplitudes by magnitude, so
// a larger decrease maps to a larger scaled value for every parameter.
struct DiffScaling {
  std::array<double, 5> pos_lo{}, pos_hi{};
  std::array<double, 5> neg_lo{}, neg_hi{};  // over |negative diffs|

  double scale_pos(std::size_t d, double v) const {
    if (pos_hi[d] - pos_lo[d] < 1e-15) return 0.5;
    return (v - pos_lo[d]) / (pos_hi[d] - pos_lo[d]);
  }
  double scale_neg(std::size_t d, double v) const {
    const double a = std::abs(v);
    if (neg_hi[d] - neg_lo[d] < 1e-15) return 0.5;
    return (a - neg_lo[d]) / (neg_hi[d] - neg_lo[d]);
  }
};

// Parameter series of a driver, bound-normalized to [0, 1] per parameter.
// Posterior means serve as theta(t).
inline std::array<std::vector<double>, 5> normalized_series(
    const ParamPosteriorSeries& s, const ParamBounds& bounds) {
  const auto lb = bounds.lb.to_array();
  const auto span = bounds.span();
  std::array<std::vector<double>, 5> out;
  for (std::size_t d = 0; d < 5; ++d) {
    out[d].reserve(s.posteriors.size());
    for (const auto& g : s.posteriors) out[d].push_back((g.mean[d] - lb[d]) / span[d]);
  }
  return out;
}

// Fits pooled scaling constants over the whole population, so H values stay
// comparable between drivers.
inline DiffScaling fit_diff_scaling(std::span<const ParamPosteriorSeries> population,
                                    const ParamBounds& bounds) {
  DiffScaling sc;
  std::array<bool, 5> pos_seen{}, neg_seen{};
  for (const auto& drv : population) {
    const auto series = normalized_series(drv, bounds);
    for (std::size_t d = 0; d < 5; ++d) {
      auto [pos, neg] = differential_sequences(series[d]);
      for (double v : pos) {
        if (!pos_seen[d] || v < sc.pos_lo[d]) sc.pos_lo[d] = v;
        if (!pos_seen[d] || v > sc.pos_hi[d]) sc.pos_hi[d] = v;
        pos_seen[d] = true;
      }
      for (double v : neg) {
        const double a = std::abs(v);
        if (!neg_seen[d] || a < sc.neg_lo[d]) sc.neg_lo[d] = a;
        if (!neg_seen[d] || a > sc.neg_hi[d]) sc.neg_hi[d] = a;
        neg_seen[d] = true;
      }
    }
  }
  return sc;
}

// H = sum_i R_i * (M + Q1 + Q3 + M(d+) + S(d+) - M(d-) - S(d-)). Statistical
// terms use the bound-normalized series; differential terms use pooled
// min-max scaling. Empty sub-sequences contribute zero.
inline double aggressiveness_index(const ParamPosteriorSeries& s,
                                   const ParamBounds& bounds,
                                   const DiffScaling& scaling) {
  if (s.posteriors.empty())
    throw std::invalid_argument("aggressiveness_index: empty series");
  const auto series = normalized_series(s, bounds);
  double H = 0.0;
  for (std::size_t d = 0; d < 5; ++d) {
    std::vector<double> sorted = series[d];
    std::sort(sorted.begin(), sorted.end());
    const double m = mean_of(series[d]);
    const double q1 = quantile_sorted(sorted, 0.25);
    const double q3 = quantile_sorted(sorted, 0.75);

    auto [pos, neg] = differential_sequences(series[d]);
    double m_pos = 0.0, s_pos = 0.0, m_neg = 0.0, s_neg = 0.0;
    if (!pos.empty()) {
      for (double& v : pos) v = scaling.scale_pos(d, v);
      m_pos = mean_of(pos);
      s_pos = pop_std(pos);
    }
    if (!neg.empty()) {
      for (double& v : neg) v = scaling.scale_neg(d, v);
      m_neg = mean_of(neg);
      s_neg = pop_std(neg);
    }
    H += kAggressivenessSigns[d] * (m + q1 + q3 + m_pos + s_pos - m_neg - s_neg);
  }
  return H;
}

// --- style dimensionality reduction and the index-to-style map ---------------

struct PcaResult {
  Eigen::Matrix<double, 5, 1> W;  // unit top principal direction
  Eigen::Matrix<double, 5, 1> u;  // empirical mean
  double explained_share = 0.0;
};

// Top principal component of the style cloud. Sign convention: the first
// component of W with magnitude above 1e-12 is positive.
inline PcaResult fit_pca(std::span<const StyleVector> styles) {
  if (styles.size() < 3) throw std::invalid_argument("fit_pca: need at least 3 styles");
  PcaResult out;
  out.u.setZero();
  for (const auto& s : styles) out.u += s.r;
  out.u /= static_cast<double>(styles.size());

  Eigen::Matrix<double, 5, 5> cov = Eigen::Matrix<double, 5, 5>::Zero();
  for (const auto& s : styles) {
    const Eigen::Matrix<double, 5, 1> d = s.r - out.u;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(styles.size()) - 1.0;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 5, 5>> solver(cov);
  const auto& vals = solver.eigenvalues();  // ascending
  const double total = vals.sum();
  if (!(vals[4] > 1e-12))
    throw std::invalid_argument("fit_pca: degenerate style cloud (zero covariance)");
  out.W = solver.eigenvectors().col(4);
  out.explained_share = vals[4] / total;
  for (int i = 0; i < 5; ++i) {
    if (std::abs(out.W[i]) > 1e-12) {
      if (out.W[i] < 0.0) out.W = -out.W;
      break;
    }
  }
  return out;
}

inline double reduce_style(const StyleVector& s, const PcaResult& pca) {
  return pca.W.dot(s.r - pca.u);
}

struct LinearFit {
  double alpha = 0.0;  // slope
  double beta = 0.0;   // intercept
  double pearson = 0.0;
};

// Least-squares affine fit r_tilde = alpha * H + beta. A constant r_tilde is
// allowed (slope 0, correlation reported as 0); constant H is an error.
inline LinearFit fit_style_map(std::span<const double> h,
                               std::span<const double> r_tilde) {
  if (h.size() != r_tilde.size())
    throw std::invalid_argument("fit_style_map: length mismatch");
  if (h.size() < 3) throw std::invalid_argument("fit_style_map: need at least 3 drivers");
  const double mh = mean_of(h), mr = mean_of(r_tilde);
  double shh = 0.0, shr = 0.0, srr = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    shh += (h[i] - mh) * (h[i] - mh);
    shr += (h[i] - mh) * (r_tilde[i] - mr);
    srr += (r_tilde[i] - mr) * (r_tilde[i] - mr);
  }
  if (!(shh > 0.0)) throw std::invalid_argument("fit_style_map: H has zero variance");
  LinearFit f;
  f.alpha = shr / shh;
  f.beta = mr - f.alpha * mh;
  f.pearson = srr > 0.0 ? shr / std::sqrt(shh * srr) : 0.0;
  return f;
}

// Full population fit: PCA, affine index map and diagnostics, plus the pooled
// differential scaling used for H itself.
struct StyleMapping {
  Eigen::Matrix<double, 5, 1> W;
  Eigen::Matrix<double, 5, 1> u;
  double alpha = 0.0;
  double beta = 0.0;
  double pearson = 0.0;
  double recon_rmse = 0.0;  // elementwise RMSE between r and the Eq-9 reconstruction
  DiffScaling scaling;
};

inline StyleVector style_from_index(double h, const StyleMapping& map) {
  StyleVector out;
  out.r = (map.alpha * h + map.beta) * map.W + map.u;
  return out;
}

inline StyleMapping fit_style_mapping(std::span<const StyleVector> styles,
                                      std::span<const double> h,
                                      const DiffScaling& scaling) {
  if (styles.size() != h.size())
    throw std::invalid_argument("fit_style_mapping: length mismatch");
  const PcaResult pca = fit_pca(styles);
  std::vector<double> r_tilde(styles.size());
  for (std::size_t i = 0; i < styles.size(); ++i) r_tilde[i] = reduce_style(styles[i], pca);
  const LinearFit fit = fit_style_map(h, r_tilde);

  StyleMapping map;
  map.W = pca.W;
  map.u = pca.u;
  map.alpha = fit.alpha;
  map.beta = fit.beta;
  map.pearson = fit.pearson;
  map.scaling = scaling;
  double sq = 0.0;
  for (std::size_t i = 0; i < styles.size(); ++i) {
    const StyleVector rec = style_from_index(h[i], map);
    sq += (styles[i].r - rec.r).squaredNorm();
  }
  map.recon_rmse = std::sqrt(sq / (5.0 * static_cast<double>(styles.size())));
  return map;
}

// --- persistence --------------------------------------------------------------

inline void write_style_mapping(const StyleMapping& m, std::ostream& os) {
  auto row5 = [&](const char* key, auto&& get) {
    os << key;
    for (std::size_t i = 0; i < 5; ++i) os << ' ' << format_double(get(i));
    os << "\n";
  };
  os << "npcf-style-mapping 1\n";
  row5("W", [&](std::size_t i) { return m.W[static_cast<int>(i)]; });
  row5("u", [&](std::size_t i) { return m.u[static_cast<int>(i)]; });
  os << "alpha " << format_double(m.alpha) << "\n";
  os << "beta " << format_double(m.beta) << "\n";
  os << "pearson " << format_double(m.pearson) << "\n";
  os << "recon_rmse " << format_double(m.recon_rmse) << "\n";
  row5("pos_lo", [&](std::size_t i) { return m.scaling.pos_lo[i]; });
  row5("pos_hi", [&](std::size_t i) { return m.scaling.pos_hi[i]; });
  row5("neg_lo", [&](std::size_t i) { return m.scaling.neg_lo[i]; });
  row5("neg_hi", [&](std::size_t i) { return m.scaling.neg_hi[i]; });
}

inline void write_style_mapping(const StyleMapping& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_style_mapping(m, os);
}

inline StyleMapping read_style_mapping(std::istream& is) {
  auto next_line = [&](const char* what) {
    std::string line;
    if (!std::getline(is, line))
      throw SchemaError(std::string("style mapping truncated at ") + what);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  auto kv = [&](const char* key) {
    std::string line = next_line(key);
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.substr(0, sp) != key)
      throw SchemaError("style mapping: expected '" + std::string(key) + "', got '" + line + "'");
    return line.substr(sp + 1);
  };
  auto five = [&](const std::string& payload, auto&& set) {
    std::istringstream ss(payload);
    std::string cell;
    for (std::size_t i = 0; i < 5; ++i) {
      if (!(ss >> cell)) throw SchemaError("style mapping: expected 5 values");
      set(i, parse_double(cell));
    }
  };
  if (next_line("magic") != "npcf-style-mapping 1")
    throw SchemaError("not an npcf style mapping file (bad magic)");
  StyleMapping m;
  five(kv("W"), [&](std::size_t i, double v) { m.W[static_cast<int>(i)] = v; });
  five(kv("u"), [&](std::size_t i, double v) { m.u[static_cast<int>(i)] = v; });
  m.alpha = parse_double(kv("alpha"));
  m.beta = parse_double(kv("beta"));
  m.pearson = parse_double(kv("pearson"));
  m.recon_rmse = parse_double(kv("recon_rmse"));
  five(kv("pos_lo"), [&](std::size_t i, double v) { m.scaling.pos_lo[i] = v; });
  five(kv("pos_hi"), [&](std::size_t i, double v) { m.scaling.pos_hi[i] = v; });
  five(kv("neg_lo"), [&](std::size_t i, double v) { m.scaling.neg_lo[i] = v; });
  five(kv("neg_hi"), [&](std::size_t i, double v) { m.scaling.neg_hi[i] = v; });
  return m;
}

inline StyleMapping read_style_mapping(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("input not found: " + path.string());
  return read_style_mapping(is);
}

}  // namespace npcf
