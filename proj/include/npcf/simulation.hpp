#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npcf/errors.hpp"
#include "npcf/idm.hpp"
#include "npcf/io_util.hpp"
#include "npcf/neural_process.hpp"
#include "npcf/random.hpp"
#include "npcf/stats.hpp"
#include "npcf/trajectory.hpp"

namespace npcf {

// Emergency rule: once the gap falls below response_time * v, apply a fixed
// braking deceleration.
struct SafetyConfig {
  double response_time = 1.5;  // [s]
  double brake_decel = 5.0;    // [m/s^2]
  bool enabled = true;
};

// Signed time to collision; no value when the closing speed is zero. A
// negative result means the gap is opening and collision is impossible.
inline std::optional<double> ttc(double s, double dv) {
  if (!(s > 0.0)) throw std::domain_error("ttc: spacing must be positive");
  if (dv == 0.0) return std::nullopt;
  return s / dv;
}

struct SimFrame {
  double t = 0.0;
  double x = 0.0;
  double v = 0.0;
  double a = 0.0;
  double s = 0.0;
  double dv = 0.0;
  bool override_engaged = false;
  double mu_y = 0.0;     // decoder mean before any override
  double sigma_y = 0.0;  // decoder spread
};

struct SimResult {
  std::vector<SimFrame> frames;
  bool collision = false;
  std::size_t collision_step = 0;
  std::vector<std::size_t> override_steps;
  double z_used = 0.0;

  std::vector<double> spacing_series() const {
    std::vector<double> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.s);
    return out;
  }
  std::vector<double> speed_series() const {
    std::vector<double> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.v);
    return out;
  }
  // Defined TTC values only; the undefined count is reported separately.
  std::vector<double> ttc_series(std::size_t* undefined_count = nullptr) const {
    std::vector<double> out;
    std::size_t undef = 0;
    for (const auto& f : frames) {
      const auto v = ttc(f.s, f.dv);
      if (v)
        out.push_back(*v);
      else
        ++undef;
    }
    if (undefined_count) *undefined_count = undef;
    return out;
  }
};

enum class AccelMode { mean, sample };

// Closed-loop rollout driven by the NP decoder for a fixed style vector.
// z is drawn once per rollout: from the supplied latent distribution when the
// style was observed, from a standard normal otherwise. The safety override
// replaces the decoder output with -brake_decel whenever s < response_time*v
// at the step start.
inline SimResult simulate_with_style(std::span<const LeaderFrame> leader,
                                     KinematicState init, const NPModel& model,
                                     const StyleVector& style,
                                     std::optional<LatentDist> z_source, ZMode zmode,
                                     AccelMode accel_mode, const SafetyConfig& safety,
                                     double dt, std::uint64_t seed) {
  SimResult out;
  if (leader.empty()) return out;
  if (!(leader.front().x_rear - init.x > 0.0))
    throw std::invalid_argument("simulate_with_style: initial spacing must be positive");

  Rng rng(derive_seed(seed, 0x73696d75ULL));  // "simu"
  std::normal_distribution<double> unit(0.0, 1.0);
  const LatentDist zd = z_source.value_or(LatentDist{0.0, 1.0});
  out.z_used = zmode == ZMode::sample ? zd.mu + zd.sigma * unit(rng) : zd.mu;

  KinematicState st = init;
  out.frames.reserve(leader.size());
  for (std::size_t k = 0; k < leader.size(); ++k) {
    const LeaderFrame& lf = leader[k];
    const double s = lf.x_rear - st.x;
    if (!(s > 0.0)) {
      out.collision = true;
      out.collision_step = k;
      break;
    }
    const TrafficCondition cond{st.v - lf.v, st.v, s, lf.v, lf.a_lat, lf.a_lon};
    const Prediction pred = decode(model, cond, style, out.z_used);
    SimFrame fr;
    fr.t = lf.t;
    fr.x = st.x;
    fr.v = st.v;
    fr.s = s;
    fr.dv = cond.dv;
    fr.mu_y = pred.mu;
    fr.sigma_y = pred.sigma;
    if (safety.enabled && s < safety.response_time * st.v) {
      fr.a = -safety.brake_decel;
      fr.override_engaged = true;
      out.override_steps.push_back(k);
    } else {
      fr.a = accel_mode == AccelMode::sample ? pred.mu + pred.sigma * unit(rng)
                                             : pred.mu;
    }
    out.frames.push_back(fr);
    if (k + 1 < leader.size()) st = ballistic_step(st, fr.a, dt);
  }
  return out;
}

// --- distribution summaries -----------------------------------------------------

struct Histogram {
  std::vector<double> edges;        // nbins + 1 ascending edges
  std::vector<std::size_t> counts;  // nbins
  std::size_t total = 0;
};

inline Histogram make_histogram(std::span<const double> values, double lo, double hi,
                                int nbins = 30) {
  if (nbins < 1) throw std::invalid_argument("make_histogram: nbins must be positive");
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(nbins) + 1);
  for (int i = 0; i <= nbins; ++i)
    h.edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / nbins;
  h.counts.assign(static_cast<std::size_t>(nbins), 0);
  for (double v : values) {
    if (v < lo || v > hi) continue;
    auto bin = static_cast<std::size_t>((v - lo) / (hi - lo) * nbins);
    if (bin >= h.counts.size()) bin = h.counts.size() - 1;  // right edge inclusive
    ++h.counts[bin];
    ++h.total;
  }
  return h;
}

// Total-variation distance between two histograms over identical edges:
// 0.5 * sum |p_i - q_i| of the normalized bin masses.
inline double total_variation(const Histogram& a, const Histogram& b) {
  if (a.counts.size() != b.counts.size())
    throw std::invalid_argument("total_variation: bin count mismatch");
  if (a.total == 0 || b.total == 0)
    throw std::invalid_argument("total_variation: empty histogram");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    const double p = static_cast<double>(a.counts[i]) / static_cast<double>(a.total);
    const double q = static_cast<double>(b.counts[i]) / static_cast<double>(b.total);
    acc += std::abs(p - q);
  }
  return 0.5 * acc;
}

struct SeriesSummary {
  SeriesStats stats;
  Histogram hist;
  std::optional<double> tv;  // distance to the reference, when one was given
};

struct MetricsReport {
  SeriesSummary spacing, speed, ttc;
  std::size_t ttc_undefined = 0;
  std::size_t ref_ttc_undefined = 0;
  bool has_reference = false;
};

namespace detail {

inline SeriesSummary summarize_series(const std::vector<double>& sim,
                                      const std::vector<double>* ref, int nbins) {
  SeriesSummary out;
  out.stats = series_stats(sim);
  double lo = out.stats.min, hi = out.stats.max;
  if (ref && !ref->empty()) {
    const auto rs = series_stats(*ref);
    lo = std::min(lo, rs.min);
    hi = std::max(hi, rs.max);
  }
  if (sim.empty()) {
    lo = 0.0;
    hi = 1.0;
  }
  out.hist = make_histogram(sim, lo, hi, nbins);
  if (ref && !ref->empty() && !sim.empty()) {
    const Histogram rh = make_histogram(*ref, lo, hi, nbins);
    out.tv = total_variation(out.hist, rh);
  }
  return out;
}

}  // namespace detail

// Per-series stats, histograms over bin edges shared with the reference, and
// total-variation distances when a ground-truth episode is supplied.
inline MetricsReport summarize(const SimResult& result, const CFEpisode* reference,
                               int nbins = 30) {
  MetricsReport rep;
  rep.has_reference = reference != nullptr;

  std::vector<double> ref_s, ref_v, ref_ttc;
  if (reference) {
    for (const auto& f : reference->frames) {
      ref_s.push_back(f.s);
      ref_v.push_back(f.v);
      if (f.s > 0.0) {
        const auto t = ttc(f.s, f.dv);
        if (t)
          ref_ttc.push_back(*t);
        else
          ++rep.ref_ttc_undefined;
      }
    }
  }
  const auto sim_ttc = result.ttc_series(&rep.ttc_undefined);
  rep.spacing = detail::summarize_series(result.spacing_series(),
                                         reference ? &ref_s : nullptr, nbins);
  rep.speed = detail::summarize_series(result.speed_series(),
                                       reference ? &ref_v : nullptr, nbins);
  rep.ttc = detail::summarize_series(sim_ttc, reference ? &ref_ttc : nullptr, nbins);
  return rep;
}

// --- persistence -----------------------------------------------------------------

inline void write_sim_frames(const SimResult& r, std::ostream& os) {
  os << "npcf-sim 1\n";
  os << "frames " << r.frames.size() << "\n";
  os << "collision " << (r.collision ? 1 : 0) << "\n";
  os << "collision_step " << r.collision_step << "\n";
  os << "z " << format_double(r.z_used) << "\n";
  os << "t x v a s dv override mu_y sigma_y\n";
  for (const auto& f : r.frames) {
    os << format_double(f.t) << ' ' << format_double(f.x) << ' '
       << format_double(f.v) << ' ' << format_double(f.a) << ' '
       << format_double(f.s) << ' ' << format_double(f.dv) << ' '
       << (f.override_engaged ? 1 : 0) << ' ' << format_double(f.mu_y) << ' '
       << format_double(f.sigma_y) << "\n";
  }
}

inline void write_sim_frames(const SimResult& r, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_sim_frames(r, os);
}

namespace detail {

inline void write_series_summary(const char* name, const SeriesSummary& s,
                                 std::ostream& os) {
  os << name << " n " << s.stats.n << "\n";
  os << name << " mean " << format_double(s.stats.mean) << "\n";
  os << name << " std " << format_double(s.stats.stddev) << "\n";
  os << name << " min " << format_double(s.stats.min) << "\n";
  os << name << " q1 " << format_double(s.stats.q1) << "\n";
  os << name << " median " << format_double(s.stats.median) << "\n";
  os << name << " q3 " << format_double(s.stats.q3) << "\n";
  os << name << " max " << format_double(s.stats.max) << "\n";
  if (s.tv) os << name << " tv_distance " << format_double(*s.tv) << "\n";
  os << name << " hist_edges";
  for (double e : s.hist.edges) os << ' ' << format_double(e);
  os << "\n" << name << " hist_counts";
  for (std::size_t c : s.hist.counts) os << ' ' << c;
  os << "\n";
}

}  // namespace detail

inline void write_metrics(const MetricsReport& rep, std::ostream& os) {
  os << "npcf-metrics 1\n";
  detail::write_series_summary("spacing", rep.spacing, os);
  detail::write_series_summary("speed", rep.speed, os);
  detail::write_series_summary("ttc", rep.ttc, os);
  os << "ttc undefined " << rep.ttc_undefined << "\n";
  if (rep.has_reference) os << "ttc ref_undefined " << rep.ref_ttc_undefined << "\n";
}

inline void write_metrics(const MetricsReport& rep, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_metrics(rep, os);
}

}  // namespace npcf
