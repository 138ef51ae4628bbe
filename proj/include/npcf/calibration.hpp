#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "npcf/errors.hpp"
#include "npcf/idm.hpp"
#include "npcf/io_util.hpp"
#include "npcf/random.hpp"
#include "npcf/trajectory.hpp"

namespace npcf {

// Measure of performance compared between observation and simulation.
enum class Mop { spacing, speed, accel };

inline const char* mop_name(Mop m) {
  switch (m) {
    case Mop::spacing: return "spacing";
    case Mop::speed: return "speed";
    case Mop::accel: return "accel";
  }
  return "?";
}

namespace detail {

inline std::vector<double> observed_series(const CFEpisode& ep, Mop mop,
                                           std::size_t first, std::size_t count) {
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) {
    const auto& f = ep.frames[i];
    out.push_back(mop == Mop::spacing ? f.s : mop == Mop::speed ? f.v : f.a);
  }
  return out;
}

inline std::vector<double> simulated_series(const RolloutResult& roll, Mop mop,
                                            std::size_t first, std::size_t count) {
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) {
    const auto& f = roll.frames[i];
    out.push_back(mop == Mop::spacing ? f.s : mop == Mop::speed ? f.v : f.a);
  }
  return out;
}

}  // namespace detail

// Full-episode closed-loop rollout under an acceleration callback.
template <class AccelFn>
RolloutResult rollout_episode(const CFEpisode& ep, AccelFn&& accel) {
  const auto leader = ep.leader_frames();
  return simulate_follower(std::span<const LeaderFrame>(leader), ep.initial_state(),
                           std::forward<AccelFn>(accel), ep.dt);
}

// Closed-loop RMSE of an episode simulated with fixed parameters. A rollout
// that collides gets the RMSE of the surviving prefix plus a large penalty
// proportional to the missing fraction, which keeps the objective finite and
// steers optimizers away.
inline double closed_loop_rmse_fixed(const CFEpisode& ep, const IdmParams& th,
                                     Mop mop = Mop::spacing) {
  auto roll = rollout_episode(ep, [&](double, const TrafficCondition& c) {
    return idm_acceleration(th, c);
  });
  const std::size_t n = ep.frames.size();
  if (!roll.collision) {
    auto obs = detail::observed_series(ep, mop, 0, n);
    auto sim = detail::simulated_series(roll, mop, 0, n);
    return gof_rmse(obs, sim);
  }
  const std::size_t m = roll.frames.size();
  double partial = 0.0;
  if (m > 0) {
    auto obs = detail::observed_series(ep, mop, 0, m);
    auto sim = detail::simulated_series(roll, mop, 0, m);
    partial = gof_rmse(obs, sim);
  }
  const double missing = static_cast<double>(n - m) / static_cast<double>(n);
  return partial + 1e3 * (1.0 + missing);
}

// --- fixed-parameter calibration (general calibration problem) -------------

struct FixedCalibConfig {
  int n_starts = 6;
  int max_evals_per_start = 2000;
  double ftol = 1e-10;
  std::uint64_t seed = 0;
  Mop mop = Mop::spacing;
};

struct FixedCalibResult {
  IdmParams theta;
  double rmse = 0.0;
  bool improved = true;  // false when no start beat the initial guess
  int evals = 0;
};

namespace detail {

// Nelder-Mead on a 5-dim box. Candidates are clipped into the bounds before
// evaluation, with a mild pull-back penalty on the excursion.
template <class Fn>
std::pair<std::array<double, 5>, double> nelder_mead_box(
    Fn&& f, const std::array<double, 5>& x0, const ParamBounds& bounds,
    int max_evals, double ftol, int* eval_counter) {
  constexpr std::size_t n = 5;
  const auto lb = bounds.lb.to_array(), ub = bounds.ub.to_array();

  auto eval = [&](const std::array<double, 5>& x) {
    std::array<double, 5> c = x;
    double excess = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ci = std::clamp(x[i], lb[i], ub[i]);
      excess += std::abs(x[i] - ci) / (ub[i] - lb[i]);
      c[i] = ci;
    }
    ++*eval_counter;
    return f(c) + 1e-2 * excess;
  };

  std::array<std::array<double, 5>, n + 1> sx;
  std::array<double, n + 1> sf;
  sx[0] = x0;
  sf[0] = eval(sx[0]);
  for (std::size_t i = 0; i < n; ++i) {
    sx[i + 1] = x0;
    const double step = 0.1 * (ub[i] - lb[i]);
    sx[i + 1][i] += (x0[i] + step <= ub[i]) ? step : -step;
    sf[i + 1] = eval(sx[i + 1]);
  }

  std::array<std::size_t, n + 1> order;
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sf[a] < sf[b]; });
  };

  while (*eval_counter < max_evals) {
    sort_simplex();
    const double fbest = sf[order[0]], fworst = sf[order[n]];
    if (fworst - fbest < ftol * (std::abs(fbest) + 1e-12)) break;

    std::array<double, 5> centroid{};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < 5; ++d) centroid[d] += sx[order[i]][d] / n;

    auto blend = [&](double coef) {
      std::array<double, 5> x{};
      for (std::size_t d = 0; d < 5; ++d)
        x[d] = centroid[d] + coef * (sx[order[n]][d] - centroid[d]);
      return x;
    };

    const auto xr = blend(-1.0);
    const double fr = eval(xr);
    if (fr < sf[order[0]]) {
      const auto xe = blend(-2.0);
      const double fe = eval(xe);
      if (fe < fr) { sx[order[n]] = xe; sf[order[n]] = fe; }
      else { sx[order[n]] = xr; sf[order[n]] = fr; }
    } else if (fr < sf[order[n - 1]]) {
      sx[order[n]] = xr;
      sf[order[n]] = fr;
    } else {
      const auto xc = blend(fr < sf[order[n]] ? -0.5 : 0.5);
      const double fc = eval(xc);
      if (fc < std::min(fr, sf[order[n]])) {
        sx[order[n]] = xc;
        sf[order[n]] = fc;
      } else {
        for (std::size_t i = 1; i <= n; ++i) {
          for (std::size_t d = 0; d < 5; ++d)
            sx[order[i]][d] = sx[order[0]][d] + 0.5 * (sx[order[i]][d] - sx[order[0]][d]);
          sf[order[i]] = eval(sx[order[i]]);
        }
      }
    }
  }
  sort_simplex();
  std::array<double, 5> best = sx[order[0]];
  const auto l = bounds.lb.to_array(), u = bounds.ub.to_array();
  for (std::size_t d = 0; d < 5; ++d) best[d] = std::clamp(best[d], l[d], u[d]);
  return {best, sf[order[0]]};
}

}  // namespace detail

// theta_fix = argmin closed-loop MoP RMSE over the whole episode, within
// bounds. Multi-start Nelder-Mead; deterministic for a given seed.
inline FixedCalibResult calibrate_fixed(const CFEpisode& ep, const ParamBounds& bounds,
                                        const FixedCalibConfig& cfg = {}) {
  if (ep.frames.size() < 50)
    throw std::invalid_argument("calibrate_fixed: episode must have at least 50 frames");
  if (!bounds.valid()) throw std::invalid_argument("calibrate_fixed: invalid bounds");

  auto objective = [&](const std::array<double, 5>& x) {
    return closed_loop_rmse_fixed(ep, IdmParams::from_array(x), cfg.mop);
  };

  const auto lb = bounds.lb.to_array(), ub = bounds.ub.to_array();
  std::array<double, 5> mid{};
  for (std::size_t d = 0; d < 5; ++d) mid[d] = 0.5 * (lb[d] + ub[d]);
  const double f_init = objective(mid);

  Rng rng(derive_seed(cfg.seed, 0x66697864ULL));  // "fixd"
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  FixedCalibResult best;
  best.rmse = std::numeric_limits<double>::infinity();
  int total_evals = 0;
  for (int s = 0; s < cfg.n_starts; ++s) {
    std::array<double, 5> x0 = mid;
    if (s > 0)
      for (std::size_t d = 0; d < 5; ++d) x0[d] = lb[d] + u01(rng) * (ub[d] - lb[d]);
    int evals = 0;
    auto [x, fx] = detail::nelder_mead_box(objective, x0, bounds,
                                           cfg.max_evals_per_start, cfg.ftol, &evals);
    total_evals += evals;
    if (fx < best.rmse) {
      best.rmse = fx;
      best.theta = IdmParams::from_array(x);
    }
  }
  best.evals = total_evals;
  best.improved = best.rmse < f_init;
  if (!best.improved && f_init < best.rmse) {
    best.theta = IdmParams::from_array(mid);
    best.rmse = f_init;
  }
  // report the clean RMSE of the winner (identical unless a penalty applied)
  best.rmse = closed_loop_rmse_fixed(ep, best.theta, cfg.mop);
  return best;
}

// --- per-step goodness of fit ----------------------------------------------

// Short forward rollout from the observed state at frame k: `stride` steps
// with constant theta, RMSE of simulated vs observed spacing over the
// reached frames. Truncated at the episode end (at least one step).
inline double per_step_gof(const IdmParams& th, const CFEpisode& ep,
                           std::size_t k, int stride, Mop mop = Mop::spacing) {
  if (k + 1 >= ep.frames.size())
    throw std::invalid_argument("per_step_gof: no forward frame after k");
  const auto steps = std::min<std::size_t>(static_cast<std::size_t>(stride),
                                           ep.frames.size() - 1 - k);
  KinematicState st{ep.frames[k].x, ep.frames[k].v};
  double acc = 0.0;
  for (std::size_t j = 0; j < steps; ++j) {
    const auto& lead = ep.frames[k + j];
    const double x_rear = lead.x_lead - ep.leader_length;
    const double s = x_rear - st.x;
    if (!(s > 0.0)) return 1e6;  // simulated collision inside the window
    const TrafficCondition cond{st.v - lead.v_lead, st.v, s, lead.v_lead,
                                lead.a_lat_lead, lead.a_lon_lead};
    st = ballistic_step(st, idm_acceleration(th, cond), ep.dt);
    const auto& next = ep.frames[k + j + 1];
    double sim, obs;
    switch (mop) {
      case Mop::spacing:
        sim = (next.x_lead - ep.leader_length) - st.x;
        obs = next.s;
        break;
      case Mop::speed:
        sim = st.v;
        obs = next.v;
        break;
      case Mop::accel:
      default: {
        const double s2 = (next.x_lead - ep.leader_length) - st.x;
        if (!(s2 > 0.0)) return 1e6;
        sim = idm_acceleration(th, TrafficCondition{st.v - next.v_lead, st.v, s2,
                                                    next.v_lead, next.a_lat_lead,
                                                    next.a_lon_lead});
        obs = next.a;
        break;
      }
    }
    const double r = sim - obs;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(steps));
}

inline double per_step_gof(const IdmParams& th, const CFEpisode& ep, double t,
                           int stride, Mop mop = Mop::spacing) {
  const double kf = (t - ep.frames.front().t) / ep.dt;
  const auto k = static_cast<std::int64_t>(std::llround(kf));
  if (k < 0 || std::abs(t - (ep.frames.front().t + static_cast<double>(k) * ep.dt)) > 1e-6)
    throw std::out_of_range("per_step_gof: t not on the frame grid");
  return per_step_gof(th, ep, static_cast<std::size_t>(k), stride, mop);
}

// --- time-varying calibration ----------------------------------------------

// Diagonal Gaussian over the 5 parameters.
struct GaussianParams {
  std::array<double, 5> mean{};
  std::array<double, 5> var{};
};

struct CalibConfig {
  int n_samples = 5000;
  int max_iters = 500;
  double eps = 0.01;
  int n_min = 100;
  double p_pct = 0.95;
  std::array<double, 5> sigma{};      // prior std devs (Sigma diagonal)
  std::array<double, 5> var_floor{};  // posterior variance floor
  int stride = 5;                     // frames per calibration step
  Mop mop = Mop::spacing;

  // sigma = 5% of the bound span, var floor = (0.1% of the span)^2
  static CalibConfig defaults(const ParamBounds& bounds) {
    CalibConfig c;
    const auto span = bounds.span();
    for (std::size_t i = 0; i < 5; ++i) {
      c.sigma[i] = 0.05 * span[i];
      c.var_floor[i] = std::pow(1e-3 * span[i], 2);
    }
    return c;
  }

  bool valid() const {
    if (!(n_samples > n_min && n_min > 0)) return false;
    if (!(p_pct > 0.0 && p_pct < 1.0)) return false;
    if (!(eps > 0.0) || max_iters < 1 || stride < 1) return false;
    for (double s : sigma)
      if (!(s > 0.0)) return false;
    return true;
  }
};

// Per-time-step posterior sequence for one driver.
struct ParamPosteriorSeries {
  long driver_id = 0;
  IdmParams theta_fix;
  std::vector<double> times;
  std::vector<GaussianParams> posteriors;
  std::size_t fallback_count = 0;
  std::uint64_t seed = 0;
  CalibConfig config;

  IdmParams mean_at_step(std::size_t j) const {
    return IdmParams::from_array(posteriors[j].mean);
  }
};

// Elementwise sample mean and unbiased variance, variance floored.
inline GaussianParams fit_gaussian(std::span<const std::array<double, 5>> samples,
                                   const std::array<double, 5>& var_floor) {
  if (samples.size() < 2)
    throw std::invalid_argument("fit_gaussian: need at least 2 samples");
  GaussianParams g;
  const double n = static_cast<double>(samples.size());
  for (const auto& s : samples)
    for (std::size_t d = 0; d < 5; ++d) g.mean[d] += s[d] / n;
  for (const auto& s : samples)
    for (std::size_t d = 0; d < 5; ++d) {
      const double r = s[d] - g.mean[d];
      g.var[d] += r * r / (n - 1.0);
    }
  for (std::size_t d = 0; d < 5; ++d) g.var[d] = std::max(g.var[d], var_floor[d]);
  return g;
}

// Instrumentation for invariants: prior chaining, acceptance soundness.
struct StepRecord {
  GaussianParams prior_in;
  GaussianParams finalized;
  std::vector<std::array<double, 5>> accepted;
  int iterations = 0;
  bool fell_back = false;
  bool early_break = false;
};

struct CalibTrace {
  std::vector<StepRecord> steps;
};

// Frame indices at which time-varying steps are calibrated: every `stride`
// frames, each step owning the window of frames it rolls across.
inline std::vector<std::size_t> calibration_step_indices(const CFEpisode& ep, int stride) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k + 1 < ep.frames.size(); k += static_cast<std::size_t>(stride))
    idx.push_back(k);
  return idx;
}

// Sequential ABC-style calibration of per-step parameter posteriors. The
// prior of the first step is N(theta_fix, Sigma^2); afterwards each finalized
// posterior becomes the next step's prior.
inline ParamPosteriorSeries calibrate_time_varying(
    const CFEpisode& ep, const CalibConfig& cfg, const ParamBounds& bounds,
    std::uint64_t seed, std::optional<IdmParams> theta_fix = std::nullopt,
    CalibTrace* trace = nullptr) {
  if (!cfg.valid()) throw std::invalid_argument("calibrate_time_varying: invalid config");
  if (!bounds.valid()) throw std::invalid_argument("calibrate_time_varying: invalid bounds");

  ParamPosteriorSeries series;
  series.driver_id = ep.follower_id;
  series.seed = seed;
  series.config = cfg;
  if (theta_fix) {
    series.theta_fix = *theta_fix;
  } else {
    FixedCalibConfig fc;
    fc.seed = derive_seed(seed, 0x74666978ULL);  // "tfix"
    fc.mop = cfg.mop;
    series.theta_fix = calibrate_fixed(ep, bounds, fc).theta;
  }

  const auto steps = calibration_step_indices(ep, cfg.stride);
  const auto lb = bounds.lb.to_array(), ub = bounds.ub.to_array();

  GaussianParams base;
  base.mean = series.theta_fix.to_array();
  for (std::size_t d = 0; d < 5; ++d) base.var[d] = cfg.sigma[d] * cfg.sigma[d];

  Rng rng(derive_seed(seed, 0x74766376ULL));  // "tvcv"
  std::normal_distribution<double> unit(0.0, 1.0);

  GaussianParams prior = base;
  for (std::size_t k : steps) {
    StepRecord rec;
    rec.prior_in = prior;

    std::vector<std::array<double, 5>> theta_star;  // accepted samples
    std::vector<std::array<double, 5>> draw(static_cast<std::size_t>(cfg.n_samples));
    std::vector<double> gof(draw.size());
    bool finalized = false;
    int iter = 0;

    for (iter = 0; iter < cfg.max_iters; ++iter) {
      // draw N samples, resampling out-of-bounds candidates (clip once the
      // attempt budget is spent)
      long attempts_left = 10L * cfg.n_samples;
      for (auto& smp : draw) {
        for (;;) {
          bool inside = true;
          --attempts_left;
          for (std::size_t d = 0; d < 5; ++d) {
            smp[d] = prior.mean[d] + std::sqrt(prior.var[d]) * unit(rng);
            if (smp[d] < lb[d] || smp[d] > ub[d]) inside = false;
          }
          if (inside || attempts_left <= 0) {
            if (!inside)
              for (std::size_t d = 0; d < 5; ++d) smp[d] = std::clamp(smp[d], lb[d], ub[d]);
            break;
          }
        }
      }
      std::size_t accepted_now = 0;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < draw.size(); ++j) {
        gof[j] = per_step_gof(IdmParams::from_array(draw[j]), ep, k, cfg.stride, cfg.mop);
        if (gof[j] < cfg.eps) {
          theta_star.push_back(draw[j]);
          ++accepted_now;
        }
        if (gof[j] < gof[best_j]) best_j = j;
      }

      if (theta_star.empty()) {
        // no acceptable sample anywhere yet: recenter the prior at the best
        // candidate of this draw
        prior.mean = draw[best_j];
        for (std::size_t d = 0; d < 5; ++d) prior.var[d] = cfg.sigma[d] * cfg.sigma[d];
      } else if (theta_star.size() > static_cast<std::size_t>(cfg.n_min)) {
        if (trace)
          rec.accepted.insert(rec.accepted.end(), theta_star.begin(), theta_star.end());
        prior = fit_gaussian(theta_star, cfg.var_floor);
        for (std::size_t d = 0; d < 5; ++d)
          prior.mean[d] = std::clamp(prior.mean[d], lb[d], ub[d]);
        theta_star.clear();
      }

      if (static_cast<double>(accepted_now) / static_cast<double>(cfg.n_samples) > cfg.p_pct) {
        finalized = true;
        rec.early_break = true;
        ++iter;
        break;
      }
    }

    if (!finalized) {
      if (theta_star.empty()) {
        prior = base;
        rec.fell_back = true;
        ++series.fallback_count;
      }
      // else: keep the current prior as the finalized posterior
    }
    if (trace && !theta_star.empty())
      rec.accepted.insert(rec.accepted.end(), theta_star.begin(), theta_star.end());

    series.times.push_back(ep.frames[k].t);
    series.posteriors.push_back(prior);
    rec.finalized = prior;
    rec.iterations = iter;
    if (trace) trace->steps.push_back(std::move(rec));
  }
  return series;
}

// Closed-loop RMSE using the per-step posterior means as a piecewise-constant
// parameter schedule over the calibration tiling.
inline double closed_loop_rmse_series(const CFEpisode& ep,
                                      const ParamPosteriorSeries& series,
                                      Mop mop = Mop::spacing) {
  if (series.posteriors.empty())
    throw std::invalid_argument("closed_loop_rmse_series: empty series");
  const int stride = series.config.stride;
  std::size_t frame = 0;
  auto roll = rollout_episode(ep, [&](double, const TrafficCondition& c) {
    const std::size_t j = std::min(frame / static_cast<std::size_t>(stride),
                                   series.posteriors.size() - 1);
    ++frame;
    return idm_acceleration(series.mean_at_step(j), c);
  });
  const std::size_t n = ep.frames.size();
  if (roll.collision) {
    const std::size_t m = roll.frames.size();
    double partial = 0.0;
    if (m > 0) {
      auto obs = detail::observed_series(ep, mop, 0, m);
      auto sim = detail::simulated_series(roll, mop, 0, m);
      partial = gof_rmse(obs, sim);
    }
    return partial + 1e3 * (1.0 + static_cast<double>(n - m) / static_cast<double>(n));
  }
  auto obs = detail::observed_series(ep, mop, 0, n);
  auto sim = detail::simulated_series(roll, mop, 0, n);
  return gof_rmse(obs, sim);
}

// --- posterior persistence ---------------------------------------------------
//
// Header block with theta_fix, config and seed, then one row per
// (time, parameter): "t param mean var".

inline void write_posterior_series(const ParamPosteriorSeries& s, std::ostream& os) {
  os << "npcf-posteriors 1\n";
  os << "driver_id " << s.driver_id << "\n";
  os << "seed " << s.seed << "\n";
  os << "theta_fix";
  for (double v : s.theta_fix.to_array()) os << ' ' << format_double(v);
  os << "\n";
  os << "n_samples " << s.config.n_samples << "\n";
  os << "max_iters " << s.config.max_iters << "\n";
  os << "eps " << format_double(s.config.eps) << "\n";
  os << "n_min " << s.config.n_min << "\n";
  os << "p_pct " << format_double(s.config.p_pct) << "\n";
  os << "stride " << s.config.stride << "\n";
  os << "mop " << mop_name(s.config.mop) << "\n";
  os << "sigma";
  for (double v : s.config.sigma) os << ' ' << format_double(v);
  os << "\n";
  os << "var_floor";
  for (double v : s.config.var_floor) os << ' ' << format_double(v);
  os << "\n";
  os << "fallbacks " << s.fallback_count << "\n";
  os << "steps " << s.times.size() << "\n";
  os << "t param mean var\n";
  for (std::size_t j = 0; j < s.times.size(); ++j) {
    for (std::size_t d = 0; d < 5; ++d) {
      os << format_double(s.times[j]) << ' ' << param_name(d) << ' '
         << format_double(s.posteriors[j].mean[d]) << ' '
         << format_double(s.posteriors[j].var[d]) << "\n";
    }
  }
}

inline void write_posterior_series(const ParamPosteriorSeries& s,
                                   const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_posterior_series(s, os);
}

inline ParamPosteriorSeries read_posterior_series(std::istream& is) {
  auto next_line = [&](const char* what) {
    std::string line;
    if (!std::getline(is, line))
      throw SchemaError(std::string("posterior file truncated at ") + what);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  auto kv = [&](const char* key) {
    std::string line = next_line(key);
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.substr(0, sp) != key)
      throw SchemaError("posterior file: expected '" + std::string(key) + "', got '" + line + "'");
    return line.substr(sp + 1);
  };
  auto five = [&](const std::string& payload) {
    std::istringstream ss(payload);
    std::array<double, 5> out{};
    std::string cell;
    for (double& v : out) {
      if (!(ss >> cell)) throw SchemaError("posterior file: expected 5 values");
      v = parse_double(cell);
    }
    return out;
  };

  if (next_line("magic") != "npcf-posteriors 1")
    throw SchemaError("not an npcf posterior file (bad magic)");
  ParamPosteriorSeries s;
  s.driver_id = parse_long(kv("driver_id"));
  s.seed = parse_u64(kv("seed"));
  s.theta_fix = IdmParams::from_array(five(kv("theta_fix")));
  s.config.n_samples = static_cast<int>(parse_long(kv("n_samples")));
  s.config.max_iters = static_cast<int>(parse_long(kv("max_iters")));
  s.config.eps = parse_double(kv("eps"));
  s.config.n_min = static_cast<int>(parse_long(kv("n_min")));
  s.config.p_pct = parse_double(kv("p_pct"));
  s.config.stride = static_cast<int>(parse_long(kv("stride")));
  const std::string mop = kv("mop");
  s.config.mop = mop == "speed" ? Mop::speed : mop == "accel" ? Mop::accel : Mop::spacing;
  s.config.sigma = five(kv("sigma"));
  s.config.var_floor = five(kv("var_floor"));
  s.fallback_count = static_cast<std::size_t>(parse_long(kv("fallbacks")));
  const long n = parse_long(kv("steps"));
  next_line("column names");
  s.times.resize(static_cast<std::size_t>(n));
  s.posteriors.resize(static_cast<std::size_t>(n));
  for (long j = 0; j < n; ++j) {
    for (std::size_t d = 0; d < 5; ++d) {
      std::istringstream row(next_line("posterior row"));
      std::string t_s, name, mean_s, var_s;
      if (!(row >> t_s >> name >> mean_s >> var_s))
        throw SchemaError("posterior row too short");
      s.times[static_cast<std::size_t>(j)] = parse_double(t_s);
      s.posteriors[static_cast<std::size_t>(j)].mean[d] = parse_double(mean_s);
      s.posteriors[static_cast<std::size_t>(j)].var[d] = parse_double(var_s);
    }
  }
  return s;
}

inline ParamPosteriorSeries read_posterior_series(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("input not found: " + path.string());
  return read_posterior_series(is);
}

}  // namespace npcf
