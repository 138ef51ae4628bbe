#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace npcf {

// Traffic condition seen by the follower, in fixed component order:
// (dv, v, s, v_lead, a_lat_lead, a_lon_lead). dv = v_follower - v_leader.
struct TrafficCondition {
  double dv = 0.0;          // relative speed [m/s]
  double v = 0.0;           // follower speed [m/s]
  double s = 0.0;           // bumper-to-bumper gap [m]
  double v_lead = 0.0;      // leader speed [m/s]
  double a_lat_lead = 0.0;  // leader lateral acceleration [m/s^2]
  double a_lon_lead = 0.0;  // leader longitudinal acceleration [m/s^2]

  std::array<double, 6> to_array() const {
    return {dv, v, s, v_lead, a_lat_lead, a_lon_lead};
  }
};

// IDM parameter vector theta = (v0, T, s0, a_max, b). The exponent is fixed
// at 4.
struct IdmParams {
  double v0 = 15.0;    // desired speed [m/s]
  double T = 1.5;      // desired time headway [s]
  double s0 = 2.0;     // standstill gap [m]
  double a_max = 1.5;  // maximum acceleration [m/s^2]
  double b = 2.0;      // desired deceleration [m/s^2]

  static constexpr double delta = 4.0;

  std::array<double, 5> to_array() const { return {v0, T, s0, a_max, b}; }
  static IdmParams from_array(const std::array<double, 5>& a) {
    return {a[0], a[1], a[2], a[3], a[4]};
  }
  bool positive() const {
    return v0 > 0.0 && T > 0.0 && s0 > 0.0 && a_max > 0.0 && b > 0.0;
  }
};

inline const char* param_name(std::size_t i) {
  static constexpr const char* names[5] = {"v0", "T", "s0", "a_max", "b"};
  return names[i];
}

// Elementwise box constraints on IdmParams.
struct ParamBounds {
  IdmParams lb;
  IdmParams ub;

  // Covers urban driving; every entry is configurable.
  static ParamBounds defaults() {
    ParamBounds pb;
    pb.lb = IdmParams{1.0, 0.1, 0.1, 0.1, 0.1};
    pb.ub = IdmParams{40.0, 5.0, 10.0, 6.0, 6.0};
    return pb;
  }

  bool valid() const {
    const auto l = lb.to_array(), u = ub.to_array();
    for (std::size_t i = 0; i < 5; ++i)
      if (!(l[i] < u[i])) return false;
    return true;
  }

  std::array<double, 5> span() const {
    const auto l = lb.to_array(), u = ub.to_array();
    return {u[0] - l[0], u[1] - l[1], u[2] - l[2], u[3] - l[3], u[4] - l[4]};
  }

  bool contains(const IdmParams& p) const {
    const auto l = lb.to_array(), u = ub.to_array(), x = p.to_array();
    for (std::size_t i = 0; i < 5; ++i)
      if (x[i] < l[i] || x[i] > u[i]) return false;
    return true;
  }

  IdmParams clip(const IdmParams& p) const {
    const auto l = lb.to_array(), u = ub.to_array();
    auto x = p.to_array();
    for (std::size_t i = 0; i < 5; ++i) x[i] = std::clamp(x[i], l[i], u[i]);
    return IdmParams::from_array(x);
  }
};

// s*(v, dv) = s0 + max(0, v*T + v*dv / (2*sqrt(a_max*b)))
inline double desired_spacing(const IdmParams& th, double v, double dv) {
  const double dynamic = v * th.T + v * dv / (2.0 * std::sqrt(th.a_max * th.b));
  return th.s0 + std::max(0.0, dynamic);
}

// Optional clamp of the raw IDM output; off by default.
struct AccelClamp {
  bool enabled = false;
  double b_emergency = 9.0;  // [m/s^2]
};

// a = a_max * (1 - (v/v0)^4 - (s*/s)^2)
inline double idm_acceleration(const IdmParams& th, const TrafficCondition& c,
                               const AccelClamp& clamp = {}) {
  if (!(c.s > 0.0)) {
    throw std::domain_error("idm_acceleration: spacing must be positive, got " +
                            std::to_string(c.s));
  }
  const double ratio_v = c.v / th.v0;
  const double ratio_s = desired_spacing(th, c.v, c.dv) / c.s;
  double a = th.a_max *
             (1.0 - std::pow(ratio_v, IdmParams::delta) - ratio_s * ratio_s);
  if (clamp.enabled) a = std::clamp(a, -clamp.b_emergency, th.a_max);
  return a;
}

struct KinematicState {
  double x = 0.0;  // [m]
  double v = 0.0;  // [m/s]
};

// Ballistic update: v' = v + a*dt, x' = x + (v' + v)/2 * dt. Speed is clamped
// at zero; when the vehicle halts inside the step, position advances only to
// the analytic stop point.
inline KinematicState ballistic_step(KinematicState st, double a, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("ballistic_step: dt must be positive");
  const double v_next = st.v + a * dt;
  if (v_next < 0.0) {
    const double t_stop = (a < 0.0) ? -st.v / a : 0.0;
    st.x += 0.5 * st.v * t_stop;
    st.v = 0.0;
    return st;
  }
  st.x += 0.5 * (st.v + v_next) * dt;
  st.v = v_next;
  return st;
}

inline double gof_rmse(std::span<const double> obs, std::span<const double> sim) {
  if (obs.size() != sim.size())
    throw std::invalid_argument("gof_rmse: length mismatch (" +
                                std::to_string(obs.size()) + " vs " +
                                std::to_string(sim.size()) + ")");
  if (obs.empty()) throw std::invalid_argument("gof_rmse: empty series");
  double acc = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double d = obs[i] - sim[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(obs.size()));
}

// Leader kinematics resampled on the rollout grid. x_rear is the position of
// the leader's rear bumper, so spacing = x_rear - follower.x.
struct LeaderFrame {
  double t = 0.0;
  double x_rear = 0.0;
  double v = 0.0;
  double a_lat = 0.0;
  double a_lon = 0.0;
};

struct RolloutFrame {
  double t = 0.0;
  double x = 0.0;
  double v = 0.0;
  double a = 0.0;
  double s = 0.0;
  double dv = 0.0;
};

struct RolloutResult {
  std::vector<RolloutFrame> frames;
  bool collision = false;
  std::size_t collision_step = 0;  // leader-frame index where spacing hit zero
};

// Closed-loop rollout: at each leader frame the condition is built from the
// simulated follower state and the observed leader, the acceleration callback
// is queried, and the state advances by one ballistic step.
template <class AccelFn>
RolloutResult simulate_follower(std::span<const LeaderFrame> leader,
                                KinematicState init, AccelFn&& accel,
                                double dt) {
  RolloutResult out;
  if (leader.empty()) return out;
  if (!(leader.front().x_rear - init.x > 0.0))
    throw std::invalid_argument("simulate_follower: initial spacing must be positive");
  out.frames.reserve(leader.size());
  KinematicState st = init;
  for (std::size_t k = 0; k < leader.size(); ++k) {
    const LeaderFrame& lf = leader[k];
    const double s = lf.x_rear - st.x;
    if (!(s > 0.0)) {
      out.collision = true;
      out.collision_step = k;
      break;
    }
    const TrafficCondition cond{st.v - lf.v, st.v, s, lf.v, lf.a_lat, lf.a_lon};
    const double a = accel(lf.t, cond);
    out.frames.push_back({lf.t, st.x, st.v, a, s, cond.dv});
    if (k + 1 < leader.size()) st = ballistic_step(st, a, dt);
  }
  return out;
}

}  // namespace npcf
