#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "npcf/errors.hpp"
#include "npcf/idm.hpp"
#include "npcf/io_util.hpp"
#include "npcf/random.hpp"

namespace npcf {

enum class VehicleClass { car, other };

struct TrajectoryFrame {
  double t = 0.0;      // [s]
  double x = 0.0;      // longitudinal arc length along the lane [m]
  double v = 0.0;      // [m/s]
  double a_lat = 0.0;  // [m/s^2]
  double a_lon = 0.0;  // [m/s^2]
  int lane = 0;
};

struct VehicleTrack {
  long id = 0;
  VehicleClass cls = VehicleClass::car;
  double length = 4.0;  // [m]
  std::vector<TrajectoryFrame> frames;
};

// Column layout of a delimited trajectory file. accel/class/length columns
// are optional; accelerations fall back to central finite differences of
// speed and length falls back to default_length.
struct LoadConfig {
  char delimiter = ',';
  std::string col_id = "id";
  std::string col_time = "time";
  std::string col_position = "position";
  std::string col_speed = "speed";
  std::string col_lane = "lane";
  std::string col_accel_lat = "accel_lat";
  std::string col_accel_lon = "accel_lon";
  std::string col_class = "class";
  std::string col_length = "length";
  double default_length = 4.0;
};

struct LoadReport {
  std::size_t rows_total = 0;
  std::size_t rows_malformed = 0;  // unparsable numeric cells; row skipped
  std::size_t vehicles = 0;
  std::vector<std::string> messages;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

// Central differences in the interior, one-sided at the ends.
inline std::vector<double> finite_diff(const std::vector<double>& y, double dt) {
  const std::size_t n = y.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  d[0] = (y[1] - y[0]) / dt;
  d[n - 1] = (y[n - 1] - y[n - 2]) / dt;
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (y[i + 1] - y[i - 1]) / (2.0 * dt);
  return d;
}

}  // namespace detail

// Reads a delimited trajectory file into per-vehicle, time-ordered tracks.
// Rows must keep the column count of the header (a short row is a schema
// error); rows with unparsable numeric cells are counted and skipped.
inline std::vector<VehicleTrack> load_trajectories(const std::filesystem::path& path,
                                                   const LoadConfig& cfg = {},
                                                   LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("input not found: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty file: " + path.string());
  const auto header = detail::split_line(line, cfg.delimiter);

  auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  auto require_col = [&](const std::string& name) -> std::size_t {
    auto idx = find_col(name);
    if (!idx) throw SchemaError("missing required column '" + name + "' in " + path.string());
    return *idx;
  };

  const std::size_t c_id = require_col(cfg.col_id);
  const std::size_t c_time = require_col(cfg.col_time);
  const std::size_t c_pos = require_col(cfg.col_position);
  const std::size_t c_speed = require_col(cfg.col_speed);
  const std::size_t c_lane = require_col(cfg.col_lane);
  const auto c_alat = find_col(cfg.col_accel_lat);
  const auto c_alon = find_col(cfg.col_accel_lon);
  const auto c_class = find_col(cfg.col_class);
  const auto c_length = find_col(cfg.col_length);

  LoadReport rep;
  std::map<long, VehicleTrack> tracks;  // ordered by id for determinism
  std::map<long, std::vector<std::array<double, 2>>> raw_accels;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    ++rep.rows_total;
    const auto cells = detail::split_line(line, cfg.delimiter);
    if (cells.size() != header.size()) {
      throw SchemaError("row " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " fields, expected " +
                        std::to_string(header.size()));
    }
    long id;
    double t, x, v;
    int lane;
    try {
      id = parse_long(cells[c_id]);
      t = parse_double(cells[c_time]);
      x = parse_double(cells[c_pos]);
      v = parse_double(cells[c_speed]);
      lane = static_cast<int>(parse_long(cells[c_lane]));
    } catch (const SchemaError&) {
      ++rep.rows_malformed;
      rep.messages.push_back("row " + std::to_string(line_no) + ": unparsable value, skipped");
      continue;
    }
    auto& tr = tracks[id];
    if (tr.frames.empty()) {
      tr.id = id;
      tr.length = cfg.default_length;
    }
    TrajectoryFrame fr{t, x, v, 0.0, 0.0, lane};
    double alat = std::numeric_limits<double>::quiet_NaN();
    double alon = std::numeric_limits<double>::quiet_NaN();
    if (c_alat && !detail::blank(cells[*c_alat])) {
      try { alat = parse_double(cells[*c_alat]); } catch (const SchemaError&) {}
    }
    if (c_alon && !detail::blank(cells[*c_alon])) {
      try { alon = parse_double(cells[*c_alon]); } catch (const SchemaError&) {}
    }
    if (c_class && !detail::blank(cells[*c_class])) {
      tr.cls = detail::lower(cells[*c_class]) == "car" ? VehicleClass::car
                                                       : VehicleClass::other;
    }
    if (c_length && !detail::blank(cells[*c_length])) {
      try { tr.length = parse_double(cells[*c_length]); } catch (const SchemaError&) {}
    }
    tr.frames.push_back(fr);
    raw_accels[id].push_back({alat, alon});
  }

  std::vector<VehicleTrack> out;
  out.reserve(tracks.size());
  for (auto& [id, tr] : tracks) {
    for (std::size_t i = 1; i < tr.frames.size(); ++i) {
      if (!(tr.frames[i].t > tr.frames[i - 1].t)) {
        throw DataError("non-monotone time for vehicle " + std::to_string(id) +
                        " at t=" + format_double(tr.frames[i].t));
      }
    }
    // fill accelerations: file values where present, finite differences of
    // speed otherwise
    const auto& raw = raw_accels[id];
    std::vector<double> speeds(tr.frames.size());
    for (std::size_t i = 0; i < tr.frames.size(); ++i) speeds[i] = tr.frames[i].v;
    const double dt = tr.frames.size() > 1 ? tr.frames[1].t - tr.frames[0].t : 1.0;
    const auto fd = detail::finite_diff(speeds, dt);
    for (std::size_t i = 0; i < tr.frames.size(); ++i) {
      tr.frames[i].a_lat = std::isnan(raw[i][0]) ? 0.0 : raw[i][0];
      tr.frames[i].a_lon = std::isnan(raw[i][1]) ? fd[i] : raw[i][1];
    }
    out.push_back(std::move(tr));
  }
  rep.vehicles = out.size();
  if (report) *report = rep;
  return out;
}

// One aligned frame of a car-following episode. Sign convention:
// dv = v - v_lead; s is the bumper-to-bumper gap.
struct EpisodeFrame {
  double t = 0.0;
  double v = 0.0;
  double v_lead = 0.0;
  double x = 0.0;
  double x_lead = 0.0;
  double s = 0.0;
  double dv = 0.0;
  double a = 0.0;
  double a_lat_lead = 0.0;
  double a_lon_lead = 0.0;
};

struct CFEpisode {
  long follower_id = 0;
  long leader_id = 0;
  double dt = 0.04;
  double leader_length = 4.0;
  std::vector<EpisodeFrame> frames;

  double duration() const {
    return frames.size() < 2 ? 0.0 : frames.back().t - frames.front().t;
  }

  KinematicState initial_state() const {
    return {frames.front().x, frames.front().v};
  }

  // Leader resampled for rollouts; rear-bumper position so spacing is a
  // plain difference.
  std::vector<LeaderFrame> leader_frames() const {
    std::vector<LeaderFrame> out;
    out.reserve(frames.size());
    for (const auto& f : frames)
      out.push_back({f.t, f.x_lead - leader_length, f.v_lead, f.a_lat_lead, f.a_lon_lead});
    return out;
  }
};

struct ExtractConfig {
  double min_duration = 10.0;     // [s]
  double trim_window = 2.0;       // [s] around a lane change of either vehicle
  double stop_speed_eps = 0.1;    // [m/s]
  double stop_min_duration = 3.0; // [s]
  bool cars_only = true;
};

struct ExtractStats {
  std::size_t vehicles = 0;
  std::size_t pairs_total = 0;           // follower/leader pairs ever adjacent
  std::size_t pairs_skipped_class = 0;   // rejected by the car-only rule
  std::size_t frames_paired = 0;         // same-lane adjacency frames seen
  std::size_t frames_trimmed_lane_change = 0;
  std::size_t frames_nonpositive_spacing = 0;
  std::size_t frames_removed_stopped = 0;
  std::size_t runs_dropped_short = 0;
  std::size_t episodes = 0;
};

namespace detail {

struct GridTrack {
  const VehicleTrack* track = nullptr;
  std::int64_t k0 = 0;  // grid index of frames[0]
  std::vector<double> lane_change_times;
};

inline std::int64_t grid_index(double t, double dt) {
  return static_cast<std::int64_t>(std::llround(t / dt));
}

}  // namespace detail

// Extracts clean same-lane leader/follower episodes. Frames near a lane
// change of either vehicle are trimmed, long joint stops are removed, the
// remainder is split into contiguous runs and short runs are dropped.
inline std::vector<CFEpisode> extract_cf_episodes(const std::vector<VehicleTrack>& tracks,
                                                  const ExtractConfig& cfg = {},
                                                  ExtractStats* stats = nullptr) {
  ExtractStats st;
  st.vehicles = tracks.size();
  std::vector<CFEpisode> out;
  // establish the common frame interval
  double dt = 0.0;
  for (const auto& tr : tracks) {
    if (tr.frames.size() >= 2) {
      dt = tr.frames[1].t - tr.frames[0].t;
      break;
    }
  }
  if (dt <= 0.0) {
    if (stats) *stats = st;
    return out;
  }
  for (const auto& tr : tracks) {
    for (std::size_t i = 1; i < tr.frames.size(); ++i) {
      const double gap = tr.frames[i].t - tr.frames[i - 1].t;
      if (std::abs(gap - dt) > 1e-6) {
        throw DataError("vehicle " + std::to_string(tr.id) +
                        " frame interval " + format_double(gap) +
                        " deviates from common dt " + format_double(dt));
      }
    }
  }

  std::vector<detail::GridTrack> grid;
  grid.reserve(tracks.size());
  for (const auto& tr : tracks) {
    if (tr.frames.empty()) continue;
    detail::GridTrack g;
    g.track = &tr;
    g.k0 = detail::grid_index(tr.frames.front().t, dt);
    for (std::size_t i = 1; i < tr.frames.size(); ++i)
      if (tr.frames[i].lane != tr.frames[i - 1].lane)
        g.lane_change_times.push_back(tr.frames[i].t);
    grid.push_back(std::move(g));
  }

  // time index -> (lane -> vehicles present, sorted by position)
  std::int64_t kmin = std::numeric_limits<std::int64_t>::max(), kmax = std::numeric_limits<std::int64_t>::min();
  for (const auto& g : grid) {
    kmin = std::min(kmin, g.k0);
    kmax = std::max(kmax, g.k0 + static_cast<std::int64_t>(g.track->frames.size()) - 1);
  }
  if (kmin > kmax) {
    if (stats) *stats = st;
    return out;
  }

  struct Present {
    std::size_t track_idx;
    std::size_t frame_idx;
    double x;
  };
  // follower grid-track index -> (leader grid-track index) per time step
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::int64_t>> pair_steps;

  std::vector<std::vector<Present>> lane_scratch;
  for (std::int64_t k = kmin; k <= kmax; ++k) {
    std::map<int, std::vector<Present>> by_lane;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      const auto& g = grid[gi];
      const std::int64_t fi = k - g.k0;
      if (fi < 0 || fi >= static_cast<std::int64_t>(g.track->frames.size())) continue;
      const auto& fr = g.track->frames[static_cast<std::size_t>(fi)];
      by_lane[fr.lane].push_back({gi, static_cast<std::size_t>(fi), fr.x});
    }
    for (auto& [lane, present] : by_lane) {
      std::sort(present.begin(), present.end(),
                [](const Present& a, const Present& b) { return a.x < b.x; });
      for (std::size_t i = 0; i + 1 < present.size(); ++i) {
        // immediate predecessor in the same lane
        pair_steps[{present[i].track_idx, present[i + 1].track_idx}].push_back(k);
      }
    }
  }

  for (const auto& [pair, steps] : pair_steps) {
    const auto& gf = grid[pair.first];
    const auto& gl = grid[pair.second];
    const VehicleTrack& fol = *gf.track;
    const VehicleTrack& led = *gl.track;
    ++st.pairs_total;
    st.frames_paired += steps.size();
    if (cfg.cars_only &&
        (fol.cls != VehicleClass::car || led.cls != VehicleClass::car)) {
      ++st.pairs_skipped_class;
      continue;
    }

    auto near_lane_change = [&](double t) {
      for (double tc : gf.lane_change_times)
        if (std::abs(t - tc) <= cfg.trim_window) return true;
      for (double tc : gl.lane_change_times)
        if (std::abs(t - tc) <= cfg.trim_window) return true;
      return false;
    };

    // filter steps: lane-change window, non-positive spacing
    std::vector<std::int64_t> kept;
    kept.reserve(steps.size());
    for (std::int64_t k : steps) {
      const auto& ff = fol.frames[static_cast<std::size_t>(k - gf.k0)];
      const auto& lf = led.frames[static_cast<std::size_t>(k - gl.k0)];
      if (near_lane_change(ff.t)) {
        ++st.frames_trimmed_lane_change;
        continue;
      }
      if (!(lf.x - ff.x - led.length > 0.0)) {
        ++st.frames_nonpositive_spacing;
        continue;
      }
      kept.push_back(k);
    }
    if (kept.empty()) continue;

    // joint-stop removal: runs where both vehicles sit below stop_speed_eps
    // for at least stop_min_duration
    std::vector<bool> stopped(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const auto& ff = fol.frames[static_cast<std::size_t>(kept[i] - gf.k0)];
      const auto& lf = led.frames[static_cast<std::size_t>(kept[i] - gl.k0)];
      stopped[i] = ff.v < cfg.stop_speed_eps && lf.v < cfg.stop_speed_eps;
    }
    std::vector<bool> removed(kept.size(), false);
    std::size_t i = 0;
    while (i < kept.size()) {
      if (!stopped[i]) { ++i; continue; }
      std::size_t j = i;
      while (j + 1 < kept.size() && stopped[j + 1] && kept[j + 1] == kept[j] + 1) ++j;
      const double span = static_cast<double>(kept[j] - kept[i]) * dt;
      if (span >= cfg.stop_min_duration) {
        for (std::size_t q = i; q <= j; ++q) removed[q] = true;
        st.frames_removed_stopped += j - i + 1;
      }
      i = j + 1;
    }

    // split the surviving indices into contiguous runs
    std::vector<std::vector<std::int64_t>> runs;
    for (std::size_t q = 0; q < kept.size(); ++q) {
      if (removed[q]) continue;
      if (runs.empty() || kept[q] != runs.back().back() + 1)
        runs.emplace_back();
      runs.back().push_back(kept[q]);
    }

    for (const auto& run : runs) {
      const double span = static_cast<double>(run.size() - 1) * dt;
      if (span < cfg.min_duration) {
        ++st.runs_dropped_short;
        continue;
      }
      CFEpisode ep;
      ep.follower_id = fol.id;
      ep.leader_id = led.id;
      ep.dt = dt;
      ep.leader_length = led.length;
      ep.frames.reserve(run.size());
      for (std::int64_t k : run) {
        const auto& ff = fol.frames[static_cast<std::size_t>(k - gf.k0)];
        const auto& lf = led.frames[static_cast<std::size_t>(k - gl.k0)];
        EpisodeFrame fr;
        fr.t = ff.t;
        fr.v = ff.v;
        fr.v_lead = lf.v;
        fr.x = ff.x;
        fr.x_lead = lf.x;
        fr.s = lf.x - ff.x - led.length;
        fr.dv = ff.v - lf.v;
        fr.a = ff.a_lon;
        fr.a_lat_lead = lf.a_lat;
        fr.a_lon_lead = lf.a_lon;
        ep.frames.push_back(fr);
      }
      out.push_back(std::move(ep));
    }
  }

  std::sort(out.begin(), out.end(), [](const CFEpisode& a, const CFEpisode& b) {
    if (a.follower_id != b.follower_id) return a.follower_id < b.follower_id;
    if (a.leader_id != b.leader_id) return a.leader_id < b.leader_id;
    return a.frames.front().t < b.frames.front().t;
  });
  st.episodes = out.size();
  if (stats) *stats = st;
  return out;
}

// Projects the stored frame at time t onto the 6-component condition vector.
inline TrafficCondition derive_condition(const CFEpisode& ep, double t) {
  if (ep.frames.empty()) throw std::out_of_range("derive_condition: empty episode");
  const double t0 = ep.frames.front().t;
  const double kf = (t - t0) / ep.dt;
  const auto k = static_cast<std::int64_t>(std::llround(kf));
  if (k < 0 || k >= static_cast<std::int64_t>(ep.frames.size()) ||
      std::abs(t - (t0 + static_cast<double>(k) * ep.dt)) > 1e-6) {
    throw std::out_of_range("derive_condition: t=" + format_double(t) +
                            " is not on the frame grid");
  }
  const auto& f = ep.frames[static_cast<std::size_t>(k)];
  return {f.dv, f.v, f.s, f.v_lead, f.a_lat_lead, f.a_lon_lead};
}

// Piecewise-constant parameter schedule: value at t is the last knot at or
// before t.
struct ThetaSchedule {
  std::vector<double> times;
  std::vector<IdmParams> values;

  // Small tolerance so knots that fall on a frame time within float error
  // switch exactly at that frame.
  const IdmParams& at(double t) const {
    if (times.empty()) throw std::invalid_argument("ThetaSchedule: empty schedule");
    std::size_t lo = 0;
    for (std::size_t i = 1; i < times.size() && times[i] <= t + 1e-9; ++i) lo = i;
    return values[lo];
  }
};

// Leader speed curve; linear interpolation between knots, clamped outside.
struct LeaderProfile {
  std::vector<double> times;
  std::vector<double> speeds;
  double x0 = 0.0;

  double speed_at(double t) const {
    if (times.empty()) throw std::invalid_argument("LeaderProfile: empty profile");
    if (t <= times.front()) return speeds.front();
    if (t >= times.back()) return speeds.back();
    std::size_t i = 1;
    while (times[i] < t) ++i;
    const double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
    return speeds[i - 1] + w * (speeds[i] - speeds[i - 1]);
  }
};

struct SyntheticConfig {
  double dt = 0.04;
  double duration = 60.0;        // [s]; non-positive gives an empty episode
  double initial_spacing = 20.0; // [m]
  double initial_speed = 0.0;    // follower speed at t=0 [m/s]
  double leader_length = 4.0;    // [m]
  double noise_std = 0.0;        // Gaussian noise on the stored spacing [m]
  std::uint64_t seed = 0;
  long follower_id = 1;
  long leader_id = 2;
};

// Ground-truth generator: leader positions come from trapezoid integration of
// the speed profile, follower accelerations from the IDM with the scheduled
// theta, follower states from the ballistic update. Noise affects only the
// stored spacing column.
inline CFEpisode generate_synthetic_episode(const ThetaSchedule& schedule,
                                            const LeaderProfile& profile,
                                            const SyntheticConfig& cfg) {
  CFEpisode ep;
  ep.follower_id = cfg.follower_id;
  ep.leader_id = cfg.leader_id;
  ep.dt = cfg.dt;
  ep.leader_length = cfg.leader_length;
  if (cfg.duration <= 0.0) return ep;
  for (const auto& th : schedule.values) {
    if (!th.positive())
      throw std::invalid_argument("generate_synthetic_episode: schedule has non-positive params");
  }
  for (double v : profile.speeds) {
    if (v < 0.0)
      throw std::invalid_argument("generate_synthetic_episode: leader speeds must be nonnegative");
  }

  const auto n_steps = static_cast<std::size_t>(std::llround(cfg.duration / cfg.dt));
  const std::size_t n = n_steps + 1;
  std::vector<double> v_lead(n), x_lead(n);
  for (std::size_t k = 0; k < n; ++k) v_lead[k] = profile.speed_at(static_cast<double>(k) * cfg.dt);
  x_lead[0] = profile.x0;
  for (std::size_t k = 1; k < n; ++k)
    x_lead[k] = x_lead[k - 1] + 0.5 * (v_lead[k - 1] + v_lead[k]) * cfg.dt;
  const auto a_lead = detail::finite_diff(v_lead, cfg.dt);

  Rng rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  KinematicState st{x_lead[0] - cfg.leader_length - cfg.initial_spacing, cfg.initial_speed};
  ep.frames.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const double s_true = x_lead[k] - cfg.leader_length - st.x;
    if (!(s_true > 0.0)) {
      throw GenerationError("follower reached the leader at step " + std::to_string(k) +
                            " (t=" + format_double(t) + "); soften the schedule");
    }
    const TrafficCondition cond{st.v - v_lead[k], st.v, s_true, v_lead[k], 0.0, a_lead[k]};
    const double a = idm_acceleration(schedule.at(t), cond);
    EpisodeFrame fr;
    fr.t = t;
    fr.v = st.v;
    fr.v_lead = v_lead[k];
    fr.x = st.x;
    fr.x_lead = x_lead[k];
    fr.s = s_true + (cfg.noise_std > 0.0 ? cfg.noise_std * noise(rng) : 0.0);
    fr.dv = cond.dv;
    fr.a = a;
    fr.a_lat_lead = 0.0;
    fr.a_lon_lead = a_lead[k];
    ep.frames.push_back(fr);
    if (k + 1 < n) st = ballistic_step(st, a, cfg.dt);
  }
  return ep;
}

// --- episode persistence ---------------------------------------------------
//
// Record layout: a header block of "key value" lines, a column-name line,
// then one row per frame. Doubles are written in shortest round-trip form,
// so the file is bit-stable and loads back exactly.

inline void write_episode(const CFEpisode& ep, std::ostream& os) {
  os << "npcf-episode 1\n";
  os << "follower_id " << ep.follower_id << "\n";
  os << "leader_id " << ep.leader_id << "\n";
  os << "dt " << format_double(ep.dt) << "\n";
  os << "leader_length " << format_double(ep.leader_length) << "\n";
  os << "frames " << ep.frames.size() << "\n";
  os << "t v v_lead x x_lead s dv a a_lat_lead a_lon_lead\n";
  for (const auto& f : ep.frames) {
    os << format_double(f.t) << ' ' << format_double(f.v) << ' '
       << format_double(f.v_lead) << ' ' << format_double(f.x) << ' '
       << format_double(f.x_lead) << ' ' << format_double(f.s) << ' '
       << format_double(f.dv) << ' ' << format_double(f.a) << ' '
       << format_double(f.a_lat_lead) << ' ' << format_double(f.a_lon_lead) << "\n";
  }
}

inline void write_episode(const CFEpisode& ep, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_episode(ep, os);
}

inline CFEpisode read_episode(std::istream& is) {
  auto next_line = [&](const char* what) {
    std::string line;
    if (!std::getline(is, line)) throw SchemaError(std::string("episode file truncated at ") + what);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  auto kv = [&](const char* key) {
    std::string line = next_line(key);
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.substr(0, sp) != key)
      throw SchemaError("episode file: expected '" + std::string(key) + "', got '" + line + "'");
    return line.substr(sp + 1);
  };
  if (next_line("magic") != "npcf-episode 1")
    throw SchemaError("not an npcf episode file (bad magic)");
  CFEpisode ep;
  ep.follower_id = parse_long(kv("follower_id"));
  ep.leader_id = parse_long(kv("leader_id"));
  ep.dt = parse_double(kv("dt"));
  ep.leader_length = parse_double(kv("leader_length"));
  const long n = parse_long(kv("frames"));
  next_line("column names");
  ep.frames.reserve(static_cast<std::size_t>(n));
  for (long k = 0; k < n; ++k) {
    std::istringstream row(next_line("frame row"));
    std::string cell;
    std::array<double, 10> vals{};
    for (double& v : vals) {
      if (!(row >> cell)) throw SchemaError("episode frame row too short");
      v = parse_double(cell);
    }
    ep.frames.push_back({vals[0], vals[1], vals[2], vals[3], vals[4], vals[5],
                         vals[6], vals[7], vals[8], vals[9]});
  }
  return ep;
}

inline CFEpisode read_episode(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("input not found: " + path.string());
  return read_episode(is);
}

// Converts an episode back into two raw tracks (same lane). Useful as the
// synthetic substitute for a recorded multi-vehicle file.
inline std::vector<VehicleTrack> episode_to_tracks(const CFEpisode& ep, int lane = 1) {
  VehicleTrack fol, led;
  fol.id = ep.follower_id;
  led.id = ep.leader_id;
  fol.cls = led.cls = VehicleClass::car;
  led.length = ep.leader_length;
  fol.length = ep.leader_length;
  for (const auto& f : ep.frames) {
    fol.frames.push_back({f.t, f.x, f.v, 0.0, f.a, lane});
    led.frames.push_back({f.t, f.x_lead, f.v_lead, f.a_lat_lead, f.a_lon_lead, lane});
  }
  return {std::move(fol), std::move(led)};
}

// Writes tracks in the delimited layout load_trajectories() reads.
inline void write_tracks_csv(const std::vector<VehicleTrack>& tracks,
                             const std::filesystem::path& path,
                             const LoadConfig& cfg = {}) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  const char d = cfg.delimiter;
  os << cfg.col_id << d << cfg.col_time << d << cfg.col_position << d
     << cfg.col_speed << d << cfg.col_lane << d << cfg.col_accel_lat << d
     << cfg.col_accel_lon << d << cfg.col_class << d << cfg.col_length << "\n";
  // interleave by time so the file looks like a recording
  std::vector<std::size_t> cursor(tracks.size(), 0);
  while (true) {
    std::size_t best = tracks.size();
    double best_t = 0.0;
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      if (cursor[i] >= tracks[i].frames.size()) continue;
      const double t = tracks[i].frames[cursor[i]].t;
      if (best == tracks.size() || t < best_t) {
        best = i;
        best_t = t;
      }
    }
    if (best == tracks.size()) break;
    const auto& tr = tracks[best];
    const auto& f = tr.frames[cursor[best]++];
    os << tr.id << d << format_double(f.t) << d << format_double(f.x) << d
       << format_double(f.v) << d << f.lane << d << format_double(f.a_lat) << d
       << format_double(f.a_lon) << d
       << (tr.cls == VehicleClass::car ? "car" : "other") << d
       << format_double(tr.length) << "\n";
  }
}

}  // namespace npcf
