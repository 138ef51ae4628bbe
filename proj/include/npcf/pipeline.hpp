#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "npcf/calibration.hpp"
#include "npcf/errors.hpp"
#include "npcf/neural_process.hpp"
#include "npcf/simulation.hpp"
#include "npcf/style.hpp"
#include "npcf/trajectory.hpp"

namespace npcf {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Full pipeline configuration. Every default that the experiment setting
// names is kept at that value: N=5000, M=500, eps=0.01, n_min=100, p%=95,
// lr=0.001, epochs=200, dt=0.04.
struct PipelineConfig {
  std::string data_path;       // raw trajectory file (ingest)
  std::string out_dir = "out";
  std::uint64_t seed = 0;

  LoadConfig load;
  ExtractConfig extract;
  ParamBounds bounds = ParamBounds::defaults();

  // calibration
  int calib_n_samples = 5000;
  int calib_max_iters = 500;
  double calib_eps = 0.01;
  int calib_n_min = 100;
  double calib_p_pct = 0.95;
  int calib_stride = 5;
  double calib_sigma_scale = 0.05;  // prior std = scale * (ub - lb)
  Mop calib_mop = Mop::spacing;
  int fixed_starts = 6;
  int fixed_evals = 2000;
  int train_split = 200;

  TrainConfig train;
  SafetyConfig safety;

  double sim_dt = 0.04;
  int sim_nbins = 30;

  CalibConfig calib_config() const {
    CalibConfig c = CalibConfig::defaults(bounds);
    c.n_samples = calib_n_samples;
    c.max_iters = calib_max_iters;
    c.eps = calib_eps;
    c.n_min = calib_n_min;
    c.p_pct = calib_p_pct;
    c.stride = calib_stride;
    c.mop = calib_mop;
    const auto span = bounds.span();
    for (std::size_t i = 0; i < 5; ++i)
      c.sigma[i] = calib_sigma_scale * span[i];
    return c;
  }
};

namespace detail {

inline json params_to_json(const IdmParams& p) {
  return json::array({p.v0, p.T, p.s0, p.a_max, p.b});
}

inline IdmParams params_from_json(const json& j) {
  if (!j.is_array() || j.size() != 5)
    throw SchemaError("config: expected a 5-element parameter array");
  return IdmParams{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                   j[3].get<double>(), j[4].get<double>()};
}

}  // namespace detail

inline json pipeline_config_to_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["paths"] = {{"data", c.data_path}, {"out", c.out_dir}};
  j["load"] = {{"delimiter", std::string(1, c.load.delimiter)},
               {"columns",
                {{"id", c.load.col_id},
                 {"time", c.load.col_time},
                 {"position", c.load.col_position},
                 {"speed", c.load.col_speed},
                 {"lane", c.load.col_lane},
                 {"accel_lat", c.load.col_accel_lat},
                 {"accel_lon", c.load.col_accel_lon},
                 {"class", c.load.col_class},
                 {"length", c.load.col_length}}},
               {"default_length", c.load.default_length}};
  j["extract"] = {{"min_duration", c.extract.min_duration},
                  {"trim_window", c.extract.trim_window},
                  {"stop_speed_eps", c.extract.stop_speed_eps},
                  {"stop_min_duration", c.extract.stop_min_duration},
                  {"cars_only", c.extract.cars_only}};
  j["bounds"] = {{"lb", detail::params_to_json(c.bounds.lb)},
                 {"ub", detail::params_to_json(c.bounds.ub)}};
  j["calib"] = {{"n_samples", c.calib_n_samples},
                {"max_iters", c.calib_max_iters},
                {"eps", c.calib_eps},
                {"n_min", c.calib_n_min},
                {"p_pct", c.calib_p_pct},
                {"stride", c.calib_stride},
                {"sigma_scale", c.calib_sigma_scale},
                {"mop", mop_name(c.calib_mop)},
                {"fixed_starts", c.fixed_starts},
                {"fixed_evals", c.fixed_evals},
                {"train_split", c.train_split}};
  j["train"] = {{"lr", c.train.lr},
                {"decay_factor", c.train.decay_factor},
                {"decay_every", c.train.decay_every},
                {"epochs", c.train.epochs},
                {"ctx_min", c.train.ctx_min},
                {"ctx_max", c.train.ctx_max},
                {"extra_min", c.train.extra_min},
                {"extra_max", c.train.extra_max},
                {"activation", activation_name(c.train.act)},
                {"lb_a", c.train.lb_a},
                {"ub_a", c.train.ub_a},
                {"sigma_floor", c.train.sigma_floor}};
  j["safety"] = {{"response_time", c.safety.response_time},
                 {"brake_decel", c.safety.brake_decel},
                 {"enabled", c.safety.enabled}};
  j["sim"] = {{"dt", c.sim_dt}, {"nbins", c.sim_nbins}};
  return j;
}

inline PipelineConfig pipeline_config_from_json(const json& in) {
  // accept either a bare config or a config echo ({"config": ..., "args": ...})
  const json& j = in.contains("config") ? in.at("config") : in;
  PipelineConfig c;
  auto get = [&](const json& o, const char* key, auto fallback) {
    using T = decltype(fallback);
    return o.contains(key) ? o.at(key).get<T>() : fallback;
  };
  c.seed = get(j, "seed", static_cast<std::uint64_t>(0));
  if (j.contains("paths")) {
    c.data_path = get(j.at("paths"), "data", std::string());
    c.out_dir = get(j.at("paths"), "out", std::string("out"));
  }
  if (j.contains("load")) {
    const auto& l = j.at("load");
    const auto delim = get(l, "delimiter", std::string(","));
    if (!delim.empty()) c.load.delimiter = delim[0];
    c.load.default_length = get(l, "default_length", 4.0);
    if (l.contains("columns")) {
      const auto& col = l.at("columns");
      c.load.col_id = get(col, "id", c.load.col_id);
      c.load.col_time = get(col, "time", c.load.col_time);
      c.load.col_position = get(col, "position", c.load.col_position);
      c.load.col_speed = get(col, "speed", c.load.col_speed);
      c.load.col_lane = get(col, "lane", c.load.col_lane);
      c.load.col_accel_lat = get(col, "accel_lat", c.load.col_accel_lat);
      c.load.col_accel_lon = get(col, "accel_lon", c.load.col_accel_lon);
      c.load.col_class = get(col, "class", c.load.col_class);
      c.load.col_length = get(col, "length", c.load.col_length);
    }
  }
  if (j.contains("extract")) {
    const auto& e = j.at("extract");
    c.extract.min_duration = get(e, "min_duration", c.extract.min_duration);
    c.extract.trim_window = get(e, "trim_window", c.extract.trim_window);
    c.extract.stop_speed_eps = get(e, "stop_speed_eps", c.extract.stop_speed_eps);
    c.extract.stop_min_duration = get(e, "stop_min_duration", c.extract.stop_min_duration);
    c.extract.cars_only = get(e, "cars_only", c.extract.cars_only);
  }
  if (j.contains("bounds")) {
    c.bounds.lb = detail::params_from_json(j.at("bounds").at("lb"));
    c.bounds.ub = detail::params_from_json(j.at("bounds").at("ub"));
    if (!c.bounds.valid()) throw SchemaError("config: bounds lb must be below ub");
  }
  if (j.contains("calib")) {
    const auto& k = j.at("calib");
    c.calib_n_samples = get(k, "n_samples", c.calib_n_samples);
    c.calib_max_iters = get(k, "max_iters", c.calib_max_iters);
    c.calib_eps = get(k, "eps", c.calib_eps);
    c.calib_n_min = get(k, "n_min", c.calib_n_min);
    c.calib_p_pct = get(k, "p_pct", c.calib_p_pct);
    c.calib_stride = get(k, "stride", c.calib_stride);
    c.calib_sigma_scale = get(k, "sigma_scale", c.calib_sigma_scale);
    const auto mop = get(k, "mop", std::string("spacing"));
    c.calib_mop = mop == "speed" ? Mop::speed : mop == "accel" ? Mop::accel : Mop::spacing;
    c.fixed_starts = get(k, "fixed_starts", c.fixed_starts);
    c.fixed_evals = get(k, "fixed_evals", c.fixed_evals);
    c.train_split = get(k, "train_split", c.train_split);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.lr = get(t, "lr", c.train.lr);
    c.train.decay_factor = get(t, "decay_factor", c.train.decay_factor);
    c.train.decay_every = get(t, "decay_every", c.train.decay_every);
    c.train.epochs = get(t, "epochs", c.train.epochs);
    c.train.ctx_min = get(t, "ctx_min", c.train.ctx_min);
    c.train.ctx_max = get(t, "ctx_max", c.train.ctx_max);
    c.train.extra_min = get(t, "extra_min", c.train.extra_min);
    c.train.extra_max = get(t, "extra_max", c.train.extra_max);
    const auto act = get(t, "activation", std::string("softplus"));
    c.train.act = act == "tanh"   ? Activation::tanh_fn
                  : act == "relu" ? Activation::relu
                                  : Activation::softplus;
    c.train.lb_a = get(t, "lb_a", c.train.lb_a);
    c.train.ub_a = get(t, "ub_a", c.train.ub_a);
    c.train.sigma_floor = get(t, "sigma_floor", c.train.sigma_floor);
  }
  if (j.contains("safety")) {
    const auto& s = j.at("safety");
    c.safety.response_time = get(s, "response_time", c.safety.response_time);
    c.safety.brake_decel = get(s, "brake_decel", c.safety.brake_decel);
    c.safety.enabled = get(s, "enabled", c.safety.enabled);
  }
  if (j.contains("sim")) {
    c.sim_dt = get(j.at("sim"), "dt", c.sim_dt);
    c.sim_nbins = get(j.at("sim"), "nbins", c.sim_nbins);
  }
  return c;
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("config not found: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw SchemaError("config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

// Environment overrides apply to paths only.
inline void apply_env_overrides(PipelineConfig& c) {
  if (const char* v = std::getenv("NPCF_DATA")) c.data_path = v;
  if (const char* v = std::getenv("NPCF_OUT")) c.out_dir = v;
}

// Every command persists the fully resolved configuration (plus its own
// arguments) next to its outputs; re-running from that file reproduces the
// outputs byte-for-byte in deterministic modes.
inline void write_config_echo(const PipelineConfig& c, const std::string& command,
                              const json& args, const fs::path& out_dir) {
  json echo;
  echo["command"] = command;
  echo["args"] = args;
  echo["config"] = pipeline_config_to_json(c);
  std::ofstream os(out_dir / "config_echo.json");
  if (!os) throw DataError("cannot write config echo in " + out_dir.string());
  os << echo.dump(2) << "\n";
}

// --- episode store ------------------------------------------------------------

inline std::string episode_filename(const CFEpisode& ep) {
  return "episode_" + std::to_string(ep.follower_id) + "_" +
         std::to_string(ep.leader_id) + "_" +
         std::to_string(static_cast<long long>(std::llround(ep.frames.front().t * 1000.0))) +
         ".episode";
}

inline std::vector<fs::path> list_store(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> files;
  if (!fs::exists(dir)) throw DataError("store not found: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ext)
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<CFEpisode> read_episode_store(const fs::path& dir) {
  std::vector<CFEpisode> out;
  for (const auto& p : list_store(dir, ".episode")) out.push_back(read_episode(p));
  return out;
}

// Longest episode per follower; drivers are calibrated on it.
inline std::map<long, CFEpisode> pick_driver_episodes(std::vector<CFEpisode> eps) {
  std::map<long, CFEpisode> by_driver;
  for (auto& ep : eps) {
    auto it = by_driver.find(ep.follower_id);
    if (it == by_driver.end() || ep.frames.size() > it->second.frames.size())
      by_driver[ep.follower_id] = std::move(ep);
  }
  return by_driver;
}

// Training points of one calibrated driver: observed conditions, IDM
// accelerations evaluated at the per-window posterior means.
inline DriverPoints tv_idm_points(const CFEpisode& ep, const ParamPosteriorSeries& series) {
  DriverPoints out;
  out.driver_id = ep.follower_id;
  const auto stride = static_cast<std::size_t>(series.config.stride);
  out.points.reserve(ep.frames.size());
  for (std::size_t i = 0; i < ep.frames.size(); ++i) {
    const std::size_t w = std::min(i / stride, series.posteriors.size() - 1);
    const TrafficCondition x{ep.frames[i].dv, ep.frames[i].v, ep.frames[i].s,
                             ep.frames[i].v_lead, ep.frames[i].a_lat_lead,
                             ep.frames[i].a_lon_lead};
    out.points.push_back({x, idm_acceleration(series.mean_at_step(w), x)});
  }
  return out;
}

// --- command bodies -------------------------------------------------------------

struct IngestResult {
  LoadReport load_report;
  ExtractStats stats;
  std::size_t episodes_written = 0;
};

inline IngestResult run_ingest(const PipelineConfig& cfg) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "episodes");
  IngestResult res;
  auto tracks = load_trajectories(cfg.data_path, cfg.load, &res.load_report);
  auto episodes = extract_cf_episodes(tracks, cfg.extract, &res.stats);
  for (const auto& ep : episodes) write_episode(ep, out / "episodes" / episode_filename(ep));
  res.episodes_written = episodes.size();

  std::ofstream rep(out / "ingest_report.txt");
  rep << "npcf-ingest-report 1\n";
  rep << "rows_total " << res.load_report.rows_total << "\n";
  rep << "rows_malformed " << res.load_report.rows_malformed << "\n";
  rep << "vehicles " << res.stats.vehicles << "\n";
  rep << "pairs_total " << res.stats.pairs_total << "\n";
  rep << "pairs_skipped_class " << res.stats.pairs_skipped_class << "\n";
  rep << "frames_paired " << res.stats.frames_paired << "\n";
  rep << "frames_trimmed_lane_change " << res.stats.frames_trimmed_lane_change << "\n";
  rep << "frames_nonpositive_spacing " << res.stats.frames_nonpositive_spacing << "\n";
  rep << "frames_removed_stopped " << res.stats.frames_removed_stopped << "\n";
  rep << "runs_dropped_short " << res.stats.runs_dropped_short << "\n";
  rep << "episodes " << res.stats.episodes << "\n";
  return res;
}

struct CalibrateSummary {
  std::size_t drivers_calibrated = 0;
  std::size_t drivers_failed = 0;
  std::size_t drivers_reserved = 0;
};

inline CalibrateSummary run_calibrate(const PipelineConfig& cfg, const fs::path& episode_dir,
                                      std::ostream& log) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "posteriors");
  auto by_driver = pick_driver_episodes(read_episode_store(episode_dir));

  CalibrateSummary sum;
  const CalibConfig ccfg = cfg.calib_config();
  std::ofstream table(out / "rmse_table.txt");
  table << "driver frames fixed_rmse tv_rmse fallbacks\n";
  std::ofstream reserved(out / "reserved_drivers.txt");

  std::size_t index = 0;
  for (const auto& [driver, ep] : by_driver) {
    if (static_cast<int>(index) >= cfg.train_split) {
      reserved << driver << "\n";
      ++sum.drivers_reserved;
      ++index;
      continue;
    }
    ++index;
    try {
      FixedCalibConfig fcfg;
      fcfg.n_starts = cfg.fixed_starts;
      fcfg.max_evals_per_start = cfg.fixed_evals;
      fcfg.seed = derive_seed(cfg.seed, 0x66697863ULL, static_cast<std::uint64_t>(driver));
      fcfg.mop = cfg.calib_mop;
      const auto fixed = calibrate_fixed(ep, cfg.bounds, fcfg);
      auto series = calibrate_time_varying(
          ep, ccfg, cfg.bounds,
          derive_seed(cfg.seed, 0x74766361ULL, static_cast<std::uint64_t>(driver)),
          fixed.theta);
      const double tv_rmse = closed_loop_rmse_series(ep, series, cfg.calib_mop);
      write_posterior_series(series, out / "posteriors" /
                                         ("driver_" + std::to_string(driver) + ".posteriors"));
      table << driver << ' ' << ep.frames.size() << ' ' << format_double(fixed.rmse)
            << ' ' << format_double(tv_rmse) << ' ' << series.fallback_count << "\n";
      ++sum.drivers_calibrated;
    } catch (const std::exception& e) {
      log << "driver " << driver << " failed: " << e.what() << "\n";
      ++sum.drivers_failed;
    }
  }
  return sum;
}

inline std::map<long, ParamPosteriorSeries> read_posterior_store(const fs::path& dir) {
  std::map<long, ParamPosteriorSeries> out;
  for (const auto& p : list_store(dir, ".posteriors")) {
    auto series = read_posterior_series(p);
    out[series.driver_id] = std::move(series);
  }
  return out;
}

inline TrainResult run_train(const PipelineConfig& cfg, const fs::path& episode_dir,
                             const fs::path& posterior_dir) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  auto by_driver = pick_driver_episodes(read_episode_store(episode_dir));
  auto posteriors = read_posterior_store(posterior_dir);
  if (posteriors.empty()) throw DataError("posterior store is empty: " + posterior_dir.string());

  std::vector<DriverPoints> dataset;
  for (const auto& [driver, series] : posteriors) {
    auto it = by_driver.find(driver);
    if (it == by_driver.end())
      throw DataError("no episode for calibrated driver " + std::to_string(driver));
    dataset.push_back(tv_idm_points(it->second, series));
  }

  TrainConfig tcfg = cfg.train;
  tcfg.seed = derive_seed(cfg.seed, 0x7472616eULL);
  auto res = train_np(dataset, tcfg);
  save_model(res.model, out / "model.npcf");
  std::ofstream curve(out / "loss_curve.txt");
  curve << "epoch mean_total_loss\n";
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e)
    curve << e << ' ' << format_double(res.epoch_loss[e]) << "\n";
  return res;
}

struct StyleSummary {
  StyleMapping mapping;
  std::vector<long> drivers;
  std::vector<double> h_values;
  std::vector<double> r_tilde;
};

inline StyleSummary run_style(const PipelineConfig& cfg, const fs::path& episode_dir,
                              const fs::path& posterior_dir, const fs::path& model_path) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  auto by_driver = pick_driver_episodes(read_episode_store(episode_dir));
  auto posteriors = read_posterior_store(posterior_dir);
  if (posteriors.size() < 3)
    throw std::invalid_argument("style fitting needs at least 3 calibrated drivers, got " +
                                std::to_string(posteriors.size()));
  const NPModel model = load_model(model_path);

  std::vector<ParamPosteriorSeries> population;
  population.reserve(posteriors.size());
  for (const auto& [driver, series] : posteriors) population.push_back(series);
  const DiffScaling scaling = fit_diff_scaling(population, cfg.bounds);

  StyleSummary sum;
  std::vector<StyleVector> styles;
  for (const auto& [driver, series] : posteriors) {
    auto it = by_driver.find(driver);
    if (it == by_driver.end())
      throw DataError("no episode for calibrated driver " + std::to_string(driver));
    const auto pts = tv_idm_points(it->second, series);
    styles.push_back(encode_deterministic(model, pts.points));
    sum.h_values.push_back(aggressiveness_index(series, cfg.bounds, scaling));
    sum.drivers.push_back(driver);
  }
  sum.mapping = fit_style_mapping(styles, sum.h_values, scaling);
  PcaResult pca{sum.mapping.W, sum.mapping.u, 0.0};
  for (const auto& s : styles) sum.r_tilde.push_back(reduce_style(s, pca));

  write_style_mapping(sum.mapping, out / "style_mapping.txt");
  std::ofstream table(out / "style_table.txt");
  table << "driver H r_tilde r0 r1 r2 r3 r4\n";
  for (std::size_t i = 0; i < sum.drivers.size(); ++i) {
    table << sum.drivers[i] << ' ' << format_double(sum.h_values[i]) << ' '
          << format_double(sum.r_tilde[i]);
    for (int d = 0; d < 5; ++d) table << ' ' << format_double(styles[i].r[d]);
    table << "\n";
  }

  auto write_hist = [&](const std::vector<double>& values, const fs::path& path) {
    const auto stats = series_stats(values);
    const Histogram h = make_histogram(values, stats.min, stats.max, cfg.sim_nbins);
    std::ofstream os(path);
    os << "edges";
    for (double e : h.edges) os << ' ' << format_double(e);
    os << "\ncounts";
    for (auto c : h.counts) os << ' ' << c;
    os << "\n";
  };
  write_hist(sum.h_values, out / "hist_H.txt");
  write_hist(sum.r_tilde, out / "hist_rtilde.txt");
  return sum;
}

struct SimulateArgs {
  std::optional<long> driver;      // observed style replay
  std::optional<double> index_h;   // unseen style from the mapping
  std::string episode_file;        // explicit leader source (optional)
  bool stochastic = false;
};

struct SimulateSummary {
  SimResult result;
  MetricsReport report;
};

inline SimulateSummary run_simulate(const PipelineConfig& cfg, const SimulateArgs& args,
                                    const fs::path& episode_dir, const fs::path& model_path,
                                    const fs::path& mapping_path) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  const NPModel model = load_model(model_path);

  CFEpisode reference;
  if (!args.episode_file.empty()) {
    reference = read_episode(args.episode_file);
  } else if (args.driver) {
    auto by_driver = pick_driver_episodes(read_episode_store(episode_dir));
    auto it = by_driver.find(*args.driver);
    if (it == by_driver.end())
      throw std::out_of_range("unknown driver id " + std::to_string(*args.driver));
    reference = it->second;
  } else {
    throw std::invalid_argument("simulate needs --driver or --episode as the leader source");
  }

  StyleVector style;
  std::optional<LatentDist> z_source;
  std::vector<CfPoint> context;
  if (args.index_h) {
    const StyleMapping mapping = read_style_mapping(mapping_path);
    style = style_from_index(*args.index_h, mapping);
    // no context points exist for a synthesized style: standard-normal z
  } else {
    context.reserve(reference.frames.size());
    for (const auto& f : reference.frames)
      context.push_back({TrafficCondition{f.dv, f.v, f.s, f.v_lead, f.a_lat_lead,
                                          f.a_lon_lead},
                         f.a});
    style = encode_deterministic(model, context);
    z_source = encode_latent(model, context);
  }

  SimulateSummary sum;
  const auto leader = reference.leader_frames();
  sum.result = simulate_with_style(
      leader, reference.initial_state(), model, style, z_source,
      args.stochastic ? ZMode::sample : ZMode::mean,
      args.stochastic ? AccelMode::sample : AccelMode::mean, cfg.safety, cfg.sim_dt,
      derive_seed(cfg.seed, 0x73696d63ULL));
  sum.report = summarize(sum.result, &reference, cfg.sim_nbins);

  write_sim_frames(sum.result, out / "sim_frames.txt");
  write_metrics(sum.report, out / "sim_metrics.txt");
  return sum;
}

}  // namespace npcf
