// Command-line front end for the car-following pipeline: ingest raw
// trajectories, calibrate per-driver time-varying IDM parameters, train the
// neural-process model, fit the aggressiveness-to-style mapping, and run
// style-conditioned simulations.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "npcf/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;   // missing/invalid input files
constexpr int kExitTrain = 3;   // training aborted on a non-finite loss
constexpr int kExitStyle = 4;   // too few drivers for the style fit
constexpr int kExitDriver = 5;  // unknown driver id

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "pipeline config JSON (or a config echo)");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "root seed override");
}

npcf::PipelineConfig resolve_config(const CommonArgs& args) {
  npcf::PipelineConfig cfg;
  if (!args.config_path.empty()) cfg = npcf::load_pipeline_config(args.config_path);
  npcf::apply_env_overrides(cfg);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed) cfg.seed = *args.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"npcf: time-varying IDM calibration and neural-process car following"};
  app.require_subcommand(1);

  // --- ingest ---
  auto* ingest = app.add_subcommand("ingest", "extract car-following episodes from a trajectory file");
  CommonArgs ingest_args;
  std::string ingest_input;
  add_common(ingest, ingest_args);
  ingest->add_option("--input", ingest_input, "delimited trajectory file (falls back to paths.data)");

  // --- calibrate ---
  auto* calibrate = app.add_subcommand("calibrate", "per-driver fixed and time-varying calibration");
  CommonArgs calib_args;
  std::string calib_episodes;
  std::optional<int> calib_split;
  add_common(calibrate, calib_args);
  calibrate->add_option("--episodes", calib_episodes, "episode store directory")->required();
  calibrate->add_option("--train-split", calib_split, "number of drivers to calibrate; the rest are reserved");

  // --- train ---
  auto* train = app.add_subcommand("train", "train the neural-process model on calibrated drivers");
  CommonArgs train_args;
  std::string train_episodes, train_posteriors;
  std::optional<int> train_epochs;
  add_common(train, train_args);
  train->add_option("--episodes", train_episodes, "episode store directory")->required();
  train->add_option("--posteriors", train_posteriors, "posterior store directory")->required();
  train->add_option("--epochs", train_epochs, "epoch override");

  // --- style ---
  auto* style = app.add_subcommand("style", "aggressiveness indices, PCA and the index-to-style map");
  CommonArgs style_args;
  std::string style_episodes, style_posteriors, style_model;
  add_common(style, style_args);
  style->add_option("--episodes", style_episodes, "episode store directory")->required();
  style->add_option("--posteriors", style_posteriors, "posterior store directory")->required();
  style->add_option("--model", style_model, "trained model file")->required();

  // --- simulate ---
  auto* simulate = app.add_subcommand("simulate", "closed-loop rollout for an observed or synthesized style");
  CommonArgs sim_args;
  std::string sim_episodes, sim_model, sim_mapping, sim_episode_file;
  std::optional<long> sim_driver;
  std::optional<double> sim_index;
  bool sim_stochastic = false;
  add_common(simulate, sim_args);
  simulate->add_option("--episodes", sim_episodes, "episode store directory");
  simulate->add_option("--model", sim_model, "trained model file")->required();
  simulate->add_option("--mapping", sim_mapping, "style mapping file (needed with --index)");
  simulate->add_option("--episode", sim_episode_file, "explicit leader episode file");
  simulate->add_option("--driver", sim_driver, "observed driver id");
  simulate->add_option("--index", sim_index, "aggressiveness index for an unseen style");
  simulate->add_flag("--stochastic", sim_stochastic, "sample z and the acceleration instead of using means");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      auto cfg = resolve_config(ingest_args);
      if (!ingest_input.empty()) cfg.data_path = ingest_input;
      if (cfg.data_path.empty()) {
        std::cerr << "ingest: no input file given\n";
        return kExitInput;
      }
      std::filesystem::create_directories(cfg.out_dir);
      npcf::write_config_echo(cfg, "ingest", {{"input", cfg.data_path}}, cfg.out_dir);
      const auto res = npcf::run_ingest(cfg);
      std::cout << "vehicles " << res.stats.vehicles << ", episodes " << res.episodes_written
                << ", malformed rows " << res.load_report.rows_malformed << "\n";
      if (res.episodes_written == 0)
        std::cout << "warning: no car-following episodes extracted\n";
      return kExitOk;
    }

    if (*calibrate) {
      auto cfg = resolve_config(calib_args);
      if (calib_split) cfg.train_split = *calib_split;
      std::filesystem::create_directories(cfg.out_dir);
      npcf::write_config_echo(cfg, "calibrate", {{"episodes", calib_episodes}}, cfg.out_dir);
      const auto sum = npcf::run_calibrate(cfg, calib_episodes, std::cerr);
      std::cout << "calibrated " << sum.drivers_calibrated << ", failed " << sum.drivers_failed
                << ", reserved " << sum.drivers_reserved << "\n";
      if (sum.drivers_calibrated == 0 && sum.drivers_failed > 0) return 1;
      return kExitOk;
    }

    if (*train) {
      auto cfg = resolve_config(train_args);
      if (train_epochs) cfg.train.epochs = *train_epochs;
      std::filesystem::create_directories(cfg.out_dir);
      npcf::write_config_echo(cfg, "train",
                              {{"episodes", train_episodes}, {"posteriors", train_posteriors}},
                              cfg.out_dir);
      try {
        const auto res = npcf::run_train(cfg, train_episodes, train_posteriors);
        std::cout << "trained " << res.epoch_loss.size() << " epochs, final loss "
                  << res.epoch_loss.back() << "\n";
      } catch (const npcf::TrainDivergence& e) {
        std::cerr << e.what() << "\n";
        return kExitTrain;
      }
      return kExitOk;
    }

    if (*style) {
      auto cfg = resolve_config(style_args);
      std::filesystem::create_directories(cfg.out_dir);
      npcf::write_config_echo(cfg, "style",
                              {{"episodes", style_episodes},
                               {"posteriors", style_posteriors},
                               {"model", style_model}},
                              cfg.out_dir);
      try {
        const auto sum = npcf::run_style(cfg, style_episodes, style_posteriors, style_model);
        std::cout << "drivers " << sum.drivers.size() << ", pearson " << sum.mapping.pearson
                  << ", reconstruction rmse " << sum.mapping.recon_rmse << "\n";
      } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return kExitStyle;
      }
      return kExitOk;
    }

    if (*simulate) {
      auto cfg = resolve_config(sim_args);
      std::filesystem::create_directories(cfg.out_dir);
      npcf::SimulateArgs args;
      args.driver = sim_driver;
      args.index_h = sim_index;
      args.episode_file = sim_episode_file;
      args.stochastic = sim_stochastic;
      npcf::json echo_args{{"episodes", sim_episodes},
                           {"model", sim_model},
                           {"mapping", sim_mapping},
                           {"episode", sim_episode_file},
                           {"stochastic", sim_stochastic}};
      if (sim_driver) echo_args["driver"] = *sim_driver;
      if (sim_index) echo_args["index"] = *sim_index;
      npcf::write_config_echo(cfg, "simulate", echo_args, cfg.out_dir);
      try {
        const auto sum = npcf::run_simulate(cfg, args, sim_episodes, sim_model, sim_mapping);
        std::cout << "frames " << sum.result.frames.size() << ", collision "
                  << (sum.result.collision ? "yes" : "no") << ", overrides "
                  << sum.result.override_steps.size() << "\n";
      } catch (const std::out_of_range& e) {
        std::cerr << e.what() << "\n";
        return kExitDriver;
      }
      return kExitOk;
    }
  } catch (const npcf::SchemaError& e) {
    std::cerr << e.what() << "\n";
    return kExitInput;
  } catch (const npcf::DataError& e) {
    std::cerr << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
