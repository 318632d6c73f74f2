#include <CLI11.hpp>

#include <iostream>

#include "eegrecon/error.hpp"
#include "eegrecon/pipeline.hpp"

using namespace eegrecon;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> montages;
  std::vector<double> gammas;
  std::optional<double> boost_strength;
  std::string output, dataset, input, region_mode, describer;
  std::optional<int> samples_per_trial;
};

void add_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "run seed");
  sub->add_option("--montage", f.montages, "montage name (repeatable)");
  sub->add_option("--gamma", f.gammas, "guidance scale (repeatable)");
  sub->add_option("--boost-strength", f.boost_strength, "img2img strength in (0, 1]");
  sub->add_option("--samples-per-trial", f.samples_per_trial, "images per trial");
  sub->add_option("--output", f.output, "output directory");
  sub->add_option("--dataset", f.dataset, "dataset directory");
  sub->add_option("--input", f.input, "preference CSV for study-stats");
  sub->add_option("--region-mode", f.region_mode, "zero-fill or retrain");
  sub->add_option("--describer", f.describer, "mock or remote");
}

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.montages.empty()) c.montages = f.montages;
  if (!f.gammas.empty()) c.gammas = f.gammas;
  if (f.boost_strength) c.boost.strength = *f.boost_strength;
  if (f.samples_per_trial) c.samples_per_trial = *f.samples_per_trial;
  if (!f.output.empty()) c.output = f.output;
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (!f.input.empty()) c.study_input = f.input;
  if (!f.region_mode.empty()) c.region_mode = parse_region_mode(f.region_mode);
  if (!f.describer.empty()) c.describer = f.describer;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG-conditioned image reconstruction experiments"};
  app.require_subcommand(1);
  Flags flags;
  const char* commands[][2] = {
      {"prepare", "generate or check the dataset and montages"},
      {"train-decoder", "train the semantic decoder per montage"},
      {"train-controlnet", "train the autoencoder, backbone and per-montage adapters"},
      {"generate", "sample images for every montage and gamma"},
      {"boost", "describe and refine generated images"},
      {"evaluate", "score raw and boosted sets, write metrics.csv"},
      {"ablate", "electrode and region knockout with topographic maps"},
      {"study-stats", "aggregate a preference CSV"},
      {"run-all", "prepare through evaluate"},
  };
  for (const auto& [name, help] : commands) add_flags(app.add_subcommand(name, help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  RunConfig cfg;
  try {
    cfg = resolve(flags);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::MissingPrerequisite ? 2 : 1;
  }
  return run_command(command, cfg);
}
