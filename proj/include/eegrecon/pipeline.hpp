#pragma once

// Experiment orchestration behind the eegrecon command line.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eegrecon/ablation.hpp"
#include "eegrecon/boosting.hpp"
#include "eegrecon/engine.hpp"
#include "eegrecon/io.hpp"
#include "eegrecon/metrics.hpp"

namespace eegrecon {

struct SyntheticSettings {
  bool enabled = true;  // prepare generates the dataset when it is missing
  int num_classes = 4;
  int n_per_class = 150;
  int samples = 128;
  int image_size = 32;
  std::string layout = "std-128";          // electrode labels and count
  std::string informative_region = "occipital";
  std::vector<int> informative_channels;   // overrides the region when non-empty
  std::uint64_t seed = 7;
};

struct RunConfig {
  std::filesystem::path dataset = "data/synthetic";
  std::filesystem::path output = "runs/default";
  std::filesystem::path montage_dir;  // empty = shipped fixtures
  std::vector<std::string> montages{"std-128", "std-64", "std-32", "std-24"};
  std::vector<double> gammas{4.0, 7.5};
  int samples_per_trial = 4;
  std::uint64_t seed = 0;

  SyntheticSettings synthetic;

  int decoder_hidden = 64;
  int decoder_layers = 1;
  DecoderHyper decoder{60, 32, 2e-3, 5.0, 0.0};

  Json engine;  // EngineConfig overrides on top of the desk-scale defaults
  AutoencoderHyper autoencoder;
  BackboneHyper backbone{300, 32, 1e-3};
  ControlHyper controlnet{1e-3, 32, 100, 200, 1.0};

  int sample_steps = 25;
  std::string generate_split = "test";
  int max_trials = 40;  // 0 = whole split

  BoostConfig boost;
  std::string describer = "mock";
  RemoteConfig remote;

  std::string eval_backbone = "toy-cnn";  // or color-hist
  int is_splits = 10;
  ClassifierHyper classifier;
  int eval_ways = 0;  // 0 = every class
  int eval_top_k = 5;

  std::string ablation_montage = "std-128";
  RegionMode region_mode = RegionMode::ZeroFill;
  int ablation_threads = 1;

  std::filesystem::path study_input;

  Json to_json() const;
  static RunConfig from_json(const Json& j);  // unknown keys raise ConfigValidationError
  void validate() const;
  std::string hash() const;  // sha256 of the canonical resolved config
};

RunConfig load_run_config(const std::filesystem::path& path);

// Deterministic per-item seed from the run seed, a stage tag and indices.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0,
                          std::uint64_t c = 0);

// Output layout under RunConfig::output.
struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path decoder(const std::string& montage) const { return root / "decoders" / (montage + ".ckpt"); }
  std::filesystem::path base_engine() const { return root / "engines" / "base.ckpt"; }
  std::filesystem::path engine(const std::string& montage) const { return root / "engines" / (montage + ".ckpt"); }
  std::filesystem::path generated(const std::string& montage, double gamma) const;
  std::filesystem::path boosted(const std::string& montage, double gamma) const;
  std::filesystem::path eval_backbone() const { return root / "eval" / "backbone.ckpt"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path ablation(const std::string& montage) const { return root / "ablation" / montage; }
  std::filesystem::path study() const { return root / "study"; }
  std::filesystem::path manifest(const std::string& command) const { return root / "manifests" / (command + ".json"); }
};

// Exclusive writer lock on an output directory; a lock left by a dead process is taken over.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Each command validates prerequisites (MissingPrerequisite names the path),
// writes its artifacts and a run manifest, and returns the manifest path.
std::filesystem::path cmd_prepare(const RunConfig& cfg);
std::filesystem::path cmd_train_decoder(const RunConfig& cfg);
std::filesystem::path cmd_train_controlnet(const RunConfig& cfg);
std::filesystem::path cmd_generate(const RunConfig& cfg);
std::filesystem::path cmd_boost(const RunConfig& cfg);
std::filesystem::path cmd_evaluate(const RunConfig& cfg);
std::filesystem::path cmd_ablate(const RunConfig& cfg);
std::filesystem::path cmd_study_stats(const RunConfig& cfg);

// prepare through evaluate in order.
void run_pipeline(const RunConfig& cfg);

// Command name -> exit code (0 ok, 1 validation, 2 missing prerequisite); messages go to stderr.
int run_command(const std::string& command, const RunConfig& cfg);

}  // namespace eegrecon
