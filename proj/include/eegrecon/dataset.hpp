#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegrecon/image.hpp"

namespace eegrecon {

// One recording: row-major [channels x samples] float32 matrix (microvolts).
struct EegTrial {
  std::string trial_id;
  int subject = 0;
  int channels = 0;
  int samples = 0;
  std::vector<float> data;
  int class_label = 0;
  std::string image_id;

  float at(int c, int t) const { return data[static_cast<std::size_t>(c) * samples + t]; }
  std::span<const float> row(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * samples, static_cast<std::size_t>(samples)};
  }
};

struct TrialInfo {
  std::string trial_id;
  int subject = 0;
  int class_label = 0;
  std::string image_id;
};

struct Splits {
  std::vector<std::string> train, val, test;
  const std::vector<std::string>& get(std::string_view name) const;
};

// Per-channel statistics of the train split, applied as z-scores at load time.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct DatasetManifest {
  std::string name;
  int num_classes = 0;
  std::vector<std::string> class_names;
  int channels = 0;
  int samples_per_trial = 0;
  double sampling_rate_hz = 0.0;
  std::vector<std::string> electrode_labels;
  Splits splits;

  // Interchange extensions: per-trial metadata, stimulus geometry, normalisation.
  std::vector<TrialInfo> trials;
  int image_height = 0;
  int image_width = 0;
  std::optional<ChannelStats> normalization;
  nlohmann::json provenance;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  const TrialInfo& trial(const std::string& id) const;
};

class Dataset {
 public:
  Dataset(std::filesystem::path root, DatasetManifest manifest);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }

  EegTrial load_trial(const std::string& trial_id, bool normalized = true) const;
  StimulusImage load_image(const std::string& image_id) const;
  std::vector<EegTrial> load_split(std::string_view split, bool normalized = true) const;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
};

// Validates manifest.json, every trial binary and every stimulus image under root.
Dataset load_dataset(const std::filesystem::path& root);

std::filesystem::path trial_path(const std::filesystem::path& root, const std::string& trial_id);
std::filesystem::path image_path(const std::filesystem::path& root, const std::string& image_id);

void write_trial(const std::filesystem::path& root, const EegTrial& trial);
EegTrial read_trial(const std::filesystem::path& root, const TrialInfo& info, int channels, int samples);
void write_manifest(const std::filesystem::path& root, const DatasetManifest& manifest);

struct SplitRatios {
  double train = 0.8, val = 0.1, test = 0.1;
};

// Stratified per class, deterministic under seed.
DatasetManifest split_trials(const DatasetManifest& manifest, SplitRatios ratios, std::uint64_t seed);

// Mean/std per channel over the raw train split.
ChannelStats compute_train_stats(const std::filesystem::path& root, const DatasetManifest& manifest);

struct SyntheticSpec {
  std::string name = "synthetic";
  int num_classes = 4;
  int channels = 16;
  int samples = 128;
  int n_per_class = 50;
  std::vector<int> informative_channels{0, 1, 14, 15};
  std::uint64_t seed = 7;
  double sampling_rate_hz = 128.0;
  int image_size = 32;
  int subjects = 1;
  std::vector<std::string> electrode_labels;  // defaults to E0..E{C-1}
  SplitRatios ratios{};
};

// Class k carries sin(2*pi*(4+2k)*t/fs) on the informative channels, plus
// N(0,1) noise on every channel; stimulus images are class icons.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& root);

std::string synthetic_class_name(int k);
double synthetic_frequency_hz(int k);
StimulusImage draw_class_icon(int class_label, int size, std::uint64_t instance_seed, std::string id);

}  // namespace eegrecon
