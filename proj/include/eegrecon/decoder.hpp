#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eegrecon/dataset.hpp"
#include "eegrecon/io.hpp"
#include "eegrecon/montage.hpp"
#include "eegrecon/nn/layers.hpp"

namespace eegrecon {

struct DecoderConfig {
  int channels = 0;
  int num_classes = 0;
  int hidden = 128;
  int layers = 1;       // 1 or 2 stacked LSTMs
  int pool_window = 4;  // temporal mean-pooling ahead of the recurrence
  std::string montage;
  std::vector<std::string> class_names;

  Json to_json() const;
  static DecoderConfig from_json(const Json& j);
};

struct DecoderHyper {
  int epochs = 200;
  int batch = 32;
  double lr = 2e-3;
  double grad_clip = 5.0;
  double weight_decay = 0.0;

  Json to_json() const;
  static DecoderHyper from_json(const Json& j);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

class DecoderModel {
 public:
  DecoderModel(DecoderConfig config, std::uint64_t seed);

  const DecoderConfig& config() const { return config_; }
  nn::ParamList params() const;

  // x [N,C,L] -> logits [N,K]
  nn::Var forward(const nn::Var& x) const;

  std::vector<EpochRecord> history;
  DecoderHyper hyper;
  std::uint64_t seed = 0;
  int best_epoch = -1;

 private:
  DecoderConfig config_;
  std::vector<nn::Lstm> lstm_;
  nn::Linear head_;
};

struct CaptionControl {
  std::string text;
  int source_label = 0;
};

// Trials must already be projected to the montage the model is trained for.
DecoderModel train_decoder(const std::vector<EegTrial>& train, const std::vector<EegTrial>& val,
                           DecoderConfig config, const DecoderHyper& hyper, std::uint64_t seed);

// Loads train/val from the dataset, maps channels onto the montage, trains.
DecoderModel train_decoder(const Dataset& dataset, const Montage& montage, const DecoderHyper& hyper,
                           std::uint64_t seed, int hidden = 128, int layers = 1);

// Dataset channel index for every montage electrode (by label, else by source index).
std::vector<int> channel_map(const DatasetManifest& manifest, const Montage& montage);
EegTrial select_channels(const EegTrial& trial, const std::vector<int>& rows, const std::string& tag = {});

std::vector<double> decode(const DecoderModel& model, const EegTrial& trial);
std::vector<std::vector<double>> decode_batch(const DecoderModel& model, const std::vector<EegTrial>& trials);

// Index of the maximum; ties go to the lowest index.
int argmax(const std::vector<double>& scores);

CaptionControl make_caption(const std::vector<double>& scores, const std::vector<std::string>& class_names);
std::string caption_for(const std::string& class_name);

// N-way top-k: true class plus N-1 distinct seeded distractors per sample.
double topk_accuracy(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels, int ways, int k,
                     std::uint64_t seed = 0);

double top1_accuracy(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels);

void save_decoder(const std::filesystem::path& path, const DecoderModel& model);
DecoderModel load_decoder(const std::filesystem::path& path);

}  // namespace eegrecon
