#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eegrecon/image.hpp"
#include "eegrecon/io.hpp"
#include "eegrecon/nn/layers.hpp"

namespace eegrecon {

// One tap: feature map [C, H, W] stored channel-major.
struct FeatureMap {
  int channels = 0, height = 0, width = 0;
  std::vector<double> data;
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

struct BackboneOutput {
  std::vector<double> probs;       // softmax over K' classes
  std::vector<FeatureMap> taps;    // intermediate layers
  std::vector<double> embedding;   // penultimate layer
};

class FeatureBackbone {
 public:
  virtual ~FeatureBackbone() = default;
  virtual std::string tag() const = 0;
  virtual int num_classes() const = 0;
  virtual BackboneOutput run(const StimulusImage& image) const = 0;
};

// Small CNN classifier trained on the stimulus set.
class ToyCnnBackbone : public FeatureBackbone {
 public:
  static constexpr const char* kTag = "toy-cnn-v1";
  ToyCnnBackbone(int num_classes, int image_size, std::uint64_t seed);

  std::string tag() const override { return kTag; }
  int num_classes() const override { return num_classes_; }
  int image_size() const { return image_size_; }
  BackboneOutput run(const StimulusImage& image) const override;

  nn::Var logits(const nn::Var& x, std::vector<nn::Var>* taps = nullptr, nn::Var* embedding = nullptr) const;
  nn::ParamList params() const;

  std::vector<double> loss_history;

 private:
  int num_classes_, image_size_;
  nn::Conv2d c1_, c2_;
  nn::Linear fc1_, fc2_;
};

struct ClassifierHyper {
  int epochs = 30;
  int batch = 16;
  double lr = 3e-3;
};

ToyCnnBackbone train_toy_cnn(const std::vector<StimulusImage>& images, const std::vector<int>& labels,
                             int num_classes, const ClassifierHyper& hyper, std::uint64_t seed);
double backbone_accuracy(const FeatureBackbone& backbone, const std::vector<StimulusImage>& images,
                         const std::vector<int>& labels);
void save_backbone(const std::filesystem::path& path, const ToyCnnBackbone& backbone);
ToyCnnBackbone load_backbone(const std::filesystem::path& path);

// Fixed, untrained: coarse colour histogram as the class posterior, pooled
// colour grids as taps.
class ColorHistogramBackbone : public FeatureBackbone {
 public:
  static constexpr const char* kTag = "color-hist-v1";
  std::string tag() const override { return kTag; }
  int num_classes() const override { return 8; }
  BackboneOutput run(const StimulusImage& image) const override;
};

// --- Inception score ---------------------------------------------------------

// exp(mean over splits of E_x KL(p(y|x) || p(y))), p(y) the split marginal.
// Splits are contiguous, sizes differing by at most one.
double inception_score_from_probs(const std::vector<std::vector<double>>& probs, int splits);
double inception_score(const std::vector<StimulusImage>& images, const FeatureBackbone& backbone, int splits = 10);

// --- Frechet distance -----------------------------------------------------------

struct GaussianSummary {
  std::vector<double> mean;
  std::vector<double> cov;  // d x d row-major, unbiased
  int n = 0;
  int dim() const { return static_cast<int>(mean.size()); }
};

GaussianSummary summarize(const std::vector<std::vector<double>>& features);
double fid(const GaussianSummary& a, const GaussianSummary& b);
std::vector<std::vector<double>> embeddings(const std::vector<StimulusImage>& images, const FeatureBackbone& backbone);

// --- pairwise -------------------------------------------------------------------

// Mean over taps of the spatially averaged squared distance between
// channel-normalised feature vectors.
double perceptual_distance_from_taps(const std::vector<FeatureMap>& x, const std::vector<FeatureMap>& y);
double perceptual_distance(const StimulusImage& x, const StimulusImage& y, const FeatureBackbone& backbone);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);
double embedding_similarity(const StimulusImage& x, const StimulusImage& y, const FeatureBackbone& backbone);

// --- reports ---------------------------------------------------------------------

struct MetricValues {
  double is = 0.0, fid = 0.0, lpips = 0.0;
  std::optional<double> clip_sim;  // never set for boosted sets
};

// generated[i] is compared pairwise with reference[pair_index[i]]; the FID
// reference distribution is the full reference set, pooled over classes.
MetricValues evaluate_set(const std::vector<StimulusImage>& generated, const std::vector<StimulusImage>& reference,
                          const std::vector<int>& pair_index, const FeatureBackbone& backbone, bool boosted,
                          int is_splits = 10);

struct MetricReport {
  std::string run_id, montage;
  int channels = 0;
  double gamma = 0.0;
  bool boosted = false;
  int n_images = 0;
  MetricValues values;
  std::string backbone_tag;
  std::uint64_t seed = 0;
};

std::string format_metric(double v);
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& r);
void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricReport>& rows);
std::vector<MetricReport> read_metric_csv(const std::filesystem::path& path);

// Signed percent: positive when boosting improves the metric.
double gain_percent(double raw, double boosted, bool higher_is_better);
std::string format_gain(double percent);  // "+9.71%"

}  // namespace eegrecon
