#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eegrecon/dataset.hpp"
#include "eegrecon/decoder.hpp"
#include "eegrecon/diffusion.hpp"
#include "eegrecon/montage.hpp"

namespace eegrecon {

struct EngineConfig {
  int image_size = 32;
  bool pixel_space = false;  // identity autoencoder
  int ae_factor = 4;
  int latent_channels = 4;
  int ae_hidden = 32;

  int T = 200;
  double beta_start = 0.0;  // 0 selects the scaled default range
  double beta_end = 0.0;

  int c0 = 64;
  int cond_dim = 64;
  int time_freq = 32;
  int text_embed = 32;

  int eeg_channels = 0;
  int eeg_samples = 0;
  int proj_filters = 32;
  int proj_bins = 8;

  std::string montage;
  std::vector<std::string> class_names;
  double caption_dropout = 0.1;
  double x0_clip = 3.0;  // bound on the predicted clean latent while sampling
  double eta = 1.0;      // 1 = ancestral, 0 = deterministic DDIM
  std::uint64_t seed = 0;

  int latent_size() const { return pixel_space ? image_size : image_size / ae_factor; }
  Json to_json() const;
  static EngineConfig from_json(const Json& j);
};

// Bundle handed to the denoiser for one step.
struct ControlState {
  nn::Tensor c_eeg;  // [D,h,w]
  std::string caption;
  int t = 0;
};

class Engine {
 public:
  explicit Engine(EngineConfig config);

  const EngineConfig& config() const { return config_; }
  const DiffusionSchedule& schedule() const { return schedule_; }

  Autoencoder ae;
  TextEncoder text;
  TimeEmbedding temb;
  UNetEncoder enc;
  UNetDecoder dec;
  ControlAdapter adapter;
  EegProjector fproj;
  nn::Conv2d zconv;  // Z: zero-initialised 1x1 conv on the EEG latent

  bool ae_trained = false;
  bool backbone_trained = false;
  bool controlnet_trained = false;
  std::vector<double> ae_loss, backbone_loss, control_loss, control_val_loss;

  nn::ParamList autoencoder_params() const;
  nn::ParamList backbone_params() const;  // text encoder, time embedding, UNet
  nn::ParamList frozen_params() const;    // autoencoder + backbone
  nn::ParamList trainable_params() const; // adapter, f_proj, Z
  nn::ParamList all_params() const;
  std::string frozen_hash() const;

  // Adapter encoder := backbone encoder; the adapter's zero convs and Z are reset to zero.
  void reset_adapter();

  nn::Var condition(const std::vector<int>& t, const std::vector<std::string>& captions) const;
  nn::Var project(const nn::Var& eeg) const;                        // f_proj
  nn::Var inject(const nn::Var& z_t, const nn::Var& z_eeg) const;   // z_t + Z(z_eeg)

  // Backbone noise prediction; with c_eeg the adapter residuals are added to the skips.
  nn::Var predict_eps(const nn::Var& z_t, const std::vector<int>& t, const std::vector<std::string>& captions,
                      const nn::Var& c_eeg = nullptr) const;

 private:
  EngineConfig config_;
  DiffusionSchedule schedule_;
};

// Prompts the backbone is taught per class: the decoder caption and the refinement prompt.
std::vector<std::string> class_prompts(const std::string& class_name);

nn::Tensor images_to_tensor(const std::vector<StimulusImage>& images);
std::vector<StimulusImage> tensor_to_images(const nn::Tensor& x, const std::vector<std::string>& ids = {});

nn::Tensor encode_image(const Engine& engine, const StimulusImage& image);  // [D,h,w]
nn::Tensor encode_images(const Engine& engine, const std::vector<StimulusImage>& images);  // [N,D,h,w]
StimulusImage decode_latent(const Engine& engine, const nn::Tensor& z, std::string id = {});
StimulusImage autoencoder_roundtrip(const Engine& engine, const StimulusImage& image);

nn::Tensor eeg_tensor(const std::vector<const EegTrial*>& trials);
nn::Tensor project_eeg(const Engine& engine, const EegTrial& trial);               // [D,h,w]
nn::Tensor inject(const Engine& engine, const nn::Tensor& z_t, const nn::Tensor& z_eeg);

// Mean squared error between eps and the controlled prediction at (z_t, t).
nn::Var controlnet_loss(const Engine& engine, const nn::Tensor& eeg, const nn::Tensor& z0, const std::vector<int>& t,
                        const nn::Tensor& eps, const std::vector<std::string>& captions);

double psnr(const StimulusImage& a, const StimulusImage& b);

struct AutoencoderHyper {
  int epochs = 12;
  int batch = 8;
  double lr = 2e-3;
  double kl_weight = 1e-4;
};
void train_autoencoder(Engine& engine, const std::vector<StimulusImage>& images, const AutoencoderHyper& hyper,
                       std::uint64_t seed);

struct BackboneHyper {
  int steps = 1500;
  int batch = 32;
  double lr = 1e-3;
};
// Text-conditioned denoising on (image, class) pairs; trains text encoder and UNet.
void pretrain_backbone(Engine& engine, const std::vector<StimulusImage>& images, const std::vector<int>& labels,
                       const BackboneHyper& hyper, std::uint64_t seed);

struct ControlHyper {
  double lr = 1e-3;
  int batch = 32;
  int epochs = 100;
  int max_steps = 0;  // 0 = no cap
  double grad_clip = 1.0;

  Json to_json() const;
};

struct ControlData {
  std::vector<EegTrial> trials;  // already in the engine's montage
  nn::Tensor latents;            // [N,D,h,w]
  std::vector<std::string> captions;
};

// Optimises only the adapter, f_proj and Z; throws FrozenWeightMutation if the
// frozen set changes. Keeps the trainable weights with the lowest validation loss.
void train_controlnet(Engine& engine, const ControlData& train, const ControlData& val, const ControlHyper& hyper,
                      std::uint64_t seed);

// Builds ControlData for a split: trials projected through montage, images
// encoded, captions from the decoder's predictions.
ControlData make_control_data(const Engine& engine, const Dataset& dataset, std::string_view split,
                              const Montage& montage, const DecoderModel& decoder);

struct SampleTrace {
  std::vector<int> t;
  std::vector<nn::Tensor> eps_u, eps_c, eps_hat;
  bool record_eps = true;
};

std::vector<int> timestep_sequence(int t_start, int steps);

// Reverse process from pure noise under classifier-free guidance. The
// conditional branch sees the caption and the EEG control; the unconditional
// branch sees the null caption and the bare backbone.
StimulusImage sample(const Engine& engine, const EegTrial& eeg, const std::string& caption, double gamma, int steps,
                     std::uint64_t seed, SampleTrace* trace = nullptr);

// Caption from the decoder's prediction for this trial.
StimulusImage sample(const Engine& engine, const DecoderModel& decoder, const EegTrial& eeg, double gamma, int steps,
                     std::uint64_t seed);

// Noise the encoded init to t = round(s T) and denoise under the prompt.
StimulusImage img2img(const Engine& engine, const StimulusImage& init, const std::string& prompt, double strength,
                      double gamma, int steps, std::uint64_t seed);

void save_engine(const std::filesystem::path& path, const Engine& engine);
Engine load_engine(const std::filesystem::path& path);

std::string format_gamma(double gamma);
std::string generation_filename(const std::string& trial_id, int sample_index, double gamma);
void append_jsonl(const std::filesystem::path& path, const Json& record);

}  // namespace eegrecon
