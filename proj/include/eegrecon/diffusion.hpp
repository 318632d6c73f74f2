#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "eegrecon/image.hpp"
#include "eegrecon/io.hpp"
#include "eegrecon/nn/layers.hpp"

namespace eegrecon {

// Linear beta schedule with an explicit t=0 entry: beta[0]=0, alpha_bar[0]=1,
// alpha_bar[t] = prod_{s<=t} (1 - beta[s]) for t in [0, T].
struct DiffusionSchedule {
  int T = 0;
  double beta_start = 0.0, beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  double sqrt_ab(int t) const;
  double sqrt_one_minus_ab(int t) const;
  Json to_json() const;
};

// beta_1..beta_T evenly spaced in [beta_start, beta_end].
DiffusionSchedule make_linear_schedule(int T, double beta_start, double beta_end);

// The conventional 1e-4..0.02 range is defined for 1000 steps; shorter
// schedules scale it by 1000/T so alpha_bar[T] stays near zero.
DiffusionSchedule make_default_schedule(int T);

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps, with the cumulative
// product alpha_bar (a single jump from 0 to t).
nn::Tensor forward_diffuse(const nn::Tensor& z0, int t, const nn::Tensor& eps, const DiffusionSchedule& schedule);

// eps_u + gamma (eps_c - eps_u), evaluated as (1-gamma) eps_u + gamma eps_c so
// gamma = 0 and gamma = 1 reproduce the branches exactly.
nn::Tensor guided_eps(const nn::Tensor& eps_u, const nn::Tensor& eps_c, double gamma);

nn::Tensor gaussian_tensor(nn::Shape shape, std::mt19937_64& rng);

// --- building blocks -------------------------------------------------------

struct ResBlock {
  nn::Conv2d conv1, conv2, skip;
  nn::Linear cond_proj;
  bool has_skip = false;
  ResBlock() = default;
  ResBlock(int in, int out, int cond_dim, std::mt19937_64& rng);
  nn::Var operator()(const nn::Var& x, const nn::Var& cond) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

struct Autoencoder {
  bool identity = false;  // pixel-space mode: latent = pixels in [-1,1]
  int image_size = 32, factor = 4, latent_channels = 4, hidden = 32;
  double scale = 1.0;  // applied to posterior means so latents have unit spread
  nn::Conv2d e_in, e_mid, e_out, d_in, d_mid, d_out;
  std::vector<nn::Conv2d> e_down, d_up;  // one stride-2 / upsampling stage per factor of 2

  Autoencoder() = default;
  Autoencoder(bool identity, int image_size, int factor, int latent_channels, int hidden, std::mt19937_64& rng);
  int latent_size() const { return image_size / factor; }

  // x [N,3,H,W] in [-1,1] -> [N,2D,h,w] holding (mean, logvar) before scaling
  nn::Var moments(const nn::Var& x) const;
  nn::Var encode_mean(const nn::Var& x) const;  // scaled posterior mean
  nn::Var decode(const nn::Var& z) const;       // scaled latent -> [N,3,H,W]
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(std::vector<std::string> vocab, int embed_dim, int cond_dim, std::mt19937_64& rng);

  static std::vector<std::string> tokenize(const std::string& text);
  static std::vector<std::string> build_vocab(const std::vector<std::string>& corpus);
  std::vector<int> token_ids(const std::string& text) const;
  const std::vector<std::string>& vocab() const { return vocab_; }

  // Mean of token embeddings, projected to the conditioning width. An empty
  // string is the null caption.
  nn::Var encode(const std::vector<std::string>& texts) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, int> index_;
  nn::Var table_;
  nn::Linear proj_;
};

inline constexpr const char* kNullToken = "<null>";
inline constexpr const char* kUnknownToken = "<unk>";

struct TimeEmbedding {
  int freq_dim = 16;
  nn::Linear l1, l2;
  TimeEmbedding() = default;
  TimeEmbedding(int freq_dim, int cond_dim, std::mt19937_64& rng);
  nn::Var operator()(const std::vector<int>& t) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

// Skip features of the UNet encoder, also the shape of adapter residuals.
struct UNetFeatures {
  nn::Var h0, h1, h3, mid;
};

struct UNetEncoder {
  nn::Conv2d conv_in, down;
  ResBlock res0, res1, mid;
  UNetEncoder() = default;
  UNetEncoder(int in_channels, int c0, int cond_dim, std::mt19937_64& rng);
  UNetFeatures operator()(const nn::Var& x, const nn::Var& cond) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

struct UNetDecoder {
  ResBlock r1, r2, r3;
  nn::Conv2d up, conv_out;
  UNetDecoder() = default;
  UNetDecoder(int out_channels, int c0, int cond_dim, std::mt19937_64& rng);
  nn::Var operator()(const UNetFeatures& f, const nn::Var& cond) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

// ControlNet-style branch: trainable copy of the encoder, with zero 1x1
// convolutions on each residual it hands to the frozen backbone.
struct ControlAdapter {
  UNetEncoder enc;
  nn::Conv2d z0, z1, z3, zmid;
  ControlAdapter() = default;
  ControlAdapter(int in_channels, int c0, int cond_dim, std::mt19937_64& rng);
  UNetFeatures operator()(const nn::Var& c_eeg, const nn::Var& cond) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

// Stacked temporal 1-D convolutions, pooled and mapped to a [D,h,w] latent.
struct EegProjector {
  nn::Conv1d c1, c2;
  nn::Linear fc;
  int bins = 8, latent_channels = 4, latent_size = 8;
  EegProjector() = default;
  EegProjector(int eeg_channels, int samples, int filters, int bins, int latent_channels, int latent_size,
               std::mt19937_64& rng);
  nn::Var operator()(const nn::Var& eeg) const;  // [N,C,L] -> [N,D,h,w]
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

}  // namespace eegrecon
