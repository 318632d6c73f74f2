#include "eegrecon/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "eegrecon/error.hpp"
#include "eegrecon/prompts.hpp"

namespace fs = std::filesystem;

namespace eegrecon {

using namespace nn;

Json EngineConfig::to_json() const {
  return {{"image_size", image_size},     {"pixel_space", pixel_space},   {"ae_factor", ae_factor},
          {"latent_channels", latent_channels}, {"ae_hidden", ae_hidden}, {"T", T},
          {"beta_start", beta_start},     {"beta_end", beta_end},         {"c0", c0},
          {"cond_dim", cond_dim},         {"time_freq", time_freq},       {"text_embed", text_embed},
          {"eeg_channels", eeg_channels}, {"eeg_samples", eeg_samples},   {"proj_filters", proj_filters},
          {"proj_bins", proj_bins},       {"montage", montage},           {"class_names", class_names},
          {"caption_dropout", caption_dropout}, {"x0_clip", x0_clip},     {"eta", eta},
          {"seed", seed}};
}

EngineConfig EngineConfig::from_json(const Json& j) {
  EngineConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.pixel_space = j.value("pixel_space", c.pixel_space);
  c.ae_factor = j.value("ae_factor", c.ae_factor);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.ae_hidden = j.value("ae_hidden", c.ae_hidden);
  c.T = j.value("T", c.T);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
  c.c0 = j.value("c0", c.c0);
  c.cond_dim = j.value("cond_dim", c.cond_dim);
  c.time_freq = j.value("time_freq", c.time_freq);
  c.text_embed = j.value("text_embed", c.text_embed);
  c.eeg_channels = j.value("eeg_channels", c.eeg_channels);
  c.eeg_samples = j.value("eeg_samples", c.eeg_samples);
  c.proj_filters = j.value("proj_filters", c.proj_filters);
  c.proj_bins = j.value("proj_bins", c.proj_bins);
  c.montage = j.value("montage", c.montage);
  c.class_names = j.value("class_names", c.class_names);
  c.caption_dropout = j.value("caption_dropout", c.caption_dropout);
  c.x0_clip = j.value("x0_clip", c.x0_clip);
  c.eta = j.value("eta", c.eta);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<std::string> class_prompts(const std::string& class_name) {
  return {caption_for(class_name), compose_prompt(class_name).text};
}

namespace {

DiffusionSchedule schedule_for(const EngineConfig& c) {
  if (c.beta_start == 0.0 && c.beta_end == 0.0) return make_default_schedule(c.T);
  return make_linear_schedule(c.T, c.beta_start, c.beta_end);
}

std::vector<std::string> vocab_for(const EngineConfig& c) {
  std::vector<std::string> corpus{std::string(kRefinementTemplate)};
  for (const auto& name : c.class_names)
    for (auto& p : class_prompts(name)) corpus.push_back(std::move(p));
  return TextEncoder::build_vocab(corpus);
}

// Copy of one batch element range [from, from+n) along dim 0.
Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  Shape s = x.shape;
  const std::size_t inner = x.size() / s[0];
  s[0] = static_cast<int>(rows.size());
  Tensor out(s);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data.begin() + rows[i] * inner, inner, out.data.begin() + i * inner);
  return out;
}

Tensor diffuse_batch(const Tensor& z0, const std::vector<int>& t, const Tensor& eps, const DiffusionSchedule& s) {
  Tensor out(z0.shape);
  const std::size_t inner = z0.size() / z0.shape[0];
  for (std::size_t n = 0; n < t.size(); ++n) {
    if (t[n] < 0 || t[n] > s.T) fail(Errc::TimestepOutOfRange, "t=" + std::to_string(t[n]));
    const double a = s.sqrt_ab(t[n]), b = s.sqrt_one_minus_ab(t[n]);
    for (std::size_t i = n * inner; i < (n + 1) * inner; ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
  }
  return out;
}

std::vector<Tensor> snapshot(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.var->value);
  return out;
}

void restore(const ParamList& params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].var->value = values[i];
}

void check_finite_loss(double v, const char* what, int step) {
  if (!std::isfinite(v)) fail(Errc::DivergenceError, std::string(what) + " loss became non-finite at step " + std::to_string(step));
}

}  // namespace

Engine::Engine(EngineConfig config) : config_(std::move(config)) {
  auto& c = config_;
  if (c.eeg_channels < 1 || c.eeg_samples < 1)
    fail(Errc::ConfigValidationError, "engine needs eeg_channels and eeg_samples");
  if (c.class_names.empty()) fail(Errc::ConfigValidationError, "engine needs class names");
  if (!c.pixel_space && (c.ae_factor < 1 || c.image_size % c.ae_factor != 0))
    fail(Errc::BadDimensions, "image size " + std::to_string(c.image_size) + " not divisible by factor " +
                                  std::to_string(c.ae_factor));
  if (c.latent_size() < 2 || c.latent_size() % 2 != 0)
    fail(Errc::BadDimensions, "latent side must be even and at least 2");
  if (c.pixel_space) c.latent_channels = 3;
  schedule_ = schedule_for(c);

  std::mt19937_64 rng(c.seed);
  ae = Autoencoder(c.pixel_space, c.image_size, c.ae_factor, c.latent_channels, c.ae_hidden, rng);
  text = TextEncoder(vocab_for(c), c.text_embed, c.cond_dim, rng);
  temb = TimeEmbedding(c.time_freq, c.cond_dim, rng);
  const int d = c.latent_channels;
  enc = UNetEncoder(d, c.c0, c.cond_dim, rng);
  dec = UNetDecoder(d, c.c0, c.cond_dim, rng);
  adapter = ControlAdapter(d, c.c0, c.cond_dim, rng);
  fproj = EegProjector(c.eeg_channels, c.eeg_samples, c.proj_filters, c.proj_bins, d, c.latent_size(), rng);
  zconv = Conv2d::zeros(d, d);
  reset_adapter();
  ae_trained = c.pixel_space;
}

ParamList Engine::autoencoder_params() const {
  ParamList out;
  ae.collect(out, "ae");
  return out;
}

ParamList Engine::backbone_params() const {
  ParamList out;
  text.collect(out, "text");
  temb.collect(out, "time");
  enc.collect(out, "unet.enc");
  dec.collect(out, "unet.dec");
  return out;
}

ParamList Engine::frozen_params() const {
  ParamList out = autoencoder_params();
  for (auto& p : backbone_params()) out.push_back(std::move(p));
  return out;
}

ParamList Engine::trainable_params() const {
  ParamList out;
  adapter.collect(out, "adapter");
  fproj.collect(out, "fproj");
  zconv.collect(out, "zconv");
  return out;
}

ParamList Engine::all_params() const {
  ParamList out = frozen_params();
  for (auto& p : trainable_params()) out.push_back(std::move(p));
  return out;
}

std::string Engine::frozen_hash() const { return hash_params(frozen_params()); }

void Engine::reset_adapter() {
  ParamList src, dst;
  enc.collect(src, "enc");
  adapter.enc.collect(dst, "enc");
  copy_values(src, dst);
  for (const Conv2d* z : {&adapter.z0, &adapter.z1, &adapter.z3, &adapter.zmid, &zconv}) {
    std::fill(z->weight->value.data.begin(), z->weight->value.data.end(), 0.0);
    std::fill(z->bias->value.data.begin(), z->bias->value.data.end(), 0.0);
  }
}

Var Engine::condition(const std::vector<int>& t, const std::vector<std::string>& captions) const {
  return add(temb(t), text.encode(captions));
}

Var Engine::project(const Var& eeg) const {
  if (eeg->value.dim(1) != config_.eeg_channels)
    fail(Errc::ChannelMismatch, "EEG has " + std::to_string(eeg->value.dim(1)) + " channels, engine montage '" +
                                    config_.montage + "' has " + std::to_string(config_.eeg_channels));
  if (eeg->value.dim(2) != config_.eeg_samples)
    fail(Errc::ShapeMismatch, "EEG has " + std::to_string(eeg->value.dim(2)) + " samples, engine expects " +
                                  std::to_string(config_.eeg_samples));
  return fproj(eeg);
}

Var Engine::inject(const Var& z_t, const Var& z_eeg) const {
  if (z_t->shape() != z_eeg->shape())
    fail(Errc::ShapeMismatch, "z_t " + shape_str(z_t->shape()) + " vs z_eeg " + shape_str(z_eeg->shape()));
  return add(z_t, zconv(z_eeg));
}

Var Engine::predict_eps(const Var& z_t, const std::vector<int>& t, const std::vector<std::string>& captions,
                        const Var& c_eeg) const {
  const Var cond = condition(t, captions);
  UNetFeatures f = enc(z_t, cond);
  if (c_eeg) {
    const UNetFeatures r = adapter(c_eeg, cond);
    f.h0 = add(f.h0, r.h0);
    f.h1 = add(f.h1, r.h1);
    f.h3 = add(f.h3, r.h3);
    f.mid = add(f.mid, r.mid);
  }
  return dec(f, cond);
}

// --- image / EEG conversion --------------------------------------------------

Tensor images_to_tensor(const std::vector<StimulusImage>& images) {
  if (images.empty()) fail(Errc::EmptyInput, "no images");
  const int h = images.front().height, w = images.front().width;
  Tensor out({static_cast<int>(images.size()), 3, h, w});
  const std::size_t inner = static_cast<std::size_t>(3) * h * w;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w) fail(Errc::BadDimensions, "images differ in size");
    const auto planar = to_unit_planar(images[i]);
    std::copy(planar.begin(), planar.end(), out.data.begin() + i * inner);
  }
  return out;
}

std::vector<StimulusImage> tensor_to_images(const Tensor& x, const std::vector<std::string>& ids) {
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t inner = static_cast<std::size_t>(3) * h * w;
  std::vector<StimulusImage> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> planar(x.data.begin() + i * inner, x.data.begin() + (i + 1) * inner);
    out.push_back(from_unit_planar(planar, h, w, i < static_cast<int>(ids.size()) ? ids[i] : std::string()));
  }
  return out;
}

Tensor encode_images(const Engine& engine, const std::vector<StimulusImage>& images) {
  const int size = engine.config().image_size;
  for (const auto& im : images) {
    if (im.height % std::max(1, engine.ae.factor) != 0 || im.width % std::max(1, engine.ae.factor) != 0)
      fail(Errc::BadDimensions, "image " + std::to_string(im.height) + "x" + std::to_string(im.width) +
                                    " not divisible by the autoencoder factor " + std::to_string(engine.ae.factor));
    if (im.height != size || im.width != size)
      fail(Errc::BadDimensions, "engine expects " + std::to_string(size) + "x" + std::to_string(size) + " images");
  }
  NoGradGuard ng;
  constexpr std::size_t kChunk = 64;
  Tensor out;
  for (std::size_t s = 0; s < images.size(); s += kChunk) {
    std::vector<StimulusImage> chunk(images.begin() + s, images.begin() + std::min(images.size(), s + kChunk));
    const Tensor z = engine.ae.encode_mean(constant(images_to_tensor(chunk)))->value;
    if (out.shape.empty()) {
      Shape sh = z.shape;
      sh[0] = static_cast<int>(images.size());
      out = Tensor(sh);
    }
    std::copy(z.data.begin(), z.data.end(), out.data.begin() + s * (z.size() / z.dim(0)));
  }
  return out;
}

Tensor encode_image(const Engine& engine, const StimulusImage& image) {
  Tensor z = encode_images(engine, {image});
  z.shape.erase(z.shape.begin());
  return z;
}

StimulusImage decode_latent(const Engine& engine, const Tensor& z, std::string id) {
  Tensor zb = z;
  if (zb.rank() == 3) zb.shape.insert(zb.shape.begin(), 1);
  NoGradGuard ng;
  const Tensor x = engine.ae.decode(constant(zb))->value;
  return tensor_to_images(x, {std::move(id)}).front();
}

StimulusImage autoencoder_roundtrip(const Engine& engine, const StimulusImage& image) {
  return decode_latent(engine, encode_image(engine, image), image.image_id);
}

Tensor eeg_tensor(const std::vector<const EegTrial*>& trials) {
  if (trials.empty()) fail(Errc::EmptyInput, "no trials");
  const int c = trials.front()->channels, l = trials.front()->samples;
  Tensor t({static_cast<int>(trials.size()), c, l});
  std::size_t o = 0;
  for (const auto* tr : trials) {
    if (tr->channels != c || tr->samples != l) fail(Errc::ShapeMismatch, "trials differ in shape");
    for (float v : tr->data) t.data[o++] = v;
  }
  return t;
}

Tensor project_eeg(const Engine& engine, const EegTrial& trial) {
  NoGradGuard ng;
  Tensor z = engine.project(constant(eeg_tensor({&trial})))->value;
  z.shape.erase(z.shape.begin());
  return z;
}

Tensor inject(const Engine& engine, const Tensor& z_t, const Tensor& z_eeg) {
  if (z_t.shape != z_eeg.shape)
    fail(Errc::ShapeMismatch, "z_t " + shape_str(z_t.shape) + " vs z_eeg " + shape_str(z_eeg.shape));
  NoGradGuard ng;
  Tensor a = z_t, b = z_eeg;
  const bool single = a.rank() == 3;
  if (single) {
    a.shape.insert(a.shape.begin(), 1);
    b.shape.insert(b.shape.begin(), 1);
  }
  Tensor out = engine.inject(constant(std::move(a)), constant(std::move(b)))->value;
  if (single) out.shape.erase(out.shape.begin());
  return out;
}

Var controlnet_loss(const Engine& engine, const Tensor& eeg, const Tensor& z0, const std::vector<int>& t,
                    const Tensor& eps, const std::vector<std::string>& captions) {
  const Tensor zt = diffuse_batch(z0, t, eps, engine.schedule());
  const Var z_t = constant(zt);
  const Var c_eeg = engine.inject(z_t, engine.project(constant(eeg)));
  return mse_loss(engine.predict_eps(z_t, t, captions, c_eeg), constant(eps));
}

double psnr(const StimulusImage& a, const StimulusImage& b) {
  if (a.height != b.height || a.width != b.width) fail(Errc::DimMismatch, "images differ in size");
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / (se / a.pixels.size()));
}

// --- training ------------------------------------------------------------------

void train_autoencoder(Engine& engine, const std::vector<StimulusImage>& images, const AutoencoderHyper& hyper,
                       std::uint64_t seed) {
  if (engine.ae.identity) {
    engine.ae_trained = true;
    return;
  }
  if (images.empty()) fail(Errc::EmptySplit, "no images for the autoencoder");
  const Tensor all = images_to_tensor(images);
  const ParamList params = engine.autoencoder_params();
  set_trainable(engine.backbone_params(), false);
  set_trainable(engine.trainable_params(), false);
  set_trainable(params, true);
  engine.ae.scale = 1.0;
  Adam opt(params, hyper.lr);
  std::mt19937_64 rng(seed);
  const int d = engine.ae.latent_channels;
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += hyper.batch) {
      std::vector<std::size_t> rows(order.begin() + s, order.begin() + std::min(order.size(), s + hyper.batch));
      const Var x = constant(take_rows(all, rows));
      const Var m = engine.ae.moments(x);
      const Var mu = slice(m, 0, d);
      const Var lv = slice(m, d, d);
      const Var noise = constant(gaussian_tensor(mu->shape(), rng));
      const Var z = add(mu, mul(exp(scale(lv, 0.5)), noise));
      const Var recon = engine.ae.decode(z);
      const Var kl = scale(mean(sub(add(mul(mu, mu), exp(lv)), add_scalar(lv, 1.0))), 0.5);
      const Var loss = add(mse_loss(recon, x), scale(kl, hyper.kl_weight));
      check_finite_loss(loss->value.data[0], "autoencoder", step);
      engine.ae_loss.push_back(loss->value.data[0]);
      opt.zero_grad();
      backward(loss);
      opt.clip_grad_norm(5.0);
      opt.step();
      ++step;
    }
  }
  // unit spread for the diffusion model
  NoGradGuard ng;
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < images.size(); s += 64) {
    std::vector<std::size_t> rows;
    for (std::size_t i = s; i < std::min(images.size(), s + 64); ++i) rows.push_back(i);
    const Tensor mu = slice(engine.ae.moments(constant(take_rows(all, rows))), 0, d)->value;
    for (double v : mu.data) {
      sum += v;
      sq += v * v;
    }
    n += mu.size();
  }
  const double mean_v = sum / n;
  const double sd = std::sqrt(std::max(1e-12, sq / n - mean_v * mean_v));
  engine.ae.scale = 1.0 / sd;
  engine.ae_trained = true;
  set_trainable(engine.all_params(), true);
}

void pretrain_backbone(Engine& engine, const std::vector<StimulusImage>& images, const std::vector<int>& labels,
                       const BackboneHyper& hyper, std::uint64_t seed) {
  if (!engine.ae_trained) fail(Errc::NotTrained, "autoencoder must be trained before the backbone");
  if (images.empty() || images.size() != labels.size()) fail(Errc::EmptySplit, "backbone needs labelled images");
  const Tensor latents = encode_images(engine, images);
  const ParamList params = engine.backbone_params();
  set_trainable(engine.autoencoder_params(), false);
  set_trainable(engine.trainable_params(), false);
  set_trainable(params, true);
  Adam opt(params, hyper.lr);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tdist(1, engine.schedule().T);
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto& names = engine.config().class_names;
  for (int step = 0; step < hyper.steps; ++step) {
    std::vector<std::size_t> rows(hyper.batch);
    std::vector<int> t(hyper.batch);
    std::vector<std::string> captions(hyper.batch);
    for (int i = 0; i < hyper.batch; ++i) {
      rows[i] = pick(rng);
      t[i] = tdist(rng);
      const auto prompts = class_prompts(names.at(labels[rows[i]]));
      const std::string& p = prompts[rng() % prompts.size()];
      captions[i] = u01(rng) < engine.config().caption_dropout ? std::string() : p;
    }
    const Tensor z0 = take_rows(latents, rows);
    const Tensor eps = gaussian_tensor(z0.shape, rng);
    const Var z_t = constant(diffuse_batch(z0, t, eps, engine.schedule()));
    const Var loss = mse_loss(engine.predict_eps(z_t, t, captions), constant(eps));
    check_finite_loss(loss->value.data[0], "backbone", step);
    engine.backbone_loss.push_back(loss->value.data[0]);
    opt.zero_grad();
    backward(loss);
    opt.clip_grad_norm(1.0);
    opt.step();
  }
  engine.backbone_trained = true;
  engine.reset_adapter();
  set_trainable(engine.all_params(), true);
}

Json ControlHyper::to_json() const {
  return {{"lr", lr}, {"batch", batch}, {"epochs", epochs}, {"max_steps", max_steps}, {"grad_clip", grad_clip}};
}

namespace {

double validation_loss(const Engine& engine, const ControlData& val, std::uint64_t seed) {
  NoGradGuard ng;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tdist(1, engine.schedule().T);
  double total = 0.0;
  const std::size_t n = val.trials.size();
  for (std::size_t s = 0; s < n; s += 32) {
    std::vector<std::size_t> rows;
    std::vector<const EegTrial*> trials;
    std::vector<int> t;
    std::vector<std::string> captions;
    for (std::size_t i = s; i < std::min(n, s + 32); ++i) {
      rows.push_back(i);
      trials.push_back(&val.trials[i]);
      t.push_back(tdist(rng));
      captions.push_back(val.captions[i]);
    }
    const Tensor z0 = take_rows(val.latents, rows);
    const Tensor eps = gaussian_tensor(z0.shape, rng);
    total += controlnet_loss(engine, eeg_tensor(trials), z0, t, eps, captions)->value.data[0] * rows.size();
  }
  return total / n;
}

}  // namespace

void train_controlnet(Engine& engine, const ControlData& train, const ControlData& val, const ControlHyper& hyper,
                      std::uint64_t seed) {
  if (!engine.ae_trained || !engine.backbone_trained)
    fail(Errc::NotTrained, "autoencoder and backbone must be trained before the adapter");
  if (train.trials.empty()) fail(Errc::EmptySplit, "no training trials for the adapter");
  if (train.captions.size() != train.trials.size() || static_cast<std::size_t>(train.latents.dim(0)) != train.trials.size())
    fail(Errc::CountMismatch, "trials, latents and captions differ in count");
  if (hyper.batch < 1 || hyper.epochs < 0 || hyper.lr < 0) fail(Errc::ConfigValidationError, "bad adapter hyperparameters");

  const std::string frozen_before = engine.frozen_hash();
  const ParamList params = engine.trainable_params();
  set_trainable(engine.frozen_params(), false);
  set_trainable(params, true);
  Adam opt(params, hyper.lr);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tdist(1, engine.schedule().T);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::uint64_t val_seed = seed ^ 0x5851F42D4C957F2DULL;

  std::vector<Tensor> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.trials.size());
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  bool capped = false;
  for (int epoch = 0; epoch < hyper.epochs && !capped; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += hyper.batch) {
      if (hyper.max_steps > 0 && step >= hyper.max_steps) {
        capped = true;
        break;
      }
      std::vector<std::size_t> rows(order.begin() + s, order.begin() + std::min(order.size(), s + hyper.batch));
      std::vector<const EegTrial*> trials;
      std::vector<int> t;
      std::vector<std::string> captions;
      for (std::size_t r : rows) {
        trials.push_back(&train.trials[r]);
        t.push_back(tdist(rng));
        captions.push_back(u01(rng) < engine.config().caption_dropout ? std::string() : train.captions[r]);
      }
      const Tensor z0 = take_rows(train.latents, rows);
      const Tensor eps = gaussian_tensor(z0.shape, rng);
      const Var loss = controlnet_loss(engine, eeg_tensor(trials), z0, t, eps, captions);
      check_finite_loss(loss->value.data[0], "adapter", step);
      engine.control_loss.push_back(loss->value.data[0]);
      opt.zero_grad();
      backward(loss);
      if (hyper.grad_clip > 0) opt.clip_grad_norm(hyper.grad_clip);
      opt.step();
      ++step;
    }
    if (!val.trials.empty()) {
      const double v = validation_loss(engine, val, val_seed);
      engine.control_val_loss.push_back(v);
      if (v < best_val) {
        best_val = v;
        best = snapshot(params);
      }
    }
  }
  if (!best.empty()) restore(params, best);
  set_trainable(engine.all_params(), true);

  if (engine.frozen_hash() != frozen_before)
    fail(Errc::FrozenWeightMutation, "frozen backbone weights changed during adapter training");
  engine.controlnet_trained = true;
}

ControlData make_control_data(const Engine& engine, const Dataset& dataset, std::string_view split,
                              const Montage& montage, const DecoderModel& decoder) {
  if (decoder.config().montage != montage.name)
    fail(Errc::ChannelMismatch, "decoder was trained for montage '" + decoder.config().montage + "', not '" +
                                    montage.name + "'");
  if (engine.config().eeg_channels != montage.size())
    fail(Errc::ChannelMismatch, "engine expects " + std::to_string(engine.config().eeg_channels) + " channels, montage " +
                                    montage.name + " has " + std::to_string(montage.size()));
  ControlData out;
  const auto rows = channel_map(dataset.manifest(), montage);
  std::vector<StimulusImage> images;
  for (const auto& t : dataset.load_split(split)) {
    out.trials.push_back(select_channels(t, rows, montage.name));
    images.push_back(dataset.load_image(t.image_id));
  }
  if (out.trials.empty()) return out;
  out.latents = encode_images(engine, images);
  const auto scores = decode_batch(decoder, out.trials);
  for (const auto& s : scores) out.captions.push_back(make_caption(s, decoder.config().class_names).text);
  return out;
}

// --- sampling -------------------------------------------------------------------

std::vector<int> timestep_sequence(int t_start, int steps) {
  if (t_start <= 0) return {0};
  const int s = std::clamp(steps, 1, t_start);
  std::vector<int> out;
  for (int i = 0; i <= s; ++i) {
    const int t = static_cast<int>(std::lround(static_cast<double>(t_start) * (s - i) / s));
    if (out.empty() || t < out.back()) out.push_back(t);
  }
  return out;
}

namespace {

template <typename EpsFn>
Tensor denoise(const Engine& engine, Tensor z, const std::vector<int>& seq, double gamma, EpsFn&& branches,
               std::mt19937_64& rng, SampleTrace* trace) {
  const auto& sch = engine.schedule();
  const double clip = engine.config().x0_clip;
  for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
    const int t = seq[k], s = seq[k + 1];
    auto [eps_u, eps_c] = branches(z, t);
    Tensor eps = guided_eps(eps_u, eps_c, gamma);
    if (trace) {
      trace->t.push_back(t);
      if (trace->record_eps) {
        trace->eps_u.push_back(eps_u);
        trace->eps_c.push_back(eps_c);
        trace->eps_hat.push_back(eps);
      }
    }
    const double ab_t = sch.alpha_bar[t], ab_s = sch.alpha_bar[s];
    const double a_t = std::sqrt(ab_t), b_t = std::sqrt(1.0 - ab_t);
    Tensor x0(z.shape);
    for (std::size_t i = 0; i < z.size(); ++i) {
      double v = (z.data[i] - b_t * eps.data[i]) / a_t;
      if (clip > 0) v = std::clamp(v, -clip, clip);
      x0.data[i] = v;
    }
    if (s == 0) {
      z = std::move(x0);
      break;
    }
    const double sigma = engine.config().eta * std::sqrt((1.0 - ab_s) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_s);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_s - sigma * sigma));
    const Tensor noise = gaussian_tensor(z.shape, rng);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double e = (z.data[i] - a_t * x0.data[i]) / b_t;
      z.data[i] = std::sqrt(ab_s) * x0.data[i] + dir * e + sigma * noise.data[i];
    }
  }
  return z;
}

}  // namespace

StimulusImage sample(const Engine& engine, const EegTrial& eeg, const std::string& caption, double gamma, int steps,
                     std::uint64_t seed, SampleTrace* trace) {
  if (!engine.controlnet_trained) fail(Errc::NotTrained, "engine has no trained adapter");
  if (!(gamma >= 0.0)) fail(Errc::ConfigValidationError, "guidance scale must be >= 0");
  if (steps < 1) fail(Errc::ConfigValidationError, "steps must be >= 1");
  NoGradGuard ng;
  const auto& c = engine.config();
  std::mt19937_64 rng(seed);
  Tensor z = gaussian_tensor({1, c.latent_channels, c.latent_size(), c.latent_size()}, rng);
  const Var z_eeg = engine.project(constant(eeg_tensor({&eeg})));
  auto branches = [&](const Tensor& zt, int t) {
    const Var zv = constant(zt);
    const Var c_eeg = engine.inject(zv, z_eeg);
    Tensor ec = engine.predict_eps(zv, {t}, {caption}, c_eeg)->value;
    Tensor eu = engine.predict_eps(zv, {t}, {std::string()})->value;
    return std::pair<Tensor, Tensor>(std::move(eu), std::move(ec));
  };
  z = denoise(engine, std::move(z), timestep_sequence(engine.schedule().T, steps), gamma, branches, rng, trace);
  return decode_latent(engine, z, eeg.trial_id);
}

StimulusImage sample(const Engine& engine, const DecoderModel& decoder, const EegTrial& eeg, double gamma, int steps,
                     std::uint64_t seed) {
  const CaptionControl cap = make_caption(decode(decoder, eeg), decoder.config().class_names);
  return sample(engine, eeg, cap.text, gamma, steps, seed);
}

StimulusImage img2img(const Engine& engine, const StimulusImage& init, const std::string& prompt, double strength,
                      double gamma, int steps, std::uint64_t seed) {
  if (!(strength > 0.0 && strength <= 1.0))
    fail(Errc::BadStrength, "strength " + std::to_string(strength) + " outside (0, 1]");
  if (!engine.backbone_trained) fail(Errc::NotTrained, "backbone is not trained");
  if (!(gamma >= 0.0)) fail(Errc::ConfigValidationError, "guidance scale must be >= 0");
  const int T = engine.schedule().T;
  const int t_start = static_cast<int>(std::lround(strength * T));
  const Tensor z0 = encode_images(engine, {init});
  if (t_start == 0) return decode_latent(engine, z0, init.image_id);
  NoGradGuard ng;
  std::mt19937_64 rng(seed);
  const Tensor eps = gaussian_tensor(z0.shape, rng);
  Tensor z = forward_diffuse(z0, t_start, eps, engine.schedule());
  const int steps_eff = std::max(1, static_cast<int>(std::lround(steps * strength)));
  auto branches = [&](const Tensor& zt, int t) {
    const Var zv = constant(zt);
    Tensor ec = engine.predict_eps(zv, {t}, {prompt})->value;
    Tensor eu = engine.predict_eps(zv, {t}, {std::string()})->value;
    return std::pair<Tensor, Tensor>(std::move(eu), std::move(ec));
  };
  z = denoise(engine, std::move(z), timestep_sequence(t_start, steps_eff), gamma, branches, rng, nullptr);
  StimulusImage out = decode_latent(engine, z, init.image_id);
  return out;
}

// --- persistence ------------------------------------------------------------------

void save_engine(const fs::path& path, const Engine& engine) {
  Json cfg = {{"engine", engine.config().to_json()},
              {"schedule", engine.schedule().to_json()},
              {"vocab", engine.text.vocab()},
              {"ae_scale", engine.ae.scale},
              {"ae_trained", engine.ae_trained},
              {"backbone_trained", engine.backbone_trained},
              {"controlnet_trained", engine.controlnet_trained},
              {"frozen_sha256", engine.frozen_hash()},
              {"control_loss", engine.control_loss},
              {"control_val_loss", engine.control_val_loss}};
  save_checkpoint(path, "engine", cfg, engine.all_params());
}

Engine load_engine(const fs::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "engine") fail(Errc::ConfigValidationError, path.string() + " is a '" + ck.kind + "' checkpoint");
  Engine e(EngineConfig::from_json(ck.config.at("engine")));
  if (ck.config.value("vocab", std::vector<std::string>{}) != e.text.vocab())
    fail(Errc::ConfigValidationError, path.string() + ": vocabulary differs from the configured class names");
  assign_params(ck, e.all_params());
  e.ae.scale = ck.config.value("ae_scale", 1.0);
  e.ae_trained = ck.config.value("ae_trained", false);
  e.backbone_trained = ck.config.value("backbone_trained", false);
  e.controlnet_trained = ck.config.value("controlnet_trained", false);
  e.control_loss = ck.config.value("control_loss", std::vector<double>{});
  e.control_val_loss = ck.config.value("control_val_loss", std::vector<double>{});
  return e;
}

std::string format_gamma(double gamma) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", gamma);
  return buf;
}

std::string generation_filename(const std::string& trial_id, int sample_index, double gamma) {
  return trial_id + "_" + std::to_string(sample_index) + "_" + format_gamma(gamma) + ".png";
}

void append_jsonl(const fs::path& path, const Json& record) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) fail(Errc::IoError, "cannot append to " + path.string());
  out << record.dump() << "\n";
}

}  // namespace eegrecon
