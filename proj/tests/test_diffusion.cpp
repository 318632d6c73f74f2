#include <doctest.h>

#include <cmath>
#include <numeric>

#include "eegrecon/engine.hpp"
#include "eegrecon/error.hpp"
#include "eegrecon/prompts.hpp"
#include "support/expect.hpp"
#include "support/gradcheck.hpp"
#include "support/toy_pipeline.hpp"

using namespace eegrecon;
using testsupport::code_of;

namespace {

// C=4, L=16, latent 4x4x2
EngineConfig tiny_config() {
  EngineConfig c;
  c.image_size = 16;
  c.ae_factor = 4;
  c.latent_channels = 2;
  c.ae_hidden = 4;
  c.c0 = 4;
  c.cond_dim = 8;
  c.time_freq = 4;
  c.text_embed = 4;
  c.eeg_channels = 4;
  c.eeg_samples = 16;
  c.proj_filters = 4;
  c.proj_bins = 4;
  c.montage = "tiny";
  c.class_names = {"red circle", "blue square"};
  c.seed = 3;
  return c;
}

EegTrial random_trial(int channels, int samples, std::mt19937_64& rng, std::string id = "t") {
  std::normal_distribution<double> n;
  EegTrial t;
  t.trial_id = std::move(id);
  t.channels = channels;
  t.samples = samples;
  for (int i = 0; i < channels * samples; ++i) t.data.push_back(static_cast<float>(n(rng)));
  return t;
}

void randomize(const nn::Conv2d& conv, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& v : conv.weight->value.data) v = n(rng);
  for (auto& v : conv.bias->value.data) v = n(rng);
}

double max_abs_diff(const nn::Tensor& a, const nn::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

double pearson(const StimulusImage& a, const StimulusImage& b) {
  const std::size_t n = a.pixels.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a.pixels[i];
    mb += b.pixels[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.pixels[i] - ma, y = b.pixels[i] - mb;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  return (saa == 0 || sbb == 0) ? 0.0 : sab / std::sqrt(saa * sbb);
}

// One lightly pretrained backbone so the adapter has room to lower the loss.
testsupport::ToyPipeline& toy() {
  static testsupport::ToyPipeline p([] {
    testsupport::ToyOptions o;
    o.backbone_steps = 60;
    o.control_steps = 200;
    return o;
  }());
  return p;
}

}  // namespace

TEST_CASE("schedule invariants") {
  const auto s = make_default_schedule(200);
  REQUIRE(s.alpha_bar.size() == 201);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.beta[1] == doctest::Approx(1e-4 * 1000.0 / 200.0).epsilon(1e-12));
  CHECK(s.beta[200] == doctest::Approx(0.02 * 1000.0 / 200.0).epsilon(1e-12));
  double prod = 1.0;
  for (int t = 1; t <= s.T; ++t) {
    prod *= 1.0 - s.beta[t];
    CHECK(std::abs(s.alpha_bar[t] - prod) < 1e-12);
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.alpha_bar[t] > 0.0);
  }
  CHECK(s.alpha_bar[200] < 1e-3);

  const auto l = make_linear_schedule(1000, 1e-4, 0.02);
  CHECK(l.beta[1] == 1e-4);
  CHECK(l.beta[1000] == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("forward diffusion numerics") {
  const auto s = make_default_schedule(200);
  std::mt19937_64 rng(1);
  const nn::Tensor z0 = gaussian_tensor({2, 8, 8}, rng);
  const nn::Tensor eps = gaussian_tensor({2, 8, 8}, rng);
  CHECK(forward_diffuse(z0, 0, eps, s).data == z0.data);
  CHECK(forward_diffuse(z0, 37, eps, s).data == forward_diffuse(z0, 37, eps, s).data);
  const nn::Tensor z = forward_diffuse(z0, 90, eps, s);
  for (std::size_t i = 0; i < z.size(); ++i)
    CHECK(z.data[i] == doctest::Approx(std::sqrt(s.alpha_bar[90]) * z0.data[i] +
                                       std::sqrt(1 - s.alpha_bar[90]) * eps.data[i]).epsilon(1e-14));

  // variance preservation over 10^4 draws, at t=T and mid-schedule
  for (int t : {s.T, 50}) {
    const nn::Tensor a = gaussian_tensor({10000}, rng), e = gaussian_tensor({10000}, rng);
    const nn::Tensor zt = forward_diffuse(a, t, e, s);
    const double mean = std::accumulate(zt.data.begin(), zt.data.end(), 0.0) / zt.size();
    double var = 0;
    for (double v : zt.data) var += (v - mean) * (v - mean);
    var /= zt.size() - 1;
    CHECK(std::abs(var - 1.0) < 0.05);
  }

  CHECK(code_of([&] { forward_diffuse(z0, 201, eps, s); }) == Errc::TimestepOutOfRange);
  CHECK(code_of([&] { forward_diffuse(z0, -1, eps, s); }) == Errc::TimestepOutOfRange);
  CHECK(code_of([&] { forward_diffuse(z0, 3, gaussian_tensor({2, 4, 4}, rng), s); }) == Errc::ShapeMismatch);
}

TEST_CASE("timestep sequences") {
  CHECK(timestep_sequence(200, 4) == std::vector<int>{200, 150, 100, 50, 0});
  CHECK(timestep_sequence(3, 10) == std::vector<int>{3, 2, 1, 0});
  CHECK(timestep_sequence(1, 1) == std::vector<int>{1, 0});
  CHECK(timestep_sequence(0, 5) == std::vector<int>{0});
}

TEST_CASE("guidance combination is affine in gamma") {
  std::mt19937_64 rng(4);
  const nn::Tensor u = gaussian_tensor({2, 3, 3}, rng), c = gaussian_tensor({2, 3, 3}, rng);
  CHECK(guided_eps(u, c, 0.0).data == u.data);
  CHECK(guided_eps(u, c, 1.0).data == c.data);
  const auto e0 = guided_eps(u, c, 0.0), e1 = guided_eps(u, c, 1.0), e2 = guided_eps(u, c, 2.0);
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(std::abs((e2.data[i] - e1.data[i]) - (e1.data[i] - e0.data[i])) < 1e-12);
}

TEST_CASE("text encoder vocabulary and null caption") {
  CHECK(TextEncoder::tokenize("Image of red-circle!") == std::vector<std::string>{"image", "of", "red", "circle"});
  const Engine e(tiny_config());
  const auto& v = e.text.vocab();
  CHECK(v[0] == kNullToken);
  CHECK(v[1] == kUnknownToken);
  CHECK(std::is_sorted(v.begin() + 2, v.end()));
  for (const auto& name : e.config().class_names)
    for (const auto& p : class_prompts(name))
      for (int id : e.text.token_ids(p)) CHECK(id >= 2);
  CHECK(e.text.token_ids("zebra") == std::vector<int>{1});
  CHECK(e.text.token_ids("") == std::vector<int>{0});
}

TEST_CASE("fresh injection is an exact no-op") {
  const Engine e(tiny_config());
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const nn::Tensor zt = gaussian_tensor({2, 4, 4}, rng);
    const nn::Tensor ze = gaussian_tensor({2, 4, 4}, rng);
    CHECK(inject(e, zt, ze).data == zt.data);
  }
  CHECK(code_of([&] { inject(e, gaussian_tensor({2, 8, 8}, rng), gaussian_tensor({2, 4, 4}, rng)); }) ==
        Errc::ShapeMismatch);
}

TEST_CASE("projection contract") {
  const Engine e(tiny_config());
  std::mt19937_64 rng(2);
  EegTrial a = random_trial(4, 16, rng);
  const nn::Tensor za = project_eeg(e, a);
  CHECK(za.shape == nn::Shape{2, 4, 4});
  for (double v : za.data) CHECK(std::isfinite(v));

  // perturbing any single channel moves the output
  for (int c = 0; c < 4; ++c) {
    EegTrial b = a;
    for (int s = 0; s < 16; ++s) b.data[c * 16 + s] += 0.5f;
    CHECK(max_abs_diff(project_eeg(e, b), za) > 0.0);
  }
  CHECK(code_of([&] { project_eeg(e, random_trial(5, 16, rng)); }) == Errc::ChannelMismatch);
}

TEST_CASE("adapter loss gradients match finite differences") {
  Engine e(tiny_config());
  std::mt19937_64 rng(21);
  // the zero convs would zero out every upstream gradient
  for (const nn::Conv2d* z : {&e.adapter.z0, &e.adapter.z1, &e.adapter.z3, &e.adapter.zmid, &e.zconv}) randomize(*z, rng);
  nn::set_trainable(e.frozen_params(), false);

  std::vector<EegTrial> trials{random_trial(4, 16, rng, "a"), random_trial(4, 16, rng, "b")};
  const nn::Tensor eeg = eeg_tensor({&trials[0], &trials[1]});
  const nn::Tensor z0 = gaussian_tensor({2, 2, 4, 4}, rng);
  const nn::Tensor eps = gaussian_tensor({2, 2, 4, 4}, rng);
  const std::vector<int> t{3, 150};
  const std::vector<std::string> captions{"Image of red circle", ""};
  auto loss = [&] { return controlnet_loss(e, eeg, z0, t, eps, captions); };

  auto group = [&](const std::string& prefix) {
    nn::ParamList out;
    for (const auto& p : e.trainable_params())
      if (p.name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
  };
  for (const std::string prefix : {"fproj", "zconv", "adapter"}) {
    const auto params = group(prefix);
    REQUIRE(!params.empty());
    const auto r = testsupport::grad_check(loss, params, 4, 1e-5);
    INFO(prefix << " worst " << r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }

  // frozen parameters receive no gradient
  nn::zero_grad(e.all_params());
  nn::backward(loss());
  for (const auto& p : e.frozen_params())
    for (double g : p.var->grad.data) CHECK(g == 0.0);
}

TEST_CASE("autoencoder shapes and identity mode") {
  Engine e(tiny_config());
  CHECK(code_of([&] { encode_image(e, make_image("odd", 15, 16)); }) == Errc::BadDimensions);

  EngineConfig c = tiny_config();
  c.image_size = 31;
  CHECK(code_of([&] { Engine bad(c); }) == Errc::BadDimensions);

  c = tiny_config();
  c.pixel_space = true;
  c.image_size = 8;
  const Engine px(c);
  CHECK(px.config().latent_channels == 3);
  StimulusImage im = make_image("x", 8, 8);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<std::uint8_t>(i * 7 % 256);
  const nn::Tensor z = encode_image(px, im);
  CHECK(z.data == to_unit_planar(im));
  CHECK(autoencoder_roundtrip(px, im).pixels == im.pixels);
}

TEST_CASE("untrained engines refuse to sample") {
  const Engine e(tiny_config());
  std::mt19937_64 rng(1);
  const EegTrial t = random_trial(4, 16, rng);
  CHECK(code_of([&] { sample(e, t, "Image of red circle", 4.0, 3, 1); }) == Errc::NotTrained);
  CHECK(code_of([&] { img2img(e, make_image("x", 16, 16), "p", 0.5, 4.0, 3, 1); }) == Errc::NotTrained);
  CHECK(code_of([&] { img2img(e, make_image("x", 16, 16), "p", 1.5, 4.0, 3, 1); }) == Errc::BadStrength);
  CHECK(code_of([&] { img2img(e, make_image("x", 16, 16), "p", 0.0, 4.0, 3, 1); }) == Errc::BadStrength);
}

TEST_CASE("generation file names") {
  CHECK(generation_filename("t00_0003", 2, 7.5) == "t00_0003_2_7.5.png");
  CHECK(generation_filename("t00_0003", 0, 4.0) == "t00_0003_0_4.png");
}

TEST_CASE("adapter training on the toy pipeline") {
  auto& p = toy();
  Engine& e = *p.engine;
  MESSAGE("toy pipeline built in " << p.seconds << " s");

  SUBCASE("autoencoder reconstructs held-out images") {
    double total = 0.0;
    int n = 0;
    for (const auto& id : p.dataset->manifest().splits.test) {
      const auto img = p.dataset->load_image(p.dataset->manifest().trial(id).image_id);
      total += psnr(img, autoencoder_roundtrip(e, img));
      ++n;
    }
    MESSAGE("held-out PSNR " << total / n << " dB");
    CHECK(total / n > 20.0);
  }

  SUBCASE("training loss falls") {
    const auto& L = e.control_loss;
    REQUIRE(L.size() == 200);
    const double first = std::accumulate(L.begin(), L.begin() + 10, 0.0) / 10;
    const double last = std::accumulate(L.end() - 10, L.end(), 0.0) / 10;
    MESSAGE("adapter loss " << first << " -> " << last);
    CHECK(last <= 0.8 * first);
    CHECK(!e.control_val_loss.empty());
  }

  SUBCASE("trained injection differs from z_t") {
    std::mt19937_64 rng(3);
    const nn::Tensor zt = gaussian_tensor({4, 8, 8}, rng);
    CHECK(max_abs_diff(inject(e, zt, project_eeg(e, p.val.trials[0])), zt) > 0.0);
  }

  SUBCASE("frozen set is untouched by further adapter steps") {
    const std::string before = e.frozen_hash();
    const auto trainable_before = hash_params(e.trainable_params());
    ControlHyper h;
    h.max_steps = 100;
    h.batch = 8;
    // copies share parameter nodes, so train a reload instead
    testsupport::TempDir d;
    save_engine(d / "e.ckpt", e);
    Engine fresh = load_engine(d / "e.ckpt");
    REQUIRE(fresh.frozen_hash() == before);
    train_controlnet(fresh, p.train, {}, h, 77);
    CHECK(fresh.frozen_hash() == before);
    CHECK(hash_params(fresh.trainable_params()) != trainable_before);
  }

  SUBCASE("sampling") {
    const EegTrial& trial = p.val.trials[0];
    const std::string& caption = p.val.captions[0];
    const auto a = sample(e, trial, caption, 4.0, 20, 11);
    CHECK(a.height == 32);
    CHECK(a.width == 32);
    CHECK(sample(e, trial, caption, 4.0, 20, 11).pixels == a.pixels);
    CHECK(sample(e, trial, caption, 7.5, 20, 11).pixels != a.pixels);

    // gamma = 0 ignores the EEG and the caption entirely
    const auto g0 = sample(e, trial, caption, 0.0, 20, 11);
    CHECK(sample(e, p.val.trials.back(), "Image of something else", 0.0, 20, 11).pixels == g0.pixels);

    // per-step branch algebra
    SampleTrace tr0, tr1;
    sample(e, trial, caption, 0.0, 10, 5, &tr0);
    sample(e, trial, caption, 1.0, 10, 5, &tr1);
    REQUIRE(tr0.t.size() == 10);
    for (std::size_t k = 0; k < tr0.t.size(); ++k) {
      CHECK(tr0.eps_hat[k].data == tr0.eps_u[k].data);
      CHECK(tr1.eps_hat[k].data == tr1.eps_c[k].data);
      const auto e0 = guided_eps(tr1.eps_u[k], tr1.eps_c[k], 0.0);
      const auto e1 = guided_eps(tr1.eps_u[k], tr1.eps_c[k], 1.0);
      const auto e2 = guided_eps(tr1.eps_u[k], tr1.eps_c[k], 2.0);
      double worst = 0.0;
      for (std::size_t i = 0; i < e0.size(); ++i)
        worst = std::max(worst, std::abs(e2.data[i] - 2 * e1.data[i] + e0.data[i]));
      CHECK(worst < 1e-6);
    }
    CHECK(code_of([&] { sample(e, trial, caption, -1.0, 5, 1); }) == Errc::ConfigValidationError);
  }

  SUBCASE("decoder-captioned sampling") {
    const auto a = sample(e, *p.decoder, p.val.trials[0], 4.0, 10, 2);
    const auto cap = make_caption(decode(*p.decoder, p.val.trials[0]), p.decoder->config().class_names);
    CHECK(sample(e, p.val.trials[0], cap.text, 4.0, 10, 2).pixels == a.pixels);
  }

  SUBCASE("img2img strength limits") {
    const auto init = p.dataset->load_image(p.dataset->manifest().trial(p.dataset->manifest().splits.test[0]).image_id);
    const auto rt = autoencoder_roundtrip(e, init);
    const std::string prompt = compose_prompt("a red circle").text;
    const auto tiny = img2img(e, init, prompt, 1.0 / e.schedule().T, 7.5, 50, 3);
    CHECK(tiny.height == init.height);
    CHECK(psnr(tiny, rt) > 30.0);

    double c_low = 0.0, c_full = 0.0;
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
      c_low += pearson(img2img(e, init, prompt, 0.2, 7.5, 20, seed), init);
      c_full += pearson(img2img(e, init, prompt, 1.0, 7.5, 20, seed), init);
    }
    MESSAGE("mean correlation with init: s=0.2 " << c_low / 16 << ", s=1 " << c_full / 16);
    CHECK(c_full < c_low);
  }

  SUBCASE("checkpoint round trip") {
    testsupport::TempDir d;
    save_engine(d / "engine.ckpt", e);
    const Engine back = load_engine(d / "engine.ckpt");
    CHECK(back.frozen_hash() == e.frozen_hash());
    CHECK(hash_params(back.all_params()) == hash_params(e.all_params()));
    CHECK(back.controlnet_trained);
    CHECK(sample(back, p.val.trials[1], p.val.captions[1], 7.5, 10, 4).pixels ==
          sample(e, p.val.trials[1], p.val.captions[1], 7.5, 10, 4).pixels);
  }
}

TEST_CASE("adapter hyperparameters at full scale are accepted") {
  ControlHyper h;
  h.lr = 1e-5;
  h.batch = 32;
  h.epochs = 100;
  const Json j = h.to_json();
  CHECK(j["lr"] == 1e-5);
  CHECK(j["batch"] == 32);
  CHECK(j["epochs"] == 100);
}

TEST_CASE("adapter training needs a pretrained backbone") {
  Engine e(tiny_config());
  ControlData d;
  CHECK(code_of([&] { train_controlnet(e, d, d, {}, 1); }) == Errc::NotTrained);
}
