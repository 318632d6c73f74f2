// One PASS/FAIL line per acceptance criterion, with the measured quantity
// and wall time. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "eegrecon/boosting.hpp"
#include "eegrecon/metrics.hpp"
#include "eegrecon/pipeline.hpp"
#include "eegrecon/prompts.hpp"
#include "eegrecon/study_stats.hpp"
#include "support/gradcheck.hpp"
#include "support/planted.hpp"
#include "support/toy_pipeline.hpp"

using namespace eegrecon;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;
std::FILE* report = nullptr;  // optional copy of the lines

void criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool in_time = s < limit_s;
  const bool pass = o.pass && in_time;
  failures += !pass;
  for (std::FILE* f : {stdout, report}) {
    if (!f) continue;
    std::fprintf(f, "AC%-2d %s  %s: %s [%.2f s, limit %.0f s%s]\n", id, pass ? "PASS" : "FAIL", name.c_str(),
                 o.detail.c_str(), s, limit_s, in_time ? "" : ", too slow");
    std::fflush(f);
  }
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

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

EegTrial random_trial(int channels, int samples, std::mt19937_64& rng, std::string id) {
  std::normal_distribution<double> n;
  EegTrial t;
  t.trial_id = std::move(id);
  t.channels = channels;
  t.samples = samples;
  for (int i = 0; i < channels * samples; ++i) t.data.push_back(static_cast<float>(n(rng)));
  return t;
}

// exp(mean_x sum_y p log(p / marginal)), one split
double brute_is(const std::vector<std::vector<double>>& p) {
  const std::size_t k = p[0].size();
  std::vector<double> marg(k, 0.0);
  for (const auto& r : p)
    for (std::size_t j = 0; j < k; ++j) marg[j] += r[j] / p.size();
  double kl = 0.0;
  for (const auto& r : p)
    for (std::size_t j = 0; j < k; ++j)
      if (r[j] > 0) kl += r[j] * std::log(r[j] / marg[j]);
  return std::exp(kl / p.size());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

testsupport::ToyPipeline& toy() {
  static testsupport::ToyPipeline p([] {
    testsupport::ToyOptions o;
    o.control_steps = 0;
    return o;
  }());
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1 && !(report = std::fopen(argv[1], "w"))) {
    std::fprintf(stderr, "cannot write %s\n", argv[1]);
    return 1;
  }
  criterion(1, "zero-init injection is a no-op", 1, [] {
    const Engine e(tiny_config());
    std::mt19937_64 rng(9);
    int exact = 0;
    for (int i = 0; i < 100; ++i) {
      const nn::Tensor zt = gaussian_tensor({2, 4, 4}, rng), ze = gaussian_tensor({2, 4, 4}, rng);
      exact += inject(e, zt, ze).data == zt.data;
    }
    return Outcome{exact == 100, std::to_string(exact) + "/100 bit-exact"};
  });

  criterion(2, "frozen weights unchanged by 100 adapter steps", 300, [] {
    auto& p = toy();
    Engine& e = *p.engine;
    const std::string before = e.frozen_hash();
    ControlHyper h;
    h.max_steps = 100;
    train_controlnet(e, p.train, p.val, h, 77);
    const std::string after = e.frozen_hash();
    return Outcome{before == after && e.control_loss.size() == 100,
                   "sha256 " + before.substr(0, 16) + " -> " + after.substr(0, 16) + ", " +
                       std::to_string(e.control_loss.size()) + " steps"};
  });

  criterion(3, "forward diffusion numerics", 10, [] {
    const auto s = make_default_schedule(200);
    std::mt19937_64 rng(1);
    const nn::Tensor z0 = gaussian_tensor({4, 8, 8}, rng), eps = gaussian_tensor({4, 8, 8}, rng);
    const bool identity = forward_diffuse(z0, 0, eps, s).data == z0.data;
    const nn::Tensor a = gaussian_tensor({10000}, rng), e = gaussian_tensor({10000}, rng);
    const nn::Tensor zt = forward_diffuse(a, s.T, e, s);
    const double mean = std::accumulate(zt.data.begin(), zt.data.end(), 0.0) / zt.size();
    double var = 0.0;
    for (double v : zt.data) var += (v - mean) * (v - mean);
    var /= zt.size() - 1;
    return Outcome{identity && std::abs(var - 1.0) < 0.05,
                   std::string("t=0 identity ") + (identity ? "exact" : "broken") + fmt(", var at t=T %.4f", var)};
  });

  criterion(4, "loss gradients match central differences", 60, [] {
    Engine e(tiny_config());
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0.0, 0.3);
    // zero convs would zero out every upstream gradient
    for (const nn::Conv2d* z : {&e.adapter.z0, &e.adapter.z1, &e.adapter.z3, &e.adapter.zmid, &e.zconv}) {
      for (auto& v : z->weight->value.data) v = n(rng);
      for (auto& v : z->bias->value.data) v = n(rng);
    }
    nn::set_trainable(e.frozen_params(), false);
    std::vector<EegTrial> trials{random_trial(4, 16, rng, "a"), random_trial(4, 16, rng, "b")};
    const nn::Tensor eeg = eeg_tensor({&trials[0], &trials[1]});
    const nn::Tensor z0 = gaussian_tensor({2, 2, 4, 4}, rng), eps = gaussian_tensor({2, 2, 4, 4}, rng);
    auto loss = [&] { return controlnet_loss(e, eeg, z0, {3, 150}, eps, {"Image of red circle", ""}); };
    double worst = 0.0;
    int checked = 0;
    std::string detail;
    for (const std::string prefix : {"fproj", "zconv", "adapter"}) {
      nn::ParamList group;
      for (const auto& p : e.trainable_params())
        if (p.name.rfind(prefix, 0) == 0) group.push_back(p);
      const auto r = testsupport::grad_check(loss, group, 4, 1e-5);
      worst = std::max(worst, r.max_rel_error);
      checked += r.checked;
      detail += prefix + fmt(" %.1e ", r.max_rel_error);
    }
    return Outcome{worst < 1e-4 && checked > 0, detail + "max rel error, " + std::to_string(checked) + " entries"};
  });

  criterion(5, "guidance algebra", 60, [] {
    auto& p = toy();
    const Engine& e = *p.engine;
    const EegTrial& trial = p.val.trials[0];
    const std::string& caption = p.val.captions[0];
    SampleTrace tr;
    sample(e, trial, caption, 1.0, 10, 5, &tr);
    double worst = 0.0;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
      const auto e0 = guided_eps(tr.eps_u[k], tr.eps_c[k], 0.0);
      const auto e1 = guided_eps(tr.eps_u[k], tr.eps_c[k], 1.0);
      const auto e2 = guided_eps(tr.eps_u[k], tr.eps_c[k], 2.0);
      for (std::size_t i = 0; i < e0.size(); ++i) worst = std::max(worst, std::abs(e2.data[i] - 2 * e1.data[i] + e0.data[i]));
    }
    const auto g0 = sample(e, trial, caption, 0.0, 20, 11);
    const bool independent = sample(e, p.val.trials.back(), "Image of something else", 0.0, 20, 11).pixels == g0.pixels;
    return Outcome{worst < 1e-6 && independent && !tr.t.empty(),
                   fmt("max second difference %.1e", worst) + (independent ? ", gamma=0 ignores EEG and caption" : ", gamma=0 depends on inputs")};
  });

  criterion(6, "metric oracles", 60, [] {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    std::vector<std::vector<double>> f(64, std::vector<double>(8));
    for (auto& r : f)
      for (auto& v : r) v = n(rng);
    const auto s = summarize(f);
    const double self = fid(s, s);
    const double scalar = fid({{0.0}, {1.0}, 2}, {{1.0}, {4.0}, 2});  // (0-1)^2 + 1 + 4 - 2 sqrt(4)

    const int k = 6;
    std::vector<std::vector<double>> uniform(24, std::vector<double>(k, 1.0 / k)), onehot, rnd;
    for (int i = 0; i < 24; ++i) {
      std::vector<double> r(k, 0.0);
      r[i % k] = 1.0;
      onehot.push_back(r);
    }
    std::gamma_distribution<double> g(0.5);
    for (int i = 0; i < 24; ++i) {
      std::vector<double> r(k);
      double t = 0;
      for (auto& v : r) t += v = g(rng) + 1e-12;
      for (auto& v : r) v /= t;
      rnd.push_back(r);
    }
    const double is_u = inception_score_from_probs(uniform, 1), is_1 = inception_score_from_probs(onehot, 1);
    const double is_r = inception_score_from_probs(rnd, 1);
    const double is_err = std::max({std::abs(is_u - brute_is(uniform)), std::abs(is_1 - brute_is(onehot)), std::abs(is_r - brute_is(rnd))});

    const ColorHistogramBackbone hist;
    const auto img = draw_class_icon(2, 32, 3, "x");
    const double pd = perceptual_distance(img, img, hist);

    const bool ok = std::abs(self) <= 1e-6 && scalar == 2.0 && is_u == 1.0 && is_1 == k && is_r >= 1.0 && is_r <= k &&
                    is_err < 1e-9 && pd == 0.0;
    return Outcome{ok, fmt("FID(X,X) %.1e, scalar FID %.17g, IS uniform %.17g one-hot %.17g", self, scalar, is_u, is_1) +
                           fmt(", IS vs brute force %.1e, d(x,x) %g", is_err, pd)};
  });

  criterion(7, "decoder sanity on the 4-class synthetic set", 600, [] {
    testsupport::TempDir d;
    SyntheticSpec spec;
    generate_synthetic(spec, d.path());
    const Dataset ds = load_dataset(d.path());
    const Montage m = flat_montage("synthetic-16", ds.manifest().electrode_labels);
    DecoderHyper h;
    h.epochs = 60;
    const DecoderModel model = train_decoder(ds, m, h, 3);
    const double val = model.best_epoch > 0 ? model.history[model.best_epoch - 1].val_acc : 0.0;
    std::vector<std::vector<double>> scores;
    std::vector<int> labels;
    for (const auto& t : ds.load_split("val")) {
      scores.push_back(decode(model, t));
      labels.push_back(t.class_label);
    }
    const double kn = topk_accuracy(scores, labels, spec.num_classes, spec.num_classes, 1);
    return Outcome{val >= 0.9 && kn == 1.0, fmt("val top-1 %.3f, top-%g with %g ways %.17g", val, spec.num_classes, spec.num_classes, kn)};
  });

  // one planted study feeds both the density trend and the ablation oracle
  std::unique_ptr<testsupport::PlantedStudy> study;
  std::unique_ptr<DecoderModel> full;
  const testsupport::PlantedOptions popts;
  double planted_build_s = 0.0;
  {
    const auto t0 = Clock::now();
    study = std::make_unique<testsupport::PlantedStudy>(popts);
    full = std::make_unique<DecoderModel>(study->train_on(study->train, study->val, study->montage.size(), "std-128", popts));
    planted_build_s = std::chrono::duration<double>(Clock::now() - t0).count();
  }

  criterion(8, "channel-density trend", 1200 - planted_build_s, [&] {
    const Montage& red = study->reduced;
    int kept_informative = red.index_of(study->informative_label) >= 0;
    const auto tr = study->load("train", red), va = study->load("val", red), te = study->load("test", red);
    const DecoderModel small = study->train_on(tr, va, red.size(), red.name, popts);
    const double a_full = evaluate_accuracy(*full, study->test, {}).top1;
    const double a_red = evaluate_accuracy(small, te, {}).top1;
    return Outcome{a_full - a_red >= 0.1 && kept_informative == 0,
                   fmt("std-128 top-1 %.3f vs coverage-preserving 24 top-1 %.3f (margin %.3f)", a_full, a_red, a_full - a_red) +
                       ", informative channels kept " + std::to_string(kept_informative) + "/1" +
                       fmt(" (shared setup %.0f s)", planted_build_s)};
  });

  criterion(9, "ablation oracle", 900 - planted_build_s, [&] {
    const double chance = 1.0 / study->num_classes;
    const Accuracy base = evaluate_accuracy(*full, study->test, {});
    const auto sweep = electrode_sweep(study->test, *full, study->montage, {});
    double worst_noise = 0.0;
    for (int i = 0; i < study->montage.size(); ++i)
      if (i != study->informative_index) worst_noise = std::max(worst_noise, std::abs(base.top1 - sweep[i].top1));
    const double planted = sweep[study->informative_index].top1;
    const auto regions = region_sweep(study->test, *full, study->montage, RegionMode::ZeroFill, {}, {});
    const RegionKnockoutResult* largest = &regions[0];
    for (const auto& r : regions)
      if (r.top1 < largest->top1) largest = &r;
    const bool ok = std::abs(planted - chance) <= 0.1 && worst_noise < 0.05 && largest->region == Region::Occipital;
    return Outcome{ok, fmt("baseline %.3f, ", base.top1) + study->informative_label + fmt(" knockout %.3f (chance %.2f)", planted, chance) +
                           fmt(", worst noise-channel change %.3f, largest region drop ", worst_noise) +
                           std::string(region_name(largest->region)) + fmt(" %.3f", base.top1 - largest->top1)};
  });
  full.reset();
  study.reset();

  criterion(10, "boosting direction and prompt fixtures", 1200, [] {
    const auto dir = std::filesystem::path(EEGRECON_FIXTURE_DIR) / "prompts";
    const bool golden = slurp(dir / "system.txt") == kDescriberSystemPrompt && slurp(dir / "user.txt") == kDescriberUserPrompt &&
                        slurp(dir / "refinement.txt") == kRefinementTemplate;
    auto& p = toy();
    const Engine& e = *p.engine;
    const auto& man = p.dataset->manifest();
    std::vector<StimulusImage> train_images;
    std::vector<int> labels;
    for (const auto& id : man.splits.train) {
      train_images.push_back(p.dataset->load_image(man.trial(id).image_id));
      labels.push_back(man.trial(id).class_label);
    }
    const ToyCnnBackbone cnn = train_toy_cnn(train_images, labels, man.num_classes, {}, 4);
    MockDescriber mock;
    std::vector<StimulusImage> raw, boosted;
    for (std::size_t i = 0; i < p.val.trials.size(); ++i)
      for (int k = 0; k < 2; ++k) {
        const auto img = sample(e, p.val.trials[i], p.val.captions[i], 7.5, 25, derive_seed(1, "raw", i, k));
        raw.push_back(img);
        const std::string cls = man.class_names[argmax(decode(*p.decoder, p.val.trials[i]))];
        boosted.push_back(boost(e, img, mock, {p.val.trials[i].trial_id, cls}, BoostConfig{}, derive_seed(1, "boost", i, k)).image);
      }
    const int splits = std::max(1, std::min(10, static_cast<int>(raw.size()) / 4));
    const double is_raw = inception_score(raw, cnn, splits), is_boost = inception_score(boosted, cnn, splits);
    return Outcome{golden && is_boost >= is_raw - 0.5,
                   fmt("IS raw %.3f, boosted %.3f over %g images", is_raw, is_boost, raw.size()) +
                       (golden ? ", prompts byte-identical to fixtures" : ", prompt fixtures differ")};
  });

  criterion(11, "study statistics", 1, [] {
    bool equal = true;
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 200 && equal; ++rep) {
      const int conf = 1 + static_cast<int>(rng() % 5);
      std::vector<PreferenceTrial> t;
      for (int i = 0, n = 1 + static_cast<int>(rng() % 600); i < n; ++i) t.push_back({"t", 128, rng() % 2 == 0, conf});
      equal = weighted_preference_rate(t) == preference_rate(t);
    }
    const auto r = binomial_test(554, 0.7834);
    const double hand = (0.7834 - 0.5) / std::sqrt(0.5 * 0.5 / 554);
    return Outcome{equal && std::abs(r.z - hand) < 1e-2 && std::round(r.z * 10) / 10 == 13.3 && r.p_value < 1e-6,
                   std::string(equal ? "weighted == unweighted" : "weighted != unweighted") +
                       fmt(", z %.4f (hand %.4f, reads 13.3 to one decimal), p %.2e", r.z, hand, r.p_value)};
  });

  criterion(12, "end-to-end determinism", 2700, [] {
    testsupport::TempDir d("eegrecon-acceptance");
    RunConfig a;
    a.dataset = d / "data";
    a.output = d / "run-a";
    RunConfig b = a;
    b.output = d / "run-b";
    run_pipeline(a);
    run_pipeline(b);
    const RunLayout la{a.output}, lb{b.output};
    int same = 0, rows = 0;
    for (const char* f : {"metrics.csv", "gains.csv", "decoder_accuracy.csv"}) {
      same += sha256_file(la.reports() / f) == sha256_file(lb.reports() / f);
    }
    std::istringstream csv(read_text(la.reports() / "metrics.csv"));
    for (std::string line; std::getline(csv, line);) rows += !line.empty();
    return Outcome{same == 3 && rows == 17, std::to_string(same) + "/3 report CSVs byte-identical, metrics.csv " +
                                                std::to_string(rows - 1) + " rows, sha256 " +
                                                sha256_file(la.reports() / "metrics.csv").substr(0, 16)};
  });

  for (std::FILE* f : {stdout, report})
    if (f) std::fprintf(f, "%d of 12 criteria failed\n", failures);
  if (report) std::fclose(report);
  return failures;
}
