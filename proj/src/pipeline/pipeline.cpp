#include "eegrecon/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "eegrecon/error.hpp"
#include "eegrecon/study_stats.hpp"

namespace eegrecon {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// --- config parsing -------------------------------------------------------------

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (j.is_null()) return;
  if (!j.is_object()) fail(Errc::ConfigValidationError, where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) fail(Errc::ConfigValidationError, "unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  return j.contains(key) ? j.at(key) : empty;
}

Json desk_engine_defaults() {
  return {{"c0", 16}, {"cond_dim", 32}, {"time_freq", 16}, {"text_embed", 16}, {"ae_hidden", 16}, {"proj_filters", 16}};
}

std::string now_utc() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

fs::path montages_root(const RunConfig& cfg) { return cfg.montage_dir.empty() ? default_montage_dir() : cfg.montage_dir; }

Montage montage_named(const RunConfig& cfg, const std::string& name) { return load_montage(montages_root(cfg), name); }

void require(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) fail(Errc::MissingPrerequisite, what + " not found: " + p.string());
}

Dataset open_dataset(const RunConfig& cfg) {
  require(cfg.dataset / "manifest.json", "dataset manifest (run prepare first)");
  return load_dataset(cfg.dataset);
}

std::vector<EegTrial> projected_split(const Dataset& ds, std::string_view split, const Montage& m, int limit = 0) {
  const auto rows = channel_map(ds.manifest(), m);
  std::vector<EegTrial> out;
  for (const auto& t : ds.load_split(split)) {
    if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    out.push_back(select_channels(t, rows, m.name));
  }
  return out;
}

std::string fmt6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::vector<Json> out;
  std::istringstream in(read_text(path));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(Json::parse(line));
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<Json>& records) {
  std::string text;
  for (const auto& r : records) text += r.dump() + "\n";
  write_text(path, text);
}

void reset_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

fs::path write_manifest(const RunConfig& cfg, const std::string& command, const std::vector<fs::path>& outputs,
                        Json extra = Json::object()) {
  const RunLayout L{cfg.output};
  Json outs = Json::array();
  for (const auto& p : outputs)
    outs.push_back({{"path", fs::relative(p, cfg.output).generic_string()}, {"sha256", sha256_file(p)}});
  Json j{{"command", command},
         {"config_hash", cfg.hash()},
         {"config", cfg.to_json()},
         {"seeds", {{"run", cfg.seed}, {"synthetic", cfg.synthetic.seed}, {"derivation", "splitmix64 over fnv1a(tag) ^ run seed and item indices"}}},
         {"versions", {{"eegrecon", kVersion}, {"compiler", __VERSION__}, {"cplusplus", __cplusplus}}},
         {"dataset", fs::absolute(cfg.dataset).string()},
         {"created_utc", now_utc()},
         {"outputs", outs}};
  j.update(extra);
  const fs::path path = L.manifest(command);
  write_text(path, j.dump(2) + "\n");
  return path;
}

// Per-montage engine sharing the base autoencoder and backbone.
Engine engine_for_montage(const Engine& base, const Montage& m, std::uint64_t seed) {
  EngineConfig c = base.config();
  c.eeg_channels = m.size();
  c.montage = m.name;
  c.seed = seed;
  Engine e(c);
  nn::copy_values(base.frozen_params(), e.frozen_params());
  e.ae.scale = base.ae.scale;
  e.ae_trained = base.ae_trained;
  e.backbone_trained = base.backbone_trained;
  e.reset_adapter();
  return e;
}

std::vector<fs::path> files_in(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

// --- RunConfig -----------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t x = splitmix(base ^ fnv1a(tag));
  x = splitmix(x ^ splitmix(a + 1));
  x = splitmix(x ^ splitmix(b + 2));
  return splitmix(x ^ splitmix(c + 3));
}

fs::path RunLayout::generated(const std::string& montage, double gamma) const {
  return root / "generated" / montage / ("g" + format_gamma(gamma));
}

fs::path RunLayout::boosted(const std::string& montage, double gamma) const {
  return root / "boosted" / montage / ("g" + format_gamma(gamma));
}

Json RunConfig::to_json() const {
  Json j;
  j["dataset"] = dataset.string();
  j["output"] = output.string();
  j["montage_dir"] = montage_dir.string();
  j["montages"] = montages;
  j["gammas"] = gammas;
  j["samples_per_trial"] = samples_per_trial;
  j["seed"] = seed;
  j["synthetic"] = {{"enabled", synthetic.enabled},
                    {"num_classes", synthetic.num_classes},
                    {"n_per_class", synthetic.n_per_class},
                    {"samples", synthetic.samples},
                    {"image_size", synthetic.image_size},
                    {"layout", synthetic.layout},
                    {"informative_region", synthetic.informative_region},
                    {"informative_channels", synthetic.informative_channels},
                    {"seed", synthetic.seed}};
  j["decoder"] = decoder.to_json();
  j["decoder"]["hidden"] = decoder_hidden;
  j["decoder"]["layers"] = decoder_layers;
  Json eng = desk_engine_defaults();
  eng.merge_patch(engine.is_null() ? Json::object() : engine);
  j["engine"] = eng;
  j["autoencoder"] = {{"epochs", autoencoder.epochs}, {"batch", autoencoder.batch}, {"lr", autoencoder.lr},
                      {"kl_weight", autoencoder.kl_weight}};
  j["backbone"] = {{"steps", backbone.steps}, {"batch", backbone.batch}, {"lr", backbone.lr}};
  j["controlnet"] = controlnet.to_json();
  j["controlnet"]["max_steps"] = controlnet.max_steps;
  j["controlnet"]["grad_clip"] = controlnet.grad_clip;
  j["generate"] = {{"steps", sample_steps}, {"split", generate_split}, {"max_trials", max_trials}};
  j["boost"] = boost.to_json();
  j["boost"]["describer"] = describer;
  j["boost"]["remote"] = remote.to_json();
  j["evaluate"] = {{"backbone", eval_backbone},
                   {"is_splits", is_splits},
                   {"ways", eval_ways},
                   {"top_k", eval_top_k},
                   {"classifier", {{"epochs", classifier.epochs}, {"batch", classifier.batch}, {"lr", classifier.lr}}}};
  j["ablation"] = {{"montage", ablation_montage}, {"region_mode", region_mode_name(region_mode)}, {"threads", ablation_threads}};
  j["study"] = {{"input", study_input.string()}};
  return j;
}

RunConfig RunConfig::from_json(const Json& j) {
  RunConfig c;
  try {
    check_keys(j, {"dataset", "output", "montage_dir", "montages", "gammas", "samples_per_trial", "seed", "synthetic",
                   "decoder", "engine", "autoencoder", "backbone", "controlnet", "generate", "boost", "evaluate",
                   "ablation", "study"},
               "");
    c.dataset = j.value("dataset", c.dataset.string());
    c.output = j.value("output", c.output.string());
    c.montage_dir = j.value("montage_dir", std::string{});
    c.montages = j.value("montages", c.montages);
    c.gammas = j.value("gammas", c.gammas);
    c.samples_per_trial = j.value("samples_per_trial", c.samples_per_trial);
    c.seed = j.value("seed", c.seed);

    const Json& s = section(j, "synthetic");
    check_keys(s, {"enabled", "num_classes", "n_per_class", "samples", "image_size", "layout", "informative_region",
                   "informative_channels", "seed"},
               "synthetic");
    auto& sy = c.synthetic;
    sy.enabled = s.value("enabled", sy.enabled);
    sy.num_classes = s.value("num_classes", sy.num_classes);
    sy.n_per_class = s.value("n_per_class", sy.n_per_class);
    sy.samples = s.value("samples", sy.samples);
    sy.image_size = s.value("image_size", sy.image_size);
    sy.layout = s.value("layout", sy.layout);
    sy.informative_region = s.value("informative_region", sy.informative_region);
    sy.informative_channels = s.value("informative_channels", sy.informative_channels);
    sy.seed = s.value("seed", sy.seed);

    const Json& d = section(j, "decoder");
    check_keys(d, {"hidden", "layers", "epochs", "batch", "lr", "grad_clip", "weight_decay"}, "decoder");
    c.decoder_hidden = d.value("hidden", c.decoder_hidden);
    c.decoder_layers = d.value("layers", c.decoder_layers);
    Json dh = c.decoder.to_json();
    dh.update(d);
    c.decoder = DecoderHyper::from_json(dh);

    c.engine = section(j, "engine");
    for (const char* k : {"image_size", "eeg_channels", "eeg_samples", "montage", "class_names", "seed"})
      if (c.engine.contains(k))
        fail(Errc::ConfigValidationError, std::string("engine.") + k + " is derived from the dataset and run seed");
    EngineConfig::from_json(c.engine);  // type check

    const Json& a = section(j, "autoencoder");
    check_keys(a, {"epochs", "batch", "lr", "kl_weight"}, "autoencoder");
    c.autoencoder.epochs = a.value("epochs", c.autoencoder.epochs);
    c.autoencoder.batch = a.value("batch", c.autoencoder.batch);
    c.autoencoder.lr = a.value("lr", c.autoencoder.lr);
    c.autoencoder.kl_weight = a.value("kl_weight", c.autoencoder.kl_weight);

    const Json& b = section(j, "backbone");
    check_keys(b, {"steps", "batch", "lr"}, "backbone");
    c.backbone.steps = b.value("steps", c.backbone.steps);
    c.backbone.batch = b.value("batch", c.backbone.batch);
    c.backbone.lr = b.value("lr", c.backbone.lr);

    const Json& cn = section(j, "controlnet");
    check_keys(cn, {"lr", "batch", "epochs", "max_steps", "grad_clip"}, "controlnet");
    c.controlnet.lr = cn.value("lr", c.controlnet.lr);
    c.controlnet.batch = cn.value("batch", c.controlnet.batch);
    c.controlnet.epochs = cn.value("epochs", c.controlnet.epochs);
    c.controlnet.max_steps = cn.value("max_steps", c.controlnet.max_steps);
    c.controlnet.grad_clip = cn.value("grad_clip", c.controlnet.grad_clip);

    const Json& g = section(j, "generate");
    check_keys(g, {"steps", "split", "max_trials"}, "generate");
    c.sample_steps = g.value("steps", c.sample_steps);
    c.generate_split = g.value("split", c.generate_split);
    c.max_trials = g.value("max_trials", c.max_trials);

    const Json& bo = section(j, "boost");
    check_keys(bo, {"strength", "gamma", "steps", "describer", "remote"}, "boost");
    c.boost.strength = bo.value("strength", c.boost.strength);
    c.boost.gamma = bo.value("gamma", c.boost.gamma);
    c.boost.steps = bo.value("steps", c.boost.steps);
    c.describer = bo.value("describer", c.describer);
    const Json& r = section(bo, "remote");
    check_keys(r, {"url", "timeout_s", "retries", "max_in_flight"}, "boost.remote");
    c.remote.url = r.value("url", c.remote.url);
    c.remote.timeout_s = r.value("timeout_s", c.remote.timeout_s);
    c.remote.retries = r.value("retries", c.remote.retries);
    c.remote.max_in_flight = r.value("max_in_flight", c.remote.max_in_flight);

    const Json& e = section(j, "evaluate");
    check_keys(e, {"backbone", "is_splits", "ways", "top_k", "classifier"}, "evaluate");
    c.eval_backbone = e.value("backbone", c.eval_backbone);
    c.is_splits = e.value("is_splits", c.is_splits);
    c.eval_ways = e.value("ways", c.eval_ways);
    c.eval_top_k = e.value("top_k", c.eval_top_k);
    const Json& cl = section(e, "classifier");
    check_keys(cl, {"epochs", "batch", "lr"}, "evaluate.classifier");
    c.classifier.epochs = cl.value("epochs", c.classifier.epochs);
    c.classifier.batch = cl.value("batch", c.classifier.batch);
    c.classifier.lr = cl.value("lr", c.classifier.lr);

    const Json& ab = section(j, "ablation");
    check_keys(ab, {"montage", "region_mode", "threads"}, "ablation");
    c.ablation_montage = ab.value("montage", c.ablation_montage);
    c.region_mode = parse_region_mode(ab.value("region_mode", std::string(region_mode_name(c.region_mode))));
    c.ablation_threads = ab.value("threads", c.ablation_threads);

    const Json& st = section(j, "study");
    check_keys(st, {"input"}, "study");
    c.study_input = st.value("input", std::string{});
  } catch (const Json::exception& ex) {
    fail(Errc::ConfigValidationError, std::string("config: ") + ex.what());
  }
  return c;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& m) { fail(Errc::ConfigValidationError, m); };
  if (montages.empty()) bad("at least one montage is required");
  if (std::set<std::string>(montages.begin(), montages.end()).size() != montages.size()) bad("montages repeat");
  for (const auto& m : montages) {
    const fs::path p = montages_root(*this) / (m + ".json");
    if (!fs::exists(p)) bad("montage '" + m + "' has no fixture at " + p.string());
  }
  if (gammas.empty()) bad("at least one gamma is required");
  if (std::set<double>(gammas.begin(), gammas.end()).size() != gammas.size()) bad("gammas repeat");
  for (double g : gammas)
    if (!std::isfinite(g) || g < 0) bad("gamma must be finite and >= 0");
  if (samples_per_trial < 1) bad("samples_per_trial must be >= 1");
  if (sample_steps < 1) bad("generate.steps must be >= 1");
  if (generate_split != "train" && generate_split != "val" && generate_split != "test")
    bad("generate.split must be train, val or test");
  if (max_trials < 0) bad("generate.max_trials must be >= 0");
  if (!(boost.strength > boost.min_strength && boost.strength <= boost.max_strength))
    bad("boost.strength must lie in (0, 1]");
  if (boost.steps < 1 || !(boost.gamma >= 0)) bad("boost.steps >= 1 and boost.gamma >= 0 required");
  if (describer != "mock" && describer != "remote") bad("boost.describer must be mock or remote");
  if (eval_backbone != "toy-cnn" && eval_backbone != "color-hist") bad("evaluate.backbone must be toy-cnn or color-hist");
  if (is_splits < 1) bad("evaluate.is_splits must be >= 1");
  if (eval_top_k < 1) bad("evaluate.top_k must be >= 1");
  if (decoder_hidden < 1 || decoder_layers < 1 || decoder_layers > 2) bad("decoder.hidden >= 1 and layers in {1,2}");
  if (decoder.epochs < 0 || decoder.batch < 1 || !(decoder.lr >= 0)) bad("decoder epochs/batch/lr out of range");
  if (autoencoder.epochs < 0 || autoencoder.batch < 1) bad("autoencoder epochs/batch out of range");
  if (backbone.steps < 0 || backbone.batch < 1) bad("backbone steps/batch out of range");
  if (controlnet.batch < 1 || controlnet.epochs < 0 || controlnet.max_steps < 0) bad("controlnet batch/epochs/max_steps out of range");
  if (ablation_threads < 1) bad("ablation.threads must be >= 1");
  if (synthetic.n_per_class < 1 || synthetic.num_classes < 2) bad("synthetic needs n_per_class >= 1 and num_classes >= 2");
}

std::string RunConfig::hash() const {
  // locations are excluded so a relocated rerun keeps its identity
  Json j = to_json();
  j.erase("output");
  j.erase("dataset");
  j.erase("study");
  return sha256_hex(j.dump());
}

RunConfig load_run_config(const fs::path& path) {
  require(path, "config file");
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    fail(Errc::ConfigValidationError, path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

// --- lock --------------------------------------------------------------------------------

OutputLock::OutputLock(const fs::path& dir) {
  fs::create_directories(dir);
  path_ = dir / ".eegrecon.lock";
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) fail(Errc::IoError, "cannot create lock " + path_.string());
    long owner = 0;
    try {
      owner = std::stol(read_text(path_));
    } catch (...) {
    }
    if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM))
      fail(Errc::ConfigValidationError, "output directory " + dir.string() + " is locked by process " + std::to_string(owner));
    fs::remove(path_);  // stale
  }
  fail(Errc::IoError, "cannot acquire lock " + path_.string());
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// --- commands -------------------------------------------------------------------------------

fs::path cmd_prepare(const RunConfig& cfg) {
  cfg.validate();
  OutputLock lock(cfg.output);
  const bool existed = fs::exists(cfg.dataset / "manifest.json");
  if (!existed) {
    if (!cfg.synthetic.enabled) require(cfg.dataset / "manifest.json", "dataset manifest");
    const Montage layout = montage_named(cfg, cfg.synthetic.layout);
    SyntheticSpec spec;
    spec.name = "synthetic-" + layout.name;
    spec.num_classes = cfg.synthetic.num_classes;
    spec.channels = layout.size();
    spec.samples = cfg.synthetic.samples;
    spec.n_per_class = cfg.synthetic.n_per_class;
    spec.image_size = cfg.synthetic.image_size;
    spec.seed = cfg.synthetic.seed;
    spec.electrode_labels = layout.labels();
    spec.informative_channels = cfg.synthetic.informative_channels;
    if (spec.informative_channels.empty())
      spec.informative_channels = layout.indices_in(parse_region(cfg.synthetic.informative_region));
    generate_synthetic(spec, cfg.dataset);
    std::cout << "[prepare] generated " << spec.name << " at " << cfg.dataset << "\n";
  }
  const Dataset ds = load_dataset(cfg.dataset);
  const auto& m = ds.manifest();
  Json montages = Json::object();
  for (const auto& name : cfg.montages) {
    const Montage mo = montage_named(cfg, name);
    channel_map(m, mo);  // throws when the montage does not fit
    montages[name] = mo.size();
  }
  const RunLayout L{cfg.output};
  const fs::path summary = cfg.output / "prepare" / "dataset_summary.json";
  write_text(summary, Json{{"name", m.name},
                           {"generated", !existed},
                           {"num_classes", m.num_classes},
                           {"class_names", m.class_names},
                           {"channels", m.channels},
                           {"samples_per_trial", m.samples_per_trial},
                           {"splits", {{"train", m.splits.train.size()}, {"val", m.splits.val.size()}, {"test", m.splits.test.size()}}},
                           {"normalized", m.normalization.has_value()},
                           {"montages", montages},
                           {"manifest_sha256", sha256_file(cfg.dataset / "manifest.json")}}
                          .dump(2) + "\n");
  std::cout << "[prepare] " << m.name << ": " << m.num_classes << " classes, " << m.channels << " channels, "
            << m.splits.train.size() << "/" << m.splits.val.size() << "/" << m.splits.test.size() << " trials\n";
  return write_manifest(cfg, "prepare", {summary});
}

fs::path cmd_train_decoder(const RunConfig& cfg) {
  cfg.validate();
  const Dataset ds = open_dataset(cfg);
  OutputLock lock(cfg.output);
  const RunLayout L{cfg.output};
  std::vector<fs::path> outputs;
  Json summary = Json::object();
  for (const auto& name : cfg.montages) {
    const Montage m = montage_named(cfg, name);
    const auto seed = derive_seed(cfg.seed, "decoder:" + name);
    const DecoderModel model = train_decoder(ds, m, cfg.decoder, seed, cfg.decoder_hidden, cfg.decoder_layers);
    save_decoder(L.decoder(name), model);
    std::string csv = "epoch,train_loss,train_acc,val_acc\n";
    for (const auto& h : model.history)
      csv += std::to_string(h.epoch) + "," + fmt6(h.train_loss) + "," + fmt6(h.train_acc) + "," + fmt6(h.val_acc) + "\n";
    const fs::path hist = cfg.output / "decoders" / (name + "_history.csv");
    write_text(hist, csv);
    const double best = model.best_epoch > 0 ? model.history[model.best_epoch - 1].val_acc : 0.0;
    summary[name] = {{"channels", m.size()}, {"best_epoch", model.best_epoch}, {"best_val_top1", best}, {"seed", seed}};
    std::cout << "[train-decoder] " << name << ": best val top-1 " << fmt6(best) << " at epoch " << model.best_epoch << "\n";
    outputs.push_back(L.decoder(name));
    outputs.push_back(hist);
  }
  return write_manifest(cfg, "train-decoder", outputs, {{"summary", summary}});
}

fs::path cmd_train_controlnet(const RunConfig& cfg) {
  cfg.validate();
  const Dataset ds = open_dataset(cfg);
  const RunLayout L{cfg.output};
  for (const auto& name : cfg.montages) require(L.decoder(name), "decoder checkpoint (run train-decoder first)");
  OutputLock lock(cfg.output);
  const auto& man = ds.manifest();

  // base: autoencoder and text-conditioned backbone, shared by every montage
  Json ej = desk_engine_defaults();
  ej.merge_patch(cfg.engine.is_null() ? Json::object() : cfg.engine);
  EngineConfig ec = EngineConfig::from_json(ej);
  ec.image_size = man.image_height;
  ec.eeg_channels = man.channels;
  ec.eeg_samples = man.samples_per_trial;
  ec.montage = "dataset";
  ec.class_names = man.class_names;
  ec.seed = derive_seed(cfg.seed, "engine:base");
  Engine base(ec);
  std::vector<StimulusImage> images;
  std::vector<int> labels;
  for (const auto& id : man.splits.train) {
    const auto& info = man.trial(id);
    images.push_back(ds.load_image(info.image_id));
    labels.push_back(info.class_label);
  }
  train_autoencoder(base, images, cfg.autoencoder, derive_seed(cfg.seed, "autoencoder"));
  pretrain_backbone(base, images, labels, cfg.backbone, derive_seed(cfg.seed, "backbone"));
  save_engine(L.base_engine(), base);
  std::cout << "[train-controlnet] base: autoencoder loss " << fmt6(base.ae_loss.empty() ? 0.0 : base.ae_loss.back())
            << ", backbone loss " << fmt6(base.backbone_loss.empty() ? 0.0 : base.backbone_loss.back()) << "\n";
  std::vector<fs::path> outputs{L.base_engine()};
  Json summary = Json::object();

  for (const auto& name : cfg.montages) {
    const Montage m = montage_named(cfg, name);
    const DecoderModel dec = load_decoder(L.decoder(name));
    Engine e = engine_for_montage(base, m, derive_seed(cfg.seed, "engine:" + name));
    const ControlData tr = make_control_data(e, ds, "train", m, dec);
    const ControlData va = make_control_data(e, ds, "val", m, dec);
    const std::string before = e.frozen_hash();
    train_controlnet(e, tr, va, cfg.controlnet, derive_seed(cfg.seed, "controlnet:" + name));
    save_engine(L.engine(name), e);
    outputs.push_back(L.engine(name));
    const auto& vl = e.control_val_loss;
    summary[name] = {{"frozen_sha256", before},
                     {"frozen_unchanged", before == e.frozen_hash()},
                     {"steps", e.control_loss.size()},
                     {"first_loss", e.control_loss.empty() ? 0.0 : e.control_loss.front()},
                     {"last_loss", e.control_loss.empty() ? 0.0 : e.control_loss.back()},
                     {"best_val_loss", vl.empty() ? 0.0 : *std::min_element(vl.begin(), vl.end())}};
    std::cout << "[train-controlnet] " << name << ": " << e.control_loss.size() << " steps, val loss "
              << fmt6(vl.empty() ? 0.0 : *std::min_element(vl.begin(), vl.end())) << "\n";
  }
  return write_manifest(cfg, "train-controlnet", outputs, {{"summary", summary}});
}

fs::path cmd_generate(const RunConfig& cfg) {
  cfg.validate();
  const Dataset ds = open_dataset(cfg);
  const RunLayout L{cfg.output};
  for (const auto& name : cfg.montages) {
    require(L.decoder(name), "decoder checkpoint (run train-decoder first)");
    require(L.engine(name), "engine checkpoint (run train-controlnet first)");
  }
  OutputLock lock(cfg.output);
  std::vector<fs::path> outputs;
  for (const auto& name : cfg.montages) {
    const Montage m = montage_named(cfg, name);
    const DecoderModel dec = load_decoder(L.decoder(name));
    const Engine e = load_engine(L.engine(name));
    const auto trials = projected_split(ds, cfg.generate_split, m, cfg.max_trials);
    if (trials.empty()) fail(Errc::EmptySplit, "split " + cfg.generate_split + " is empty");
    std::vector<CaptionControl> captions;
    for (const auto& t : trials) captions.push_back(make_caption(decode(dec, t), dec.config().class_names));
    for (double gamma : cfg.gammas) {
      const fs::path dir = L.generated(name, gamma);
      reset_dir(dir);
      std::vector<Json> records;
      for (std::size_t i = 0; i < trials.size(); ++i)
        for (int k = 0; k < cfg.samples_per_trial; ++k) {
          // shared across gammas so the guidance comparison is paired
          const auto seed = derive_seed(cfg.seed, "sample:" + name, i, k);
          StimulusImage img = sample(e, trials[i], captions[i].text, gamma, cfg.sample_steps, seed);
          const std::string file = generation_filename(trials[i].trial_id, k, gamma);
          write_png(dir / file, img);
          outputs.push_back(dir / file);
          records.push_back({{"montage", name},
                             {"channels", m.size()},
                             {"gamma", gamma},
                             {"trial_id", trials[i].trial_id},
                             {"sample_index", k},
                             {"seed", seed},
                             {"steps", cfg.sample_steps},
                             {"caption", captions[i].text},
                             {"predicted_class", dec.config().class_names[captions[i].source_label]},
                             {"true_class", dec.config().class_names[trials[i].class_label]},
                             {"image_id", trials[i].image_id},
                             {"file", file}});
        }
      write_jsonl(dir / "metadata.jsonl", records);
      outputs.push_back(dir / "metadata.jsonl");
      std::cout << "[generate] " << name << " gamma " << format_gamma(gamma) << ": " << records.size() << " images\n";
    }
  }
  return write_manifest(cfg, "generate", outputs);
}

fs::path cmd_boost(const RunConfig& cfg) {
  cfg.validate();
  const RunLayout L{cfg.output};
  for (const auto& name : cfg.montages) {
    require(L.engine(name), "engine checkpoint (run train-controlnet first)");
    for (double g : cfg.gammas) require(L.generated(name, g) / "metadata.jsonl", "generated set (run generate first)");
  }
  OutputLock lock(cfg.output);
  auto describer = make_describer(cfg.describer, cfg.remote);
  std::vector<fs::path> outputs;
  for (const auto& name : cfg.montages) {
    const Engine e = load_engine(L.engine(name));
    for (double gamma : cfg.gammas) {
      const fs::path src = L.generated(name, gamma);
      const auto recs = read_jsonl(src / "metadata.jsonl");
      std::vector<StimulusImage> images;
      std::vector<DescribeContext> ctx;
      for (const auto& r : recs) {
        const std::string file = r.at("file");
        require(src / file, "generated image");
        images.push_back(read_png(src / file, r.at("trial_id").get<std::string>()));
        ctx.push_back({r.at("trial_id").get<std::string>(), r.at("predicted_class").get<std::string>()});
      }
      const auto descriptions = describe_batch(*describer, images, ctx, cfg.remote.max_in_flight);
      const fs::path dir = L.boosted(name, gamma);
      reset_dir(dir);
      std::vector<Json> out;
      for (std::size_t i = 0; i < recs.size(); ++i) {
        const int k = recs[i].at("sample_index");
        const auto seed = derive_seed(cfg.seed, "boost:" + name + ":" + format_gamma(gamma), i);
        const BoostResult b = boost_with_description(e, images[i], descriptions[i], cfg.boost, seed);
        const std::string file = boosted_filename(ctx[i].trial_id, k);
        write_png(dir / file, b.image);
        outputs.push_back(dir / file);
        Json meta = b.metadata(ctx[i].trial_id);
        meta["montage"] = name;
        meta["generation_gamma"] = gamma;
        meta["sample_index"] = k;
        meta["source"] = recs[i].at("file");
        meta["image_id"] = recs[i].at("image_id");
        meta["describer"] = describer->kind();
        meta["file"] = file;
        out.push_back(std::move(meta));
      }
      write_jsonl(dir / "metadata.jsonl", out);
      outputs.push_back(dir / "metadata.jsonl");
      std::cout << "[boost] " << name << " gamma " << format_gamma(gamma) << ": " << out.size() << " images\n";
    }
  }
  return write_manifest(cfg, "boost", outputs, {{"boost", cfg.boost.to_json()}});
}

fs::path cmd_evaluate(const RunConfig& cfg) {
  cfg.validate();
  const Dataset ds = open_dataset(cfg);
  const RunLayout L{cfg.output};
  for (const auto& name : cfg.montages) {
    require(L.decoder(name), "decoder checkpoint (run train-decoder first)");
    for (double g : cfg.gammas) {
      require(L.generated(name, g) / "metadata.jsonl", "generated set (run generate first)");
      require(L.boosted(name, g) / "metadata.jsonl", "boosted set (run boost first)");
    }
  }
  OutputLock lock(cfg.output);
  const auto& man = ds.manifest();
  std::vector<fs::path> outputs;

  std::unique_ptr<FeatureBackbone> backbone;
  if (cfg.eval_backbone == "toy-cnn") {
    std::vector<StimulusImage> images;
    std::vector<int> labels;
    for (const auto& id : man.splits.train) {
      images.push_back(ds.load_image(man.trial(id).image_id));
      labels.push_back(man.trial(id).class_label);
    }
    auto net = train_toy_cnn(images, labels, man.num_classes, cfg.classifier, derive_seed(cfg.seed, "eval-backbone"));
    save_backbone(L.eval_backbone(), net);
    outputs.push_back(L.eval_backbone());
    backbone = std::make_unique<ToyCnnBackbone>(std::move(net));
  } else {
    backbone = std::make_unique<ColorHistogramBackbone>();
  }

  // reference: stimulus images of the generated split, pooled over classes
  std::vector<StimulusImage> reference;
  std::map<std::string, int> ref_index;
  {
    int n = 0;
    for (const auto& id : man.splits.get(cfg.generate_split)) {
      if (cfg.max_trials > 0 && n++ >= cfg.max_trials) break;
      const std::string image_id = man.trial(id).image_id;
      if (ref_index.emplace(image_id, static_cast<int>(reference.size())).second) reference.push_back(ds.load_image(image_id));
    }
  }

  const std::string run_id = cfg.hash().substr(0, 12);
  std::vector<MetricReport> rows;
  auto load_set = [&](const fs::path& dir, std::vector<StimulusImage>& imgs, std::vector<int>& pairs) {
    for (const auto& r : read_jsonl(dir / "metadata.jsonl")) {
      imgs.push_back(read_png(dir / r.at("file").get<std::string>()));
      const auto it = ref_index.find(r.at("image_id").get<std::string>());
      if (it == ref_index.end()) fail(Errc::UnknownTrialId, "image " + r.at("image_id").get<std::string>() + " is not in the reference set");
      pairs.push_back(it->second);
    }
  };
  for (const auto& name : cfg.montages) {
    const int channels = montage_named(cfg, name).size();
    for (double gamma : cfg.gammas)
      for (bool boosted : {false, true}) {
        std::vector<StimulusImage> imgs;
        std::vector<int> pairs;
        load_set(boosted ? L.boosted(name, gamma) : L.generated(name, gamma), imgs, pairs);
        MetricReport r;
        r.run_id = run_id;
        r.montage = name;
        r.channels = channels;
        r.gamma = gamma;
        r.boosted = boosted;
        r.n_images = static_cast<int>(imgs.size());
        r.values = evaluate_set(imgs, reference, pairs, *backbone, boosted, cfg.is_splits);
        r.backbone_tag = backbone->tag();
        r.seed = cfg.seed;
        rows.push_back(r);
        std::cout << "[evaluate] " << name << " gamma " << format_gamma(gamma) << (boosted ? " boosted" : " raw    ")
                  << "  IS " << format_metric(r.values.is) << "  FID " << format_metric(r.values.fid) << "  LPIPS "
                  << format_metric(r.values.lpips)
                  << (r.values.clip_sim ? "  sim " + format_metric(*r.values.clip_sim) : std::string()) << "\n";
      }
  }
  const fs::path metrics_csv = L.reports() / "metrics.csv";
  write_metric_csv(metrics_csv, rows);
  outputs.push_back(metrics_csv);

  std::string gains = "montage,channels,gamma,is_raw,is_boosted,is_gain,fid_raw,fid_boosted,fid_gain,lpips_raw,lpips_boosted,lpips_gain\n";
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    const auto& raw = rows[i].values;
    const auto& bst = rows[i + 1].values;
    gains += rows[i].montage + "," + std::to_string(rows[i].channels) + "," + format_gamma(rows[i].gamma) + "," +
             format_metric(raw.is) + "," + format_metric(bst.is) + "," + format_gain(gain_percent(raw.is, bst.is, true)) + "," +
             format_metric(raw.fid) + "," + format_metric(bst.fid) + "," + format_gain(gain_percent(raw.fid, bst.fid, false)) +
             "," + format_metric(raw.lpips) + "," + format_metric(bst.lpips) + "," +
             format_gain(gain_percent(raw.lpips, bst.lpips, false)) + "\n";
  }
  write_text(L.reports() / "gains.csv", gains);
  outputs.push_back(L.reports() / "gains.csv");

  // decoder accuracy on the whole split, one row per montage
  const int ways = cfg.eval_ways > 0 ? cfg.eval_ways : man.num_classes;
  const int k = std::min(cfg.eval_top_k, ways);
  std::string acc = "montage,channels,ways,k,top1,topk\n";
  for (const auto& name : cfg.montages) {
    const Montage m = montage_named(cfg, name);
    const DecoderModel dec = load_decoder(L.decoder(name));
    AblationOptions o;
    o.ways = ways;
    o.top_k = k;
    o.seed = derive_seed(cfg.seed, "distractors");
    const Accuracy a = evaluate_accuracy(dec, projected_split(ds, cfg.generate_split, m), o);
    acc += name + "," + std::to_string(m.size()) + "," + std::to_string(ways) + "," + std::to_string(k) + "," +
           fmt6(a.top1) + "," + fmt6(a.top5) + "\n";
  }
  write_text(L.reports() / "decoder_accuracy.csv", acc);
  outputs.push_back(L.reports() / "decoder_accuracy.csv");

  const fs::path meta = L.reports() / "metrics_meta.json";
  write_text(meta, Json{{"run_id", run_id},
                        {"backbone_tag", backbone->tag()},
                        {"is_splits", cfg.is_splits},
                        {"fid_features", "backbone embedding"},
                        {"fid_reference", "stimulus images of the " + cfg.generate_split + " split, pooled over classes"},
                        {"n_reference", reference.size()},
                        {"clip_sim", "embedding cosine to the paired stimulus; omitted for boosted sets"},
                        {"gain_convention", "IS (boosted-raw)/raw, FID and LPIPS (raw-boosted)/raw"}}
                       .dump(2) + "\n");
  outputs.push_back(meta);
  return write_manifest(cfg, "evaluate", outputs);
}

fs::path cmd_ablate(const RunConfig& cfg) {
  cfg.validate();
  const Dataset ds = open_dataset(cfg);
  const RunLayout L{cfg.output};
  const std::string name = cfg.ablation_montage;
  require(L.decoder(name), "decoder checkpoint for " + name + " (run train-decoder first)");
  OutputLock lock(cfg.output);
  const Montage m = montage_named(cfg, name);
  const DecoderModel dec = load_decoder(L.decoder(name));
  const auto test = projected_split(ds, "test", m);

  AblationOptions o;
  o.ways = cfg.eval_ways;
  o.top_k = cfg.eval_top_k;
  o.seed = derive_seed(cfg.seed, "distractors");
  o.threads = cfg.ablation_threads;

  AblationReport rep;
  rep.montage = name;
  rep.baseline = evaluate_accuracy(dec, test, o);
  rep.ways = cfg.eval_ways > 0 ? cfg.eval_ways : dec.config().num_classes;
  rep.top_k = std::min(cfg.eval_top_k, rep.ways);
  rep.seed = cfg.seed;
  rep.electrodes = electrode_sweep(test, dec, m, o);

  DecoderFactory factory;
  std::vector<EegTrial> train, val;
  if (cfg.region_mode == RegionMode::Retrain) {
    train = projected_split(ds, "train", m);
    val = projected_split(ds, "val", m);
    factory = [&](const std::vector<int>& kept) {
      auto pick = [&](const std::vector<EegTrial>& ts) {
        std::vector<EegTrial> out;
        for (const auto& t : ts) out.push_back(select_channels(t, kept, name + "-reduced"));
        return out;
      };
      DecoderConfig dc = dec.config();
      dc.channels = static_cast<int>(kept.size());
      dc.montage = name + "-reduced";
      return train_decoder(pick(train), pick(val), dc, cfg.decoder, derive_seed(cfg.seed, "ablation-retrain:" + name, kept.size()));
    };
  }
  rep.regions = region_sweep(test, dec, m, cfg.region_mode, factory, o);
  const fs::path dir = L.ablation(name);
  reset_dir(dir);
  write_ablation_outputs(rep, m, dir);
  std::cout << "[ablate] " << name << ": baseline top-1 " << fmt6(rep.baseline.top1) << "\n";
  for (const auto& r : rep.regions)
    std::cout << "[ablate]   without " << region_name(r.region) << " (" << r.remaining_channels << " left, "
              << region_mode_name(r.mode) << "): top-1 " << fmt6(r.top1) << "\n";
  return write_manifest(cfg, "ablate", files_in(dir));
}

fs::path cmd_study_stats(const RunConfig& cfg) {
  if (cfg.study_input.empty()) fail(Errc::ConfigValidationError, "study-stats needs an input CSV (--input or study.input)");
  require(cfg.study_input, "preference CSV");
  const auto trials = read_preference_csv(cfg.study_input);
  const StudySummary s = summarize_study(trials);
  OutputLock lock(cfg.output);
  const fs::path out = RunLayout{cfg.output}.study() / "summary.json";
  write_text(out, s.to_json().dump(2) + "\n");
  std::cout << "[study-stats] n " << s.overall.n << ", preference " << fmt6(s.overall.rate) << ", weighted "
            << fmt6(s.overall.weighted_rate) << ", z " << fmt6(s.binomial.z) << ", p " << s.binomial.p_value << "\n";
  return write_manifest(cfg, "study-stats", {out}, {{"input_sha256", sha256_file(cfg.study_input)}});
}

void run_pipeline(const RunConfig& cfg) {
  cmd_prepare(cfg);
  cmd_train_decoder(cfg);
  cmd_train_controlnet(cfg);
  cmd_generate(cfg);
  cmd_boost(cfg);
  cmd_evaluate(cfg);
}

int run_command(const std::string& command, const RunConfig& cfg) {
  try {
    fs::path manifest;
    if (command == "prepare") manifest = cmd_prepare(cfg);
    else if (command == "train-decoder") manifest = cmd_train_decoder(cfg);
    else if (command == "train-controlnet") manifest = cmd_train_controlnet(cfg);
    else if (command == "generate") manifest = cmd_generate(cfg);
    else if (command == "boost") manifest = cmd_boost(cfg);
    else if (command == "evaluate") manifest = cmd_evaluate(cfg);
    else if (command == "ablate") manifest = cmd_ablate(cfg);
    else if (command == "study-stats") manifest = cmd_study_stats(cfg);
    else if (command == "run-all") {
      run_pipeline(cfg);
      manifest = RunLayout{cfg.output}.manifest("evaluate");
    } else
      fail(Errc::ConfigValidationError, "unknown command '" + command + "'");
    std::cout << "manifest: " << manifest.string() << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::MissingPrerequisite ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace eegrecon
