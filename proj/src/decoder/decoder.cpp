#include "eegrecon/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "eegrecon/error.hpp"

namespace eegrecon {

using namespace nn;

Json DecoderConfig::to_json() const {
  return {{"channels", channels},       {"num_classes", num_classes}, {"hidden", hidden},
          {"layers", layers},           {"pool_window", pool_window}, {"montage", montage},
          {"class_names", class_names}};
}

DecoderConfig DecoderConfig::from_json(const Json& j) {
  DecoderConfig c;
  c.channels = j.at("channels").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.hidden = j.value("hidden", 128);
  c.layers = j.value("layers", 1);
  c.pool_window = j.value("pool_window", 4);
  c.montage = j.value("montage", std::string());
  c.class_names = j.value("class_names", std::vector<std::string>{});
  return c;
}

Json DecoderHyper::to_json() const {
  return {{"epochs", epochs}, {"batch", batch}, {"lr", lr}, {"grad_clip", grad_clip}, {"weight_decay", weight_decay}};
}

DecoderHyper DecoderHyper::from_json(const Json& j) {
  DecoderHyper h;
  h.epochs = j.value("epochs", h.epochs);
  h.batch = j.value("batch", h.batch);
  h.lr = j.value("lr", h.lr);
  h.grad_clip = j.value("grad_clip", h.grad_clip);
  h.weight_decay = j.value("weight_decay", h.weight_decay);
  return h;
}

DecoderModel::DecoderModel(DecoderConfig config, std::uint64_t seed_) : seed(seed_), config_(std::move(config)) {
  if (config_.channels < 1 || config_.num_classes < 1)
    fail(Errc::ConfigValidationError, "decoder needs at least one channel and one class");
  if (config_.layers < 1 || config_.layers > 2) fail(Errc::ConfigValidationError, "decoder layers must be 1 or 2");
  if (config_.pool_window < 1) fail(Errc::ConfigValidationError, "pool_window must be >= 1");
  std::mt19937_64 rng(seed_);
  int in = config_.channels;
  for (int l = 0; l < config_.layers; ++l) {
    lstm_.emplace_back(in, config_.hidden, rng);
    in = config_.hidden;
  }
  head_ = Linear(config_.hidden, config_.num_classes, rng);
}

ParamList DecoderModel::params() const {
  ParamList out;
  for (std::size_t l = 0; l < lstm_.size(); ++l) lstm_[l].collect(out, "lstm" + std::to_string(l));
  head_.collect(out, "head");
  return out;
}

Var DecoderModel::forward(const Var& x) const {
  Var h = config_.pool_window > 1 ? avg_pool1d(x, config_.pool_window) : x;
  for (std::size_t l = 0; l + 1 < lstm_.size(); ++l) h = lstm_[l].forward_sequence(h);
  return head_(lstm_.back().forward_last(h));
}

namespace {

Tensor batch_tensor(const std::vector<const EegTrial*>& trials) {
  const int c = trials.front()->channels;
  const int l = trials.front()->samples;
  Tensor t({static_cast<int>(trials.size()), c, l});
  std::size_t o = 0;
  for (const auto* tr : trials) {
    if (tr->channels != c || tr->samples != l) fail(Errc::ShapeMismatch, "trials in a batch differ in shape");
    for (float v : tr->data) t.data[o++] = v;
  }
  return t;
}

void check_channels(const DecoderModel& model, const EegTrial& t) {
  if (t.channels != model.config().channels)
    fail(Errc::ChannelMismatch, "trial has " + std::to_string(t.channels) + " channels, decoder for montage '" +
                                    model.config().montage + "' expects " + std::to_string(model.config().channels));
}

std::vector<std::vector<double>> rows_of(const Tensor& logits) {
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<std::vector<double>> out(n, std::vector<double>(k));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) out[i][j] = logits.data[static_cast<std::size_t>(i) * k + j];
  return out;
}

double accuracy_of(const DecoderModel& model, const std::vector<EegTrial>& trials) {
  if (trials.empty()) return 0.0;
  std::vector<int> labels;
  for (const auto& t : trials) labels.push_back(t.class_label);
  return top1_accuracy(decode_batch(model, trials), labels);
}

}  // namespace

std::vector<std::vector<double>> decode_batch(const DecoderModel& model, const std::vector<EegTrial>& trials) {
  std::vector<std::vector<double>> out;
  NoGradGuard ng;
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < trials.size(); s += kChunk) {
    std::vector<const EegTrial*> chunk;
    for (std::size_t i = s; i < std::min(trials.size(), s + kChunk); ++i) {
      check_channels(model, trials[i]);
      chunk.push_back(&trials[i]);
    }
    auto rows = rows_of(model.forward(constant(batch_tensor(chunk)))->value);
    out.insert(out.end(), rows.begin(), rows.end());
  }
  return out;
}

std::vector<double> decode(const DecoderModel& model, const EegTrial& trial) {
  return decode_batch(model, {trial}).front();
}

DecoderModel train_decoder(const std::vector<EegTrial>& train, const std::vector<EegTrial>& val, DecoderConfig config,
                           const DecoderHyper& hyper, std::uint64_t seed) {
  if (train.empty()) fail(Errc::EmptySplit, "train split is empty");
  if (val.empty()) fail(Errc::EmptySplit, "validation split is empty");
  if (hyper.epochs < 0 || hyper.batch < 1 || hyper.lr < 0)
    fail(Errc::ConfigValidationError, "epochs >= 0, batch >= 1 and lr >= 0 required");
  for (const auto& t : train)
    if (t.class_label < 0 || t.class_label >= config.num_classes)
      fail(Errc::ConfigValidationError, t.trial_id + ": label outside [0, K)");

  DecoderModel model(std::move(config), seed);
  model.hyper = hyper;
  const ParamList params = model.params();
  Adam opt(params, hyper.lr);
  opt.set_weight_decay(hyper.weight_decay);
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ULL);

  std::vector<Tensor> best;
  double best_val = -1.0;
  auto snapshot = [&](int epoch) {
    const double v = accuracy_of(model, val);
    if (v > best_val) {
      best_val = v;
      model.best_epoch = epoch;
      best.clear();
      for (const auto& p : params) best.push_back(p.var->value);
    }
    return v;
  };
  snapshot(0);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t s = 0; s < order.size(); s += hyper.batch) {
      std::vector<const EegTrial*> batch;
      std::vector<int> labels;
      for (std::size_t i = s; i < std::min(order.size(), s + hyper.batch); ++i) {
        check_channels(model, train[order[i]]);
        batch.push_back(&train[order[i]]);
        labels.push_back(train[order[i]].class_label);
      }
      Var logits = model.forward(constant(batch_tensor(batch)));
      Var loss = cross_entropy(logits, labels);
      const double lv = loss->value.data[0];
      if (!std::isfinite(lv)) fail(Errc::DivergenceError, "decoder loss became non-finite at epoch " + std::to_string(epoch));
      loss_sum += lv * batch.size();
      const auto rows = rows_of(logits->value);
      for (std::size_t i = 0; i < rows.size(); ++i) correct += argmax(rows[i]) == labels[i];
      opt.zero_grad();
      backward(loss);
      if (hyper.grad_clip > 0) opt.clip_grad_norm(hyper.grad_clip);
      opt.step();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / train.size();
    rec.train_acc = static_cast<double>(correct) / train.size();
    rec.val_acc = snapshot(epoch);
    model.history.push_back(rec);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].var->value = best[i];
  return model;
}

std::vector<int> channel_map(const DatasetManifest& manifest, const Montage& montage) {
  std::vector<int> rows;
  for (const auto& e : montage.electrodes) {
    const auto it = std::find(manifest.electrode_labels.begin(), manifest.electrode_labels.end(), e.label);
    if (it == manifest.electrode_labels.end()) break;
    rows.push_back(static_cast<int>(it - manifest.electrode_labels.begin()));
  }
  if (static_cast<int>(rows.size()) == montage.size()) return rows;
  if (montage.is_root() && montage.size() == manifest.channels) {
    rows.resize(montage.size());
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
  }
  if (!montage.is_root()) {
    for (int i : montage.source_indices)
      if (i >= manifest.channels)
        fail(Errc::ChannelMismatch, "montage " + montage.name + " does not fit dataset " + manifest.name);
    return montage.source_indices;
  }
  fail(Errc::ChannelMismatch, "montage " + montage.name + " does not fit dataset " + manifest.name);
}

EegTrial select_channels(const EegTrial& trial, const std::vector<int>& rows, const std::string& tag) {
  Montage m;
  m.name = tag.empty() ? "selection" : tag;
  m.source_indices = rows;
  m.electrodes.resize(rows.size());
  return project_trial(trial, m);
}

DecoderModel train_decoder(const Dataset& dataset, const Montage& montage, const DecoderHyper& hyper,
                           std::uint64_t seed, int hidden, int layers) {
  const auto rows = channel_map(dataset.manifest(), montage);
  auto load = [&](std::string_view split) {
    std::vector<EegTrial> out;
    for (const auto& t : dataset.load_split(split)) out.push_back(select_channels(t, rows, montage.name));
    return out;
  };
  DecoderConfig cfg;
  cfg.channels = montage.size();
  cfg.num_classes = dataset.manifest().num_classes;
  cfg.hidden = hidden;
  cfg.layers = layers;
  cfg.montage = montage.name;
  cfg.class_names = dataset.manifest().class_names;
  return train_decoder(load("train"), load("val"), cfg, hyper, seed);
}

int argmax(const std::vector<double>& scores) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

std::string caption_for(const std::string& class_name) { return "Image of " + class_name; }

CaptionControl make_caption(const std::vector<double>& scores, const std::vector<std::string>& class_names) {
  if (scores.empty() || scores.size() != class_names.size())
    fail(Errc::ShapeMismatch, "scores and class_names differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) fail(Errc::ConfigValidationError, "non-finite class score");
  const int k = argmax(scores);
  return {caption_for(class_names[k]), k};
}

double top1_accuracy(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) fail(Errc::CountMismatch, "scores and labels differ in count");
  if (scores.empty()) return 0.0;
  int ok = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) ok += argmax(scores[i]) == labels[i];
  return static_cast<double>(ok) / scores.size();
}

double topk_accuracy(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels, int ways, int k,
                     std::uint64_t seed) {
  if (scores.size() != labels.size()) fail(Errc::CountMismatch, "scores and labels differ in count");
  if (ways < 2) fail(Errc::BadWays, "N must be at least 2");
  if (k < 1 || k > ways) fail(Errc::BadK, "k must lie in [1, N]");
  if (scores.empty()) return 0.0;
  std::mt19937_64 rng(seed);
  int hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    const int kk = static_cast<int>(s.size());
    const int truth = labels[i];
    if (ways > kk) fail(Errc::BadWays, "N=" + std::to_string(ways) + " exceeds K=" + std::to_string(kk));
    if (truth < 0 || truth >= kk) fail(Errc::IndexOutOfRange, "label outside [0, K)");
    std::vector<int> others;
    for (int c = 0; c < kk; ++c)
      if (c != truth) others.push_back(c);
    // partial Fisher-Yates: the first N-1 entries become the distractors
    for (int j = 0; j < ways - 1; ++j) {
      std::uniform_int_distribution<int> pick(j, static_cast<int>(others.size()) - 1);
      std::swap(others[j], others[pick(rng)]);
    }
    int ahead = 0;
    for (int j = 0; j < ways - 1; ++j) {
      const int c = others[j];
      if (s[c] > s[truth] || (s[c] == s[truth] && c < truth)) ++ahead;
    }
    hits += ahead < k;
  }
  return static_cast<double>(hits) / scores.size();
}

void save_decoder(const std::filesystem::path& path, const DecoderModel& model) {
  Json hist = Json::array();
  for (const auto& r : model.history)
    hist.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"train_acc", r.train_acc}, {"val_acc", r.val_acc}});
  Json cfg = {{"model", model.config().to_json()},
              {"hyper", model.hyper.to_json()},
              {"seed", model.seed},
              {"best_epoch", model.best_epoch},
              {"history", hist}};
  save_checkpoint(path, "decoder", cfg, model.params());
}

DecoderModel load_decoder(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "decoder") fail(Errc::ConfigValidationError, path.string() + " is a '" + ck.kind + "' checkpoint");
  DecoderModel m(DecoderConfig::from_json(ck.config.at("model")), ck.config.value("seed", std::uint64_t{0}));
  m.hyper = DecoderHyper::from_json(ck.config.value("hyper", Json::object()));
  m.best_epoch = ck.config.value("best_epoch", -1);
  for (const auto& r : ck.config.value("history", Json::array()))
    m.history.push_back({r.at("epoch").get<int>(), r.at("train_loss").get<double>(), r.at("train_acc").get<double>(),
                         r.at("val_acc").get<double>()});
  assign_params(ck, m.params());
  return m;
}

}  // namespace eegrecon
