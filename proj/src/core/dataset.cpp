#include "eegrecon/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "eegrecon/error.hpp"
#include "eegrecon/io.hpp"

namespace fs = std::filesystem;

namespace eegrecon {

static_assert(std::endian::native == std::endian::little, "trial binaries assume a little-endian host");

const std::vector<std::string>& Splits::get(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  fail(Errc::ConfigValidationError, "unknown split '" + std::string(name) + "'");
}

Json DatasetManifest::to_json() const {
  Json j;
  j["name"] = name;
  j["num_classes"] = num_classes;
  j["class_names"] = class_names;
  j["channels"] = channels;
  j["samples_per_trial"] = samples_per_trial;
  j["sampling_rate_hz"] = sampling_rate_hz;
  j["electrode_labels"] = electrode_labels;
  j["splits"] = {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}};
  Json ts = Json::array();
  for (const auto& t : trials) {
    ts.push_back({{"trial_id", t.trial_id},
                  {"subject", t.subject},
                  {"class_label", t.class_label},
                  {"image_id", t.image_id}});
  }
  j["trials"] = std::move(ts);
  j["image_height"] = image_height;
  j["image_width"] = image_width;
  if (normalization) j["normalization"] = {{"mean", normalization->mean}, {"std", normalization->std}};
  if (!provenance.is_null()) j["provenance"] = provenance;
  return j;
}

DatasetManifest DatasetManifest::from_json(const Json& j) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.num_classes = j.at("num_classes").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.channels = j.at("channels").get<int>();
    m.samples_per_trial = j.at("samples_per_trial").get<int>();
    m.sampling_rate_hz = j.at("sampling_rate_hz").get<double>();
    m.electrode_labels = j.at("electrode_labels").get<std::vector<std::string>>();
    const auto& s = j.at("splits");
    m.splits.train = s.value("train", std::vector<std::string>{});
    m.splits.val = s.value("val", std::vector<std::string>{});
    m.splits.test = s.value("test", std::vector<std::string>{});
    for (const auto& t : j.value("trials", Json::array())) {
      m.trials.push_back({t.at("trial_id").get<std::string>(), t.value("subject", 0),
                          t.at("class_label").get<int>(), t.at("image_id").get<std::string>()});
    }
    m.image_height = j.value("image_height", 0);
    m.image_width = j.value("image_width", 0);
    if (j.contains("normalization")) {
      ChannelStats st;
      st.mean = j["normalization"].at("mean").get<std::vector<double>>();
      st.std = j["normalization"].at("std").get<std::vector<double>>();
      m.normalization = std::move(st);
    }
    if (j.contains("provenance")) m.provenance = j["provenance"];
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ShapeMismatch, std::string("manifest.json: ") + e.what());
  }
  return m;
}

const TrialInfo& DatasetManifest::trial(const std::string& id) const {
  for (const auto& t : trials)
    if (t.trial_id == id) return t;
  fail(Errc::UnknownTrialId, id);
}

fs::path trial_path(const fs::path& root, const std::string& trial_id) {
  return root / "trials" / (trial_id + ".bin");
}

fs::path image_path(const fs::path& root, const std::string& image_id) {
  return root / "images" / (image_id + ".png");
}

void write_trial(const fs::path& root, const EegTrial& trial) {
  const auto path = trial_path(root, trial.trial_id);
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(trial.data.data()),
            static_cast<std::streamsize>(trial.data.size() * sizeof(float)));
}

EegTrial read_trial(const fs::path& root, const TrialInfo& info, int channels, int samples) {
  const auto path = trial_path(root, info.trial_id);
  const auto bytes = read_bytes(path);
  const std::size_t expect = static_cast<std::size_t>(channels) * samples * sizeof(float);
  if (bytes.size() != expect) {
    fail(Errc::ShapeMismatch, path.string() + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                                  std::to_string(expect));
  }
  EegTrial t;
  t.trial_id = info.trial_id;
  t.subject = info.subject;
  t.class_label = info.class_label;
  t.image_id = info.image_id;
  t.channels = channels;
  t.samples = samples;
  t.data.resize(static_cast<std::size_t>(channels) * samples);
  std::memcpy(t.data.data(), bytes.data(), expect);
  for (float v : t.data)
    if (!std::isfinite(v)) fail(Errc::ShapeMismatch, path.string() + " contains non-finite samples");
  return t;
}

void write_manifest(const fs::path& root, const DatasetManifest& manifest) {
  write_text(root / "manifest.json", manifest.to_json().dump(2) + "\n");
}

Dataset::Dataset(fs::path root, DatasetManifest manifest) : root_(std::move(root)), manifest_(std::move(manifest)) {}

EegTrial Dataset::load_trial(const std::string& trial_id, bool normalized) const {
  EegTrial t = read_trial(root_, manifest_.trial(trial_id), manifest_.channels, manifest_.samples_per_trial);
  if (normalized && manifest_.normalization) {
    const auto& st = *manifest_.normalization;
    for (int c = 0; c < t.channels; ++c) {
      const double mu = st.mean[c];
      const double sd = st.std[c] > 0.0 ? st.std[c] : 1.0;
      float* row = t.data.data() + static_cast<std::size_t>(c) * t.samples;
      for (int i = 0; i < t.samples; ++i) row[i] = static_cast<float>((row[i] - mu) / sd);
    }
  }
  return t;
}

StimulusImage Dataset::load_image(const std::string& image_id) const {
  return read_png(image_path(root_, image_id), image_id);
}

std::vector<EegTrial> Dataset::load_split(std::string_view split, bool normalized) const {
  std::vector<EegTrial> out;
  for (const auto& id : manifest_.splits.get(split)) out.push_back(load_trial(id, normalized));
  return out;
}

Dataset load_dataset(const fs::path& root) {
  const auto mpath = root / "manifest.json";
  if (!fs::exists(mpath)) fail(Errc::MissingManifest, mpath.string());
  Json j;
  try {
    j = Json::parse(read_text(mpath));
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::MissingManifest, mpath.string() + " is not valid JSON: " + e.what());
  }
  DatasetManifest m = DatasetManifest::from_json(j);

  if (static_cast<int>(m.class_names.size()) != m.num_classes)
    fail(Errc::ShapeMismatch, "class_names has " + std::to_string(m.class_names.size()) + " entries, num_classes is " +
                                  std::to_string(m.num_classes));
  if (static_cast<int>(m.electrode_labels.size()) != m.channels)
    fail(Errc::ShapeMismatch, "electrode_labels length differs from channels");
  if (m.normalization && (static_cast<int>(m.normalization->mean.size()) != m.channels ||
                          static_cast<int>(m.normalization->std.size()) != m.channels))
    fail(Errc::ShapeMismatch, "normalization statistics length differs from channels");

  std::set<std::string> known;
  for (const auto& t : m.trials) {
    if (!known.insert(t.trial_id).second) fail(Errc::ShapeMismatch, "duplicate trial id " + t.trial_id);
    if (t.class_label < 0 || t.class_label >= m.num_classes)
      fail(Errc::ShapeMismatch, t.trial_id + ": class_label out of range");
  }
  std::set<std::string> seen;
  for (const auto* split : {&m.splits.train, &m.splits.val, &m.splits.test}) {
    for (const auto& id : *split) {
      if (!known.count(id)) fail(Errc::UnknownTrialId, id);
      if (!seen.insert(id).second) fail(Errc::ConfigValidationError, "trial " + id + " appears in more than one split");
    }
  }
  if (seen.size() != known.size()) fail(Errc::ConfigValidationError, "some trials are not assigned to any split");

  std::set<std::string> checked_images;
  for (const auto& t : m.trials) {
    read_trial(root, t, m.channels, m.samples_per_trial);
    if (!checked_images.insert(t.image_id).second) continue;
    const auto ipath = image_path(root, t.image_id);
    if (!fs::exists(ipath)) fail(Errc::ShapeMismatch, "missing image " + ipath.string());
    const auto img = read_png(ipath, t.image_id);
    if (m.image_height == 0 && m.image_width == 0) {
      m.image_height = img.height;
      m.image_width = img.width;
    } else if (img.height != m.image_height || img.width != m.image_width) {
      fail(Errc::ShapeMismatch, ipath.string() + " is " + std::to_string(img.height) + "x" +
                                    std::to_string(img.width));
    }
  }
  return Dataset(root, std::move(m));
}

DatasetManifest split_trials(const DatasetManifest& manifest, SplitRatios r, std::uint64_t seed) {
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    fail(Errc::RatioSumError, "ratios must be non-negative and sum to 1");
  DatasetManifest out = manifest;
  out.splits = {};
  std::map<int, std::vector<std::string>> by_class;
  for (const auto& t : manifest.trials) by_class[t.class_label].push_back(t.trial_id);

  std::mt19937_64 rng(seed);
  const double ratios[3] = {r.train, r.val, r.test};
  std::vector<std::string>* dest[3] = {&out.splits.train, &out.splits.val, &out.splits.test};
  for (auto& [label, ids] : by_class) {
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    const double n = static_cast<double>(ids.size());
    // Largest remainder keeps each share within one trial of ratio * n.
    std::size_t counts[3];
    double frac[3];
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double ideal = ratios[s] * n;
      counts[s] = static_cast<std::size_t>(std::floor(ideal + 1e-9));
      frac[s] = ideal - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    int order[3] = {0, 1, 2};
    std::stable_sort(order, order + 3, [&](int a, int b) { return frac[a] > frac[b]; });
    for (int k = 0; assigned < ids.size(); ++k, ++assigned) counts[order[k % 3]]++;
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < counts[s]; ++i) dest[s]->push_back(ids[pos++]);
  }
  return out;
}

ChannelStats compute_train_stats(const fs::path& root, const DatasetManifest& m) {
  std::vector<double> sum(m.channels, 0.0), sq(m.channels, 0.0);
  double count = 0.0;
  for (const auto& id : m.splits.train) {
    const EegTrial t = read_trial(root, m.trial(id), m.channels, m.samples_per_trial);
    for (int c = 0; c < m.channels; ++c) {
      for (float v : t.row(c)) {
        sum[c] += v;
        sq[c] += static_cast<double>(v) * v;
      }
    }
    count += m.samples_per_trial;
  }
  ChannelStats st;
  st.mean.resize(m.channels, 0.0);
  st.std.resize(m.channels, 1.0);
  if (count == 0.0) return st;
  for (int c = 0; c < m.channels; ++c) {
    st.mean[c] = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - st.mean[c] * st.mean[c]);
    st.std[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return st;
}

namespace {

const char* const kColorNames[8] = {"red", "green", "blue", "yellow", "purple", "orange", "cyan", "pink"};
const std::uint8_t kColors[8][3] = {{220, 40, 40},  {40, 170, 60},  {40, 80, 220},  {230, 210, 40},
                                    {140, 50, 170}, {240, 140, 30}, {40, 200, 210}, {240, 130, 180}};
const char* const kShapeNames[5] = {"circle", "square", "triangle", "diamond", "cross"};

bool inside_shape(int shape, double u, double v) {
  // u, v relative to the shape centre in units of its half-size
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case 2: return v <= 0.8 && v >= -1.0 && std::abs(u) <= (v + 1.0) / 1.8;
    case 3: return std::abs(u) + std::abs(v) <= 1.0;
    default: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
  }
}

}  // namespace

std::string synthetic_class_name(int k) {
  std::string name = std::string(kColorNames[k % 8]) + " " + kShapeNames[k % 5];
  if (k >= 40) name += " " + std::to_string(k / 40);
  return name;
}

double synthetic_frequency_hz(int k) { return 4.0 + 2.0 * k; }

StimulusImage draw_class_icon(int class_label, int size, std::uint64_t instance_seed, std::string id) {
  std::mt19937_64 rng(instance_seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double cx = size / 2.0 + jitter(rng) * size * 0.08;
  const double cy = size / 2.0 + jitter(rng) * size * 0.08;
  const double half = size * (0.3 + 0.04 * jitter(rng));
  const double shade = 1.0 + 0.08 * jitter(rng);
  const int shape = class_label % 5;
  const auto* col = kColors[class_label % 8];

  StimulusImage img = make_image(std::move(id), size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5 - cx) / half;
      const double v = (y + 0.5 - cy) / half;
      const bool in = inside_shape(shape, u, v);
      for (int c = 0; c < 3; ++c) {
        const double val = in ? col[c] * shade : 235.0;
        img.pixels[img.index(y, x, c)] = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0L, 255L));
      }
    }
  }
  return img;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& root) {
  if (spec.num_classes < 2) fail(Errc::ConfigValidationError, "synthetic data needs at least two classes");
  if (spec.channels < 1 || spec.samples < 1 || spec.n_per_class < 0)
    fail(Errc::ConfigValidationError, "channels, samples and n_per_class must be positive");
  for (int c : spec.informative_channels)
    if (c < 0 || c >= spec.channels)
      fail(Errc::InvalidChannelIndex, "informative channel " + std::to_string(c) + " outside [0, " +
                                          std::to_string(spec.channels) + ")");
  if (!spec.electrode_labels.empty() && static_cast<int>(spec.electrode_labels.size()) != spec.channels)
    fail(Errc::ShapeMismatch, "electrode_labels length differs from channels");

  DatasetManifest m;
  m.name = spec.name;
  m.num_classes = spec.num_classes;
  for (int k = 0; k < spec.num_classes; ++k) m.class_names.push_back(synthetic_class_name(k));
  m.channels = spec.channels;
  m.samples_per_trial = spec.samples;
  m.sampling_rate_hz = spec.sampling_rate_hz;
  m.electrode_labels = spec.electrode_labels;
  if (m.electrode_labels.empty())
    for (int c = 0; c < spec.channels; ++c) m.electrode_labels.push_back("E" + std::to_string(c));
  m.image_height = m.image_width = spec.image_size;
  m.provenance = {{"generator", "synthetic"},
                  {"seed", spec.seed},
                  {"informative_channels", spec.informative_channels}};

  std::vector<bool> informative(spec.channels, false);
  for (int c : spec.informative_channels) informative[c] = true;

  fs::create_directories(root / "trials");
  fs::create_directories(root / "images");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  char buf[64];
  for (int k = 0; k < spec.num_classes; ++k) {
    const double f = synthetic_frequency_hz(k);
    for (int i = 0; i < spec.n_per_class; ++i) {
      EegTrial t;
      std::snprintf(buf, sizeof buf, "t%02d_%04d", k, i);
      t.trial_id = buf;
      std::snprintf(buf, sizeof buf, "img%02d_%04d", k, i);
      t.image_id = buf;
      t.subject = i % std::max(1, spec.subjects);
      t.class_label = k;
      t.channels = spec.channels;
      t.samples = spec.samples;
      t.data.resize(static_cast<std::size_t>(spec.channels) * spec.samples);
      for (int c = 0; c < spec.channels; ++c) {
        for (int s = 0; s < spec.samples; ++s) {
          double v = noise(rng);
          if (informative[c]) v += std::sin(2.0 * std::numbers::pi * f * s / spec.sampling_rate_hz);
          t.data[static_cast<std::size_t>(c) * spec.samples + s] = static_cast<float>(v);
        }
      }
      write_trial(root, t);
      const std::uint64_t icon_seed = spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(k) * 100003 + i;
      write_png(image_path(root, t.image_id), draw_class_icon(k, spec.image_size, icon_seed, t.image_id));
      m.trials.push_back({t.trial_id, t.subject, k, t.image_id});
    }
  }
  m = split_trials(m, spec.ratios, spec.seed);
  m.normalization = compute_train_stats(root, m);
  write_manifest(root, m);
  return m;
}

}  // namespace eegrecon
