#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "eegrecon/dataset.hpp"
#include "eegrecon/error.hpp"
#include "eegrecon/io.hpp"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"

using namespace eegrecon;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> tree_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = sha256_file(e.path());
  return out;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an eegrecon::Error");
  return Errc::IoError;
}

}  // namespace

TEST_CASE("synthetic generation is byte-deterministic under a seed") {
  testsupport::TempDir a("ds-a"), b("ds-b"), c("ds-c");
  SyntheticSpec spec;  // K=4 C=16 L=128 n=50 informative {0,1,14,15} seed 7
  generate_synthetic(spec, a.path());
  generate_synthetic(spec, b.path());
  const auto ha = tree_hashes(a.path());
  CHECK(ha.size() == 1 + 2 * 200);
  CHECK(ha == tree_hashes(b.path()));
  spec.seed = 8;
  generate_synthetic(spec, c.path());
  CHECK(ha != tree_hashes(c.path()));
}

TEST_CASE("informative channel outside the montage is rejected") {
  testsupport::TempDir d;
  SyntheticSpec spec;
  spec.informative_channels = {20};
  CHECK(code_of([&] { generate_synthetic(spec, d.path()); }) == Errc::InvalidChannelIndex);
  spec.informative_channels = {-1};
  CHECK(code_of([&] { generate_synthetic(spec, d.path()); }) == Errc::InvalidChannelIndex);
}

TEST_CASE("write then load reproduces float32 data bit-exactly") {
  testsupport::TempDir d;
  SyntheticSpec spec;
  spec.n_per_class = 6;
  spec.channels = 5;
  spec.samples = 40;
  spec.informative_channels = {1};
  generate_synthetic(spec, d.path());
  Dataset ds = load_dataset(d.path());

  EegTrial t = ds.load_trial(ds.manifest().trials[3].trial_id, false);
  t.trial_id = "roundtrip";
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = std::nextafter(static_cast<float>(i) * 1.7e-3f, 1e9f);
  write_trial(d.path(), t);
  const EegTrial back = read_trial(d.path(), {"roundtrip", 0, t.class_label, t.image_id}, t.channels, t.samples);
  REQUIRE(back.data.size() == t.data.size());
  CHECK(std::memcmp(back.data.data(), t.data.data(), t.data.size() * sizeof(float)) == 0);

  const auto img = ds.load_image(ds.manifest().trials[0].image_id);
  CHECK(img.height == 32);
  CHECK(img.width == 32);
}

TEST_CASE("normalisation uses train-split statistics") {
  testsupport::TempDir d;
  SyntheticSpec spec;
  spec.n_per_class = 20;
  spec.channels = 3;
  spec.samples = 64;
  spec.informative_channels = {0};
  generate_synthetic(spec, d.path());
  Dataset ds = load_dataset(d.path());
  REQUIRE(ds.manifest().normalization.has_value());
  double sum = 0.0, sq = 0.0, n = 0.0;
  for (const auto& t : ds.load_split("train", true))
    for (float v : t.row(2)) {
      sum += v;
      sq += double(v) * v;
      n += 1;
    }
  CHECK(std::abs(sum / n) < 1e-5);
  CHECK(std::abs(sq / n - 1.0) < 1e-4);
}

TEST_CASE("loader validation errors") {
  testsupport::TempDir d;
  CHECK(code_of([&] { load_dataset(d.path()); }) == Errc::MissingManifest);

  SyntheticSpec spec;
  spec.n_per_class = 3;
  spec.channels = 4;
  spec.samples = 16;
  spec.informative_channels = {0};
  const auto m = generate_synthetic(spec, d.path());

  SUBCASE("truncated trial binary") {
    const auto p = trial_path(d.path(), m.trials[0].trial_id);
    auto bytes = read_bytes(p);
    bytes.pop_back();
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    CHECK(code_of([&] { load_dataset(d.path()); }) == Errc::ShapeMismatch);
  }
  SUBCASE("split references an unknown trial") {
    auto bad = m;
    bad.splits.test.push_back("nope");
    write_manifest(d.path(), bad);
    CHECK(code_of([&] { load_dataset(d.path()); }) == Errc::UnknownTrialId);
  }
  SUBCASE("overlapping splits") {
    auto bad = m;
    bad.splits.val.push_back(bad.splits.train.front());
    write_manifest(d.path(), bad);
    CHECK(code_of([&] { load_dataset(d.path()); }) == Errc::ConfigValidationError);
  }
}

TEST_CASE("empty dataset is valid") {
  testsupport::TempDir d;
  DatasetManifest m;
  m.name = "empty";
  m.num_classes = 2;
  m.class_names = {"a", "b"};
  m.channels = 2;
  m.samples_per_trial = 8;
  m.sampling_rate_hz = 100;
  m.electrode_labels = {"Cz", "Pz"};
  fs::create_directories(d / "trials");
  fs::create_directories(d / "images");
  write_manifest(d.path(), m);
  const Dataset ds = load_dataset(d.path());
  CHECK(ds.manifest().trials.empty());
  CHECK(ds.load_split("train").empty());
}

TEST_CASE("full-size 40-class 128-channel export validates") {
  testsupport::TempDir d;
  SyntheticSpec spec;
  spec.num_classes = 40;
  spec.channels = 128;
  spec.samples = 8;
  spec.n_per_class = 50;
  spec.image_size = 8;
  spec.informative_channels = {120};
  generate_synthetic(spec, d.path());
  const Dataset ds = load_dataset(d.path());
  CHECK(ds.manifest().trials.size() == 2000);
  CHECK(ds.manifest().splits.train.size() == 1600);
  CHECK(ds.manifest().splits.val.size() == 200);
  CHECK(ds.manifest().splits.test.size() == 200);
}

TEST_CASE("stratified splits") {
  DatasetManifest m;
  m.num_classes = 3;
  const int sizes[3] = {50, 17, 9};
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < sizes[k]; ++i) m.trials.push_back({std::to_string(k) + "_" + std::to_string(i), 0, k, ""});

  auto count = [&](const std::vector<std::string>& ids, int k) {
    int n = 0;
    for (const auto& id : ids) n += m.trial(id).class_label == k;
    return n;
  };

  const auto s = split_trials(m, {}, 3);
  CHECK(count(s.splits.train, 0) == 40);
  CHECK(count(s.splits.val, 0) == 5);
  CHECK(count(s.splits.test, 0) == 5);

  for (SplitRatios r : {SplitRatios{0.8, 0.1, 0.1}, SplitRatios{0.7, 0.2, 0.1}, SplitRatios{1.0 / 3, 1.0 / 3, 1.0 / 3},
                        SplitRatios{0.55, 0.25, 0.2}}) {
    const auto out = split_trials(m, r, 11);
    CHECK(out.splits.train.size() + out.splits.val.size() + out.splits.test.size() == m.trials.size());
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(count(out.splits.train, k) - r.train * sizes[k]) <= 1.0);
      CHECK(std::abs(count(out.splits.val, k) - r.val * sizes[k]) <= 1.0);
      CHECK(std::abs(count(out.splits.test, k) - r.test * sizes[k]) <= 1.0);
    }
    CHECK(split_trials(m, r, 11).splits.train == out.splits.train);
  }

  const auto all_train = split_trials(m, {1.0, 0.0, 0.0}, 5);
  CHECK(all_train.splits.train.size() == m.trials.size());
  CHECK(all_train.splits.val.empty());
  CHECK(code_of([&] { split_trials(m, {0.5, 0.5, 0.1}, 1); }) == Errc::RatioSumError);
}

TEST_CASE("planted templates are linearly separable, pure noise is not") {
  testsupport::TempDir d, n;
  SyntheticSpec spec;
  generate_synthetic(spec, d.path());
  const Dataset ds = load_dataset(d.path());
  testsupport::CentroidOracle oracle{spec.informative_channels, {}};
  oracle.fit(ds.load_split("train"), spec.num_classes);
  const double acc = oracle.accuracy(ds.load_split("test"));
  MESSAGE("centroid oracle test accuracy " << acc);
  CHECK(acc >= 0.9);

  SyntheticSpec noise = spec;
  noise.informative_channels = {};
  noise.n_per_class = 250;
  generate_synthetic(noise, n.path());
  const Dataset dn = load_dataset(n.path());
  testsupport::CentroidOracle blind{{0, 1, 14, 15}, {}};
  blind.fit(dn.load_split("train"), noise.num_classes);
  CHECK(std::abs(blind.accuracy(dn.load_split("test")) - 0.25) <= 0.1);
}
