#include <doctest.h>

#include <fstream>

#include "eegrecon/error.hpp"
#include "eegrecon/pipeline.hpp"
#include "support/expect.hpp"
#include "support/tmpdir.hpp"

using namespace eegrecon;
using testsupport::code_of;
using testsupport::TempDir;

namespace {

RunConfig tiny(const TempDir& dir, const std::string& run = "run") {
  RunConfig c;
  c.dataset = dir / "data";
  c.output = dir / run;
  c.synthetic.n_per_class = 20;
  c.synthetic.samples = 64;
  c.synthetic.image_size = 16;
  c.decoder.epochs = 4;
  c.decoder_hidden = 16;
  c.autoencoder.epochs = 2;
  c.backbone.steps = 20;
  c.controlnet.max_steps = 8;
  c.sample_steps = 4;
  c.max_trials = 4;
  c.samples_per_trial = 2;
  c.boost.steps = 8;
  c.classifier.epochs = 2;
  c.is_splits = 2;
  return c;
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("config round trip, strict keys, hash") {
  RunConfig c;
  c.gammas = {1.5, 3.0};
  c.boost.strength = 0.25;
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());

  Json j = c.to_json();
  j["montagez"] = {"std-24"};
  CHECK(code_of([&] { RunConfig::from_json(j); }) == Errc::ConfigValidationError);
  CHECK(code_of([] { RunConfig::from_json({{"decoder", {{"epoch", 3}}}}); }) == Errc::ConfigValidationError);
  CHECK(code_of([] { RunConfig::from_json({{"engine", {{"eeg_channels", 3}}}}); }) == Errc::ConfigValidationError);
  CHECK(code_of([] { RunConfig::from_json({{"gammas", "7.5"}}); }) == Errc::ConfigValidationError);

  RunConfig moved = c;
  moved.output = "/elsewhere";
  CHECK(moved.hash() == c.hash());
  moved.seed = 99;
  CHECK(moved.hash() != c.hash());

  RunConfig bad;
  bad.montages = {"std-17"};
  CHECK(code_of([&] { bad.validate(); }) == Errc::ConfigValidationError);
  bad = RunConfig{};
  bad.boost.strength = 1.5;
  CHECK(code_of([&] { bad.validate(); }) == Errc::ConfigValidationError);
  bad = RunConfig{};
  bad.gammas = {4.0, 4.0};
  CHECK(code_of([&] { bad.validate(); }) == Errc::ConfigValidationError);
}

TEST_CASE("derived seeds are stable and distinct") {
  CHECK(derive_seed(0, "sample:std-24", 3, 1) == derive_seed(0, "sample:std-24", 3, 1));
  CHECK(derive_seed(0, "sample:std-24", 3, 1) != derive_seed(0, "sample:std-24", 1, 3));
  CHECK(derive_seed(0, "sample:std-24") != derive_seed(0, "sample:std-32"));
  CHECK(derive_seed(0, "x") != derive_seed(1, "x"));
}

TEST_CASE("missing prerequisites exit 2 and name the path") {
  TempDir dir;
  const RunConfig c = tiny(dir);
  CHECK(run_command("generate", c) == 2);
  try {
    cmd_train_decoder(c);
    FAIL("expected MissingPrerequisite");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingPrerequisite);
    CHECK(std::string(e.what()).find((dir / "data" / "manifest.json").string()) != std::string::npos);
  }
  REQUIRE(run_command("prepare", c) == 0);
  try {
    cmd_generate(c);
    FAIL("expected MissingPrerequisite");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingPrerequisite);
    CHECK(std::string(e.what()).find(RunLayout{c.output}.decoder("std-128").string()) != std::string::npos);
  }
  RunConfig invalid = c;
  invalid.samples_per_trial = 0;
  CHECK(run_command("prepare", invalid) == 1);
  CHECK(run_command("frobnicate", c) == 1);
  RunConfig study = c;
  study.study_input = dir / "nope.csv";
  CHECK(run_command("study-stats", study) == 2);
}

TEST_CASE("lockfile blocks a live writer and a stale one is taken over") {
  TempDir dir;
  {
    OutputLock a(dir.path());
    CHECK(code_of([&] { OutputLock b(dir.path()); }) == Errc::ConfigValidationError);
  }
  CHECK(!std::filesystem::exists(dir / ".eegrecon.lock"));
  write_text(dir / ".eegrecon.lock", "999999999\n");
  { OutputLock c(dir.path()); }
  CHECK(!std::filesystem::exists(dir / ".eegrecon.lock"));
}

TEST_CASE("full grid, manifests and byte-identical rerun") {
  TempDir dir;
  const RunConfig a = tiny(dir, "a");
  run_pipeline(a);
  const RunLayout L{a.output};

  const auto rows = lines(L.reports() / "metrics.csv");
  REQUIRE(rows.size() == 17);
  int boosted = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const bool b = rows[i].find(",true,") != std::string::npos;
    boosted += b;
  }
  CHECK(boosted == 8);
  CHECK(lines(L.reports() / "gains.csv").size() == 9);
  CHECK(lines(L.reports() / "decoder_accuracy.csv").size() == 5);
  CHECK(lines(L.generated("std-24", 7.5) / "metadata.jsonl").size() == 8);

  for (const char* cmd : {"prepare", "train-decoder", "train-controlnet", "generate", "boost", "evaluate"}) {
    const Json m = Json::parse(read_text(L.manifest(cmd)));
    CHECK(m["config_hash"] == a.hash());
    CHECK(m["seeds"]["run"] == a.seed);
    for (const auto& o : m["outputs"]) CHECK(sha256_file(a.output / o["path"].get<std::string>()) == o["sha256"]);
  }
  const Json gen = Json::parse(read_text(L.manifest("generate")));
  CHECK(gen["outputs"].size() == 4 * 2 * (8 + 1));

  // rerun into a second directory on the same dataset
  RunConfig b = a;
  b.output = dir / "b";
  run_pipeline(b);
  CHECK(read_text(L.reports() / "metrics.csv") == read_text(RunLayout{b.output}.reports() / "metrics.csv"));
  CHECK(read_text(L.reports() / "gains.csv") == read_text(RunLayout{b.output}.reports() / "gains.csv"));
  CHECK(sha256_file(L.generated("std-32", 4.0) / "metadata.jsonl") ==
        sha256_file(RunLayout{b.output}.generated("std-32", 4.0) / "metadata.jsonl"));

  // downstream commands run after the grid
  RunConfig abl = a;
  abl.ablation_montage = "std-24";
  CHECK(run_command("ablate", abl) == 0);
  CHECK(std::filesystem::exists(L.ablation("std-24") / "summary.json"));
  CHECK(std::filesystem::exists(L.ablation("std-24") / "topomap_top1.png"));

  RunConfig st = a;
  st.study_input = dir / "prefs.csv";
  std::string csv = "trial_id,channels,chose_boosted,confidence\n";
  for (int i = 0; i < 20; ++i) csv += "t" + std::to_string(i) + ",24," + (i < 15 ? "1" : "0") + ",3\n";
  write_text(st.study_input, csv);
  CHECK(run_command("study-stats", st) == 0);
  const Json s = Json::parse(read_text(L.study() / "summary.json"));
  CHECK(s["overall"]["preference_rate"].get<double>() == 0.75);
  CHECK(s["overall"]["weighted_preference_rate"].get<double>() == 0.75);
}
