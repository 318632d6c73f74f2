#include <doctest.h>

#include <cmath>
#include <random>

#include "eegrecon/study_stats.hpp"
#include "support/expect.hpp"

using namespace eegrecon;
using testsupport::code_of;

namespace {

std::vector<PreferenceTrial> make(int n, int chosen, int channels = 128, int conf = 3) {
  std::vector<PreferenceTrial> out;
  for (int i = 0; i < n; ++i) out.push_back({"t" + std::to_string(i), channels, i < chosen, conf});
  return out;
}

// Standard normal upper tail by Simpson integration of the density, for the p-value oracle.
double upper_tail(double z) {
  const double hi = z + 12.0;
  const int steps = 20000;
  const double h = (hi - z) / steps;
  auto f = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  double s = f(z) + f(hi);
  for (int i = 1; i < steps; ++i) s += f(z + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("preference rates") {
  CHECK(preference_rate(make(4, 4)) == 1.0);
  CHECK(preference_rate(make(4, 3)) == 0.75);
  CHECK(weighted_preference_rate(make(4, 3)) == preference_rate(make(4, 3)));
  CHECK(weighted_preference_rate({{"a", 24, true, 5}, {"b", 24, false, 1}}) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(mean_confidence({{"a", 24, true, 5}, {"b", 24, false, 1}}) == 3.0);
  CHECK(code_of([] { preference_rate({}); }) == Errc::EmptyInput);
  CHECK(code_of([] { weighted_preference_rate({}); }) == Errc::EmptyInput);
  CHECK(code_of([] { weighted_preference_rate({{"a", 24, true, 6}}); }) == Errc::ConfigValidationError);

  // equal confidences, any level, any mix: weighted equals unweighted exactly
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int conf = 1 + static_cast<int>(rng() % 5);
    const int n = 1 + static_cast<int>(rng() % 97);
    auto t = make(n, static_cast<int>(rng() % (n + 1)), 64, conf);
    CHECK(weighted_preference_rate(t) == preference_rate(t));
  }
}

TEST_CASE("weighted rate is monotone in the confidence of chosen trials") {
  std::mt19937_64 rng(8);
  std::vector<PreferenceTrial> t;
  for (int i = 0; i < 40; ++i) t.push_back({"x", 32, rng() % 2 == 0, 1 + static_cast<int>(rng() % 5)});
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!t[i].chose_boosted || t[i].confidence == 5) continue;
    auto up = t;
    up[i].confidence++;
    CHECK(weighted_preference_rate(up) >= weighted_preference_rate(t));
  }
}

TEST_CASE("binomial normal approximation") {
  const auto half = binomial_test(make(20, 10));
  CHECK(half.z == 0.0);
  CHECK(half.p_value == 1.0);
  CHECK(code_of([] { binomial_test(make(5, 4)); }) == Errc::TooFewTrials);

  const double hand_z = (0.7834 - 0.5) / std::sqrt(0.25 / 554.0);
  const auto r = binomial_test(554, 0.7834);
  CHECK(std::abs(r.z - hand_z) < 1e-12);
  CHECK(std::abs(r.z - 13.341) < 1e-2);
  CHECK(std::round(r.z * 10.0) / 10.0 == 13.3);
  CHECK(r.p_value < 1e-6);

  for (double z : {0.5, 1.0, 1.96, 3.0}) {
    const int n = 400;
    const auto b = binomial_test(n, 0.5 + z * 0.5 / std::sqrt(n));
    CHECK(b.z == doctest::Approx(z).epsilon(1e-9));
    CHECK(b.p_value == doctest::Approx(2.0 * upper_tail(z)).epsilon(1e-9));
  }
}

TEST_CASE("stratified summary recombines") {
  std::mt19937_64 rng(13);
  std::vector<PreferenceTrial> t;
  const int chans[] = {24, 32, 64, 128};
  for (int i = 0; i < 554; ++i)
    t.push_back({"s" + std::to_string(i), chans[rng() % 4], rng() % 100 < 78, 1 + static_cast<int>(rng() % 5)});
  const auto s = summarize_study(t);
  REQUIRE(s.per_montage.size() == 4);
  double pooled = 0.0;
  int n = 0;
  for (const auto& [ch, g] : s.per_montage) {
    pooled += g.rate * g.n;
    n += g.n;
  }
  CHECK(n == 554);
  CHECK(std::abs(pooled / n - s.overall.rate) < 1e-12);
  const Json j = s.to_json();
  CHECK(j["per_montage"].contains("128"));
  CHECK(j["binomial"]["z"].get<double>() == doctest::Approx(s.binomial.z));
  CHECK(j["overall"]["n"] == 554);
}

TEST_CASE("preference CSV") {
  const std::string text =
      "participant,trial_id,age,channels,chose_boosted,confidence\n"
      "p1,\"a,1\",31,128,true,5\n"
      "p1,b,31,24,0,2\r\n"
      "\n"
      "p2,c,45,64,yes,4\n";
  const auto t = parse_preference_csv(text);
  REQUIRE(t.size() == 3);
  CHECK(t[0].trial_id == "a,1");
  CHECK(t[0].chose_boosted);
  CHECK_FALSE(t[1].chose_boosted);
  CHECK(t[1].confidence == 2);
  CHECK(t[2].channels == 64);
  CHECK(code_of([] { parse_preference_csv("trial_id,channels,chose_boosted\n"); }) == Errc::ConfigValidationError);
  CHECK(code_of([] { parse_preference_csv("trial_id,channels,chose_boosted,confidence\nx,16,1,3\n"); }) ==
        Errc::ConfigValidationError);
  CHECK(code_of([] { parse_preference_csv("trial_id,channels,chose_boosted,confidence\nx,24,maybe,3\n"); }) ==
        Errc::ConfigValidationError);
  CHECK(code_of([] { parse_preference_csv("trial_id,channels,chose_boosted,confidence\nx,24,1,0\n"); }) ==
        Errc::ConfigValidationError);
}
